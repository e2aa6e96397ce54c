// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mlqmc/config.hpp"
#include "mlqmc/estimators.hpp"
#include "mlqmc/experiment.hpp"
#include "mlqmc/fv.hpp"
#include "mlqmc/kl.hpp"
#include "mlqmc/matern.hpp"
#include "mlqmc/multigrid.hpp"
#include "mlqmc/pde_model.hpp"
#include "mlqmc/sampler.hpp"
#include "oracles/bessel_k1_table.hpp"
#include "support/test_support.hpp"

using namespace mlqmc;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

ProblemSpec all_dirichlet(double value) {
  ProblemSpec p = case_one();
  for (auto& bc : p.boundary) bc = {BoundaryKind::Dirichlet, value};
  return p;
}

double slope_of(const std::vector<double>& x, const std::vector<double>& y) { return fit_line(x, y).slope; }

std::vector<double> normals(std::size_t d, std::uint64_t seed, std::uint64_t index) {
  return pseudo_random_normals({StreamKind::PseudoRandom, d, seed, 0}, index);
}

Verdict discretization_order() {
  const double pi = std::numbers::pi;
  std::vector<double> levels, log_err;
  for (int l = 2; l <= 5; ++l) {
    const GridSpec g = grid_for_level(l);
    ProblemSpec p = all_dirichlet(0.0);
    p.source = [pi](double x, double y) { return 2 * pi * pi * std::sin(pi * x) * std::sin(pi * y); };
    MgOptions mg;
    mg.tau = 1e-12;
    const auto u = solve_level(constant_field(g, 1.0), p, mg).solution;
    double s = 0.0;
    for (int j = 0; j < g.cells_per_dim(); ++j)
      for (int i = 0; i < g.cells_per_dim(); ++i) {
        const double e = u[g.index(i, j)] - std::sin(pi * g.center(i)) * std::sin(pi * g.center(j));
        s += e * e;
      }
    levels.push_back(l);
    log_err.push_back(std::log2(std::sqrt(s) * g.cell_width()));
  }
  const double order = -slope_of(levels, log_err);
  return {std::abs(order - 2.0) <= 0.2, fmt("L2 error order %.4f over levels 2-5", order)};
}

Verdict analytic_values() {
  double flux_err = 0.0, const_err = 0.0;
  for (int l = 0; l <= 6; ++l) {
    const GridSpec g = grid_for_level(l);
    const auto unit = constant_field(g, 1.0);
    const auto u = solve_level(unit, case_two()).solution;
    flux_err = std::max(flux_err, std::abs(evaluate_qoi(u, unit, case_two()) - 100.0));
    const auto bases = testing::bases_for(1);
    const PdeLevelModel model(case_one(), bases);
    for (double c : {-3.5, 0.0, 42.0, 100.0}) {
      const ProblemSpec p = all_dirichlet(c);
      for (const auto& field : {unit, model.sample_field(l, normals(model.dimension(l), 3, l))}) {
        const auto v = solve_level(field, p).solution;
        const_err = std::max(const_err, std::abs(evaluate_qoi(v, field, p) - c));
      }
    }
  }
  return {flux_err <= 1e-6 && const_err <= 1e-8,
          fmt("max |flux - 100| = %.3g, max |u(0.5,0.5) - c| = %.3g over levels 0-6", flux_err, const_err)};
}

Verdict multigrid_contraction() {
  double lo = 1.0, hi = 0.0;
  std::string per_level;
  for (int l = 3; l <= 6; ++l) {
    const MgHierarchy h(constant_field(grid_for_level(l), 1.0), case_one());
    const auto& sys = h.system(l);
    std::vector<double> u(sys.grid.cell_count(), 0.0), r(u.size());
    sys.residual(u, sys.rhs, r);
    double prev = norm2(r), worst = 0.0;
    for (int k = 0; k < 8; ++k) {
      v_cycle(h, l, u, sys.rhs, 1, 1);
      sys.residual(u, sys.rhs, r);
      const double next = norm2(r);
      worst = std::max(worst, next / prev);
      prev = next;
    }
    lo = std::min(lo, worst);
    hi = std::max(hi, worst);
    per_level += fmt(" %.4f", worst);
  }
  return {hi <= 0.25 && hi - lo < 0.1, "worst factor per level 3-6:" + per_level + fmt(", spread %.4f", hi - lo)};
}

Verdict byproduct_correctness() {
  const MgOptions mg;
  double worst = 0.0;
  for (int id : {1, 4}) {
    const auto bases = testing::bases_for(id);
    for (const ProblemSpec& problem : {case_one(), case_two()}) {
      const PdeLevelModel model(problem, bases);
      for (int l = 2; l <= 4; ++l)
        for (int s = 0; s < 100; ++s) {
          const auto field = model.sample_field(l, normals(model.dimension(l), 40 + id, s));
          const auto r = fmg_solve(field, problem, mg);
          const auto coarse = coarsen_field(field);
          const double by = evaluate_qoi(r.coarse_solution, coarse, problem);
          const double alone = evaluate_qoi(solve_level(coarse, problem, mg).solution, coarse, problem);
          worst = std::max(worst, std::abs(by - alone));
        }
    }
  }
  return {worst <= 10 * mg.tau,
          fmt("max |byproduct - standalone| = %.3g (bound %.3g), fields 1 and 4, both cases", worst, 10 * mg.tau)};
}

Verdict work_saving() {
  bool pass = true;
  std::string detail = "FMG / (fine + coarse) per level:";
  for (int l = 3; l <= 5; ++l) {
    double fmg = 0.0, separate = 0.0;
    for (int id = 1; id <= 4; ++id) {
      const auto bases = testing::bases_for(id);
      const PdeLevelModel model(case_one(), bases);
      for (int s = 0; s < 10; ++s) {
        const auto xi = normals(model.dimension(l), 60 + id, s);
        fmg += model.solve_pair(l, xi, SolverMode::Fmg).cost;
        separate += model.solve_pair(l, xi, SolverMode::Standalone).cost;
      }
    }
    const double ratio = fmg / separate;
    pass = pass && std::abs(ratio - 0.8) <= 0.05;
    detail += fmt(" l=%g %.4f", l, ratio);
  }
  return {pass, detail};
}

Verdict consistency() {
  double cov_err = 0.0;
  for (int id = 1; id <= 4; ++id)
    for (int l = 1; l <= 3; ++l) {
      const GridSpec coarse = grid_for_level(l - 1);
      const auto a = weighted_covariance_matrix(cell_centers(coarse), coarse.cell_width() * coarse.cell_width(),
                                                field_parameters(id));
      const auto b = weighted_covariance_matrix(injected_points(coarse),
                                                coarse.cell_width() * coarse.cell_width(), field_parameters(id));
      for (std::size_t k = 0; k < a.size(); ++k) cov_err = std::max(cov_err, std::abs(a[k] - b[k]));
    }

  // Q_l^c from level-l samples against Q_{l-1}^f from independent level-(l-1) samples.
  const auto bases = testing::bases_for(4);
  const PdeLevelModel model(case_one(), bases);
  const int samples = 10000;
  double worst_z = 0.0;
  for (int l = 1; l <= 3; ++l) {
    Moments coarse_of_l, fine_of_prev;
    NormalStream a({StreamKind::PseudoRandom, model.dimension(l), 71, 0});
    NormalStream b({StreamKind::PseudoRandom, model.dimension(l - 1), 72, 0});
    std::vector<double> xa(model.dimension(l)), xb(model.dimension(l - 1));
    for (int s = 0; s < samples; ++s) {
      a.normals(s, xa);
      b.normals(s, xb);
      coarse_of_l.add(model.evaluate(l, xa).coarse);
      fine_of_prev.add(model.evaluate(l - 1, xb).fine);
    }
    const double se = std::sqrt((coarse_of_l.variance() + fine_of_prev.variance()) / samples);
    worst_z = std::max(worst_z, std::abs(coarse_of_l.mean() - fine_of_prev.mean()) / se);
  }
  return {cov_err <= 1e-12 && worst_z <= 4.0,
          fmt("max covariance difference %.3g, max |z| of coarse/fine means %.3f (levels 1-3)", cov_err, worst_z)};
}

Verdict matern() {
  double exp_err = 0.0;
  for (const MaternParams& p : {MaternParams{0.5, 0.5, 1.0}, MaternParams{0.5, 1.0, 1.0}, MaternParams{0.5, 0.3, 2.0}})
    for (int i = 0; i < 10000; ++i) {
      const double d = i * std::sqrt(2.0) / 9999.0;
      exp_err = std::max(exp_err, std::abs(matern_covariance(d, p) - p.variance * std::exp(-d / p.corr_length)));
    }
  // nu = 1 at unit variance: C(d) = z K1(z) with z = sqrt(2) d / lambda.
  double k1_err = 0.0;
  for (const auto& [z, k1] : oracles::kBesselK1Table) {
    const double expected = z * k1;
    k1_err = std::max(k1_err, std::abs(matern_covariance(z / std::sqrt(2.0), {1.0, 1.0, 1.0}) - expected) / expected);
  }
  k1_err = std::max(k1_err, std::abs(matern_covariance(1.0, {1.0, 1.0, 1.0}) - oracles::kMaternNu1UnitLag) /
                                oracles::kMaternNu1UnitLag);
  return {exp_err <= 1e-12 && k1_err <= 1e-9,
          fmt("nu=0.5 max abs error %.3g on 1e4 points, nu=1 max rel error %.3g", exp_err, k1_err)};
}

Verdict kl_energy() {
  bool pass = true;
  double trace_err = 0.0, min_ratio = 1.0;
  std::string terms;
  for (int id = 1; id <= 4; ++id) {
    const auto bases = testing::bases_for(id);
    terms += fmt(" f%g:", id);
    for (int l = 0; l <= 4; ++l) {
      const auto b = bases->basis(l);
      double kept = 0.0;
      for (std::size_t t = 0; t + 1 < b->n_terms; ++t) kept += b->eigenvalues[t];
      const bool minimal = kept < b->energy_target * b->total_energy();
      pass = pass && minimal && b->energy_ratio() >= 0.99;
      min_ratio = std::min(min_ratio, b->energy_ratio());
      // Trace of the weighted covariance operator is sigma^2 |D| = 1.
      trace_err = std::max(trace_err, std::abs(b->total_energy() - 1.0));
      terms += fmt("%g", static_cast<double>(b->n_terms)) + (l < 4 ? "," : "");
    }
  }
  pass = pass && trace_err <= 1e-10;
  return {pass, fmt("min energy ratio %.5f, max trace error %.3g, n_terms levels 0-4", min_ratio, trace_err) + terms};
}

Verdict mse_audit() {
  bool pass = true;
  std::string detail;
  const testing::ShiftModel model;
  for (double eps : {0.1, 0.05}) {
    double sq = 0.0;
    bool constraint = true;
    for (int run = 0; run < 100; ++run) {
      EstimatorOptions o;
      o.seed = 1000 + run;
      o.workers = 1;
      const auto r = mlmc_run(model, o, eps);
      sq += r.estimate * r.estimate;
      constraint = constraint && r.estimator_variance() <= eps * eps / 2;
    }
    const double mse = sq / 100;
    pass = pass && mse <= eps * eps && constraint;
    if (!detail.empty()) detail += "; ";
    detail += fmt("eps=%g: MSE/eps^2 %.4f, variance constraint ", eps, mse / (eps * eps)) +
              (constraint ? "held" : "violated");
  }
  return {pass, detail};
}

Verdict variance_decay() {
  const auto bases = testing::bases_for(4);
  const PdeLevelModel model(case_one(), bases);
  EstimatorOptions o;
  o.seed = 5;
  const std::vector<std::uint64_t> counts(5, 500);
  const auto records = fixed_sample_run(model, o, counts);
  bool decreasing = true;
  std::string v;
  for (std::size_t l = 0; l < records.size(); ++l) {
    v += fmt(" %.4g", records[l].variance_y());
    if (l >= 2) decreasing = decreasing && records[l].variance_y() < records[l - 1].variance_y();
  }
  const auto rates = estimate_rates(std::span<const LevelRecord>(records));
  return {decreasing && rates.beta > 0, "V_l levels 0-4:" + v + fmt(", beta %.4f", rates.beta)};
}

Verdict qmc_advantage() {
  const auto bases = testing::bases_for(4);
  const PdeLevelModel model(case_one(), bases);
  const std::uint64_t n = 256;
  EstimatorOptions sobol;
  sobol.seed = 8;
  sobol.stream = StreamKind::SobolScrambled;
  const std::vector<std::uint64_t> qmc_counts(4, n);
  const auto q = fixed_sample_run(model, sobol, qmc_counts);
  // MC sample variance from the same number of evaluations.
  EstimatorOptions mc;
  mc.seed = 8;
  const std::vector<std::uint64_t> mc_counts(4, n * sobol.randomizations);
  const auto m = fixed_sample_run(model, mc, mc_counts);
  bool every_level = true;
  std::string detail = "Var(N-point Sobol') / (V_MC/N) per level 0-3:";
  for (std::size_t l = 0; l < 4; ++l) {
    const double qmc_var = q[l].estimator_variance() * static_cast<double>(sobol.randomizations);
    const double mc_var = m[l].variance_y() / static_cast<double>(n);
    every_level = every_level && qmc_var <= mc_var;
    detail += fmt(" %.4f", qmc_var / mc_var);
  }

  std::vector<std::uint64_t> grid;
  for (int k = 4; k <= 10; ++k) grid.push_back(std::uint64_t{1} << k);
  EstimatorOptions smooth_qmc = sobol;
  smooth_qmc.seed = 17;
  EstimatorOptions smooth_mc;
  smooth_mc.seed = 17;
  smooth_mc.randomizations = 64;
  const testing::SmoothModel smooth;
  const double qmc_rate = qmc_variance_test(smooth, 1, grid, smooth_qmc).slope;
  const double mc_rate = qmc_variance_test(smooth, 1, grid, smooth_mc).slope;
  const bool rates_ok = qmc_rate < -1.0 && std::abs(mc_rate + 1.0) <= 0.15;
  return {every_level && rates_ok, detail + fmt("; smooth integrand rates: Sobol' %.3f, MC %.3f", qmc_rate, mc_rate)};
}

std::string slurp(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Verdict determinism() {
  const auto dir = testing::scratch_dir("acceptance_determinism");
  std::size_t files = 0, differing = 0;
  bool ok = true;
  for (Method method : {Method::MLMC, Method::MLQMC_Sobol, Method::MLQMC_Lattice}) {
    RunConfig c;
    c.case_id = method == Method::MLQMC_Lattice ? CaseId::CaseII : CaseId::CaseI;
    c.field_id = 4;
    c.method = method;
    c.epsilon_list = {0.5, 0.25};
    c.max_level = 4;
    c.seed = 99;
    c.variance_test_levels = {0, 1};
    c.variance_test_n = {16, 32, 64};
    c.kl_cache_dir = testing::kl_cache_dir();
    std::vector<ExperimentOutcome> outcomes;
    for (unsigned workers : {1u, 4u}) {
      c.output_dir = dir / (to_string(method) + "_" + std::to_string(workers));
      outcomes.push_back(run_experiment(c, workers));
      ok = ok && outcomes.back().exit_code == 0;
    }
    for (const auto& file : outcomes[0].artifacts) {
      if (file.extension() != ".csv") continue;
      ++files;
      if (slurp(file) != slurp(outcomes[1].output_dir / file.filename())) ++differing;
    }
  }
  fs::remove_all(dir);
  return {ok && files > 0 && differing == 0,
          fmt("%g CSV files compared between 1 and 4 workers, %g differ", static_cast<double>(files),
              static_cast<double>(differing))};
}

}  // namespace

int main(int, char** argv) {
  restart_with_working_blas(argv);
  struct Criterion {
    std::string name;
    std::function<Verdict()> check;
    /// Runtime limit in seconds; 0 for none.
    double limit;
  };
  const std::vector<Criterion> criteria{
      {"discretization order", discretization_order, 10},
      {"analytic flux and constant solution", analytic_values, 0},
      {"multigrid contraction", multigrid_contraction, 30},
      {"FMG coarse byproduct", byproduct_correctness, 120},
      {"FMG work saving", work_saving, 0},
      {"coarse/fine consistency", consistency, 0},
      {"Matern covariance", matern, 0},
      {"KL energy truncation", kl_energy, 0},
      {"MLMC mean squared error", mse_audit, 60},
      {"level variance decay", variance_decay, 300},
      {"QMC advantage", qmc_advantage, 0},
      {"determinism across workers", determinism, 0},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (criteria[i].limit > 0 && seconds >= criteria[i].limit) {
      v.pass = false;
      v.detail += fmt(", over the %g s limit", criteria[i].limit);
    }
    if (!v.pass) ++failures;
    std::printf("%s %2zu %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].name.c_str(),
                v.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
