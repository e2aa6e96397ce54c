#include "mlqmc/config.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mlqmc/errors.hpp"

namespace mlqmc {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

double parse_real(std::string_view v, int line, std::string_view key) {
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(x)) {
    throw ConfigError(line, std::string(key) + ": expected a finite real, got '" + std::string(v) + "'");
  }
  return x;
}

template <typename Int>
Int parse_int(std::string_view v, int line, std::string_view key) {
  Int x{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(line, std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
  }
  return x;
}

bool parse_bool(std::string_view v, int line, std::string_view key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(line, std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::string real_text(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F format) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format(v[i]);
  }
  return out;
}

const std::set<std::string_view> kRequired{"case", "field_id", "method"};

void fail_range(int line, const std::string& message) { throw ConfigError(line, message); }

}  // namespace

MaternParams field_parameters(int field_id) {
  switch (field_id) {
    case 1:
      return {0.5, 0.5, 1.0};
    case 2:
      return {0.5, 1.0, 1.0};
    case 3:
      return {1.0, 0.5, 1.0};
    case 4:
      return {1.0, 1.0, 1.0};
    default:
      throw ArgumentError("field_id must be in 1..4, got " + std::to_string(field_id));
  }
}

ProblemSpec problem_for(CaseId id) { return id == CaseId::CaseI ? case_one() : case_two(); }

StreamKind stream_for(Method method) {
  switch (method) {
    case Method::MLMC:
      return StreamKind::PseudoRandom;
    case Method::MLQMC_Lattice:
      return StreamKind::LatticeShifted;
    case Method::MLQMC_Sobol:
      return StreamKind::SobolScrambled;
  }
  return StreamKind::PseudoRandom;
}

std::string to_string(CaseId id) { return id == CaseId::CaseI ? "CaseI" : "CaseII"; }

std::string to_string(Method method) {
  switch (method) {
    case Method::MLMC:
      return "MLMC";
    case Method::MLQMC_Lattice:
      return "MLQMC_Lattice";
    case Method::MLQMC_Sobol:
      return "MLQMC_Sobol";
  }
  return "unknown";
}

std::string to_string(SolverMode mode) { return mode == SolverMode::Fmg ? "fmg" : "standalone"; }

void validate_config(const RunConfig& c) {
  if (c.field_id < 1 || c.field_id > 4) {
    fail_range(0, "field_id must be in 1..4, got " + std::to_string(c.field_id));
  }
  if (c.epsilon_list.empty()) fail_range(0, "epsilon needs at least one value");
  for (double e : c.epsilon_list) {
    if (!(e > 0.0) || !std::isfinite(e)) fail_range(0, "epsilon values must be positive");
  }
  if (c.max_level < 2 || c.max_level > 9) {
    fail_range(0, "max_level must be in 2..9, got " + std::to_string(c.max_level));
  }
  if (!(c.tau > 0.0) || c.tau > 1e-3) fail_range(0, "tau must be in (0, 1e-3]");
  if (c.randomizations < 2 || c.randomizations > 1024) fail_range(0, "randomizations must be in 2..1024");
  if (c.initial_samples < 2) fail_range(0, "initial_samples must be >= 2");
  if (!std::has_single_bit(c.initial_qmc_points) || c.initial_qmc_points > (1u << 20)) {
    fail_range(0, "initial_qmc_points must be a power of two <= 2^20");
  }
  for (int l : c.variance_test_levels) {
    if (l < 0 || l > c.max_level) fail_range(0, "variance_test_levels must lie in 0..max_level");
  }
  if (c.variance_test_n.size() < 3) fail_range(0, "variance_test_n needs at least 3 values");
  for (std::size_t i = 0; i < c.variance_test_n.size(); ++i) {
    const auto n = c.variance_test_n[i];
    if (!std::has_single_bit(n) || n > (1u << 20) || (i > 0 && n <= c.variance_test_n[i - 1])) {
      fail_range(0, "variance_test_n must be increasing powers of two <= 2^20");
    }
  }
}

RunConfig parse_config(std::string_view text) {
  RunConfig c;
  std::map<std::string, int, std::less<>> seen;
  int line_no = 0;
  auto ctx = [&](const std::string& key) { return seen.at(key); };
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view raw = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string_view line = trim(raw);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(line_no, "missing key");
    if (value.empty()) throw ConfigError(line_no, key + ": missing value");
    if (!seen.emplace(key, line_no).second) throw ConfigError(line_no, "duplicate key '" + key + "'");

    if (key == "case") {
      if (value == "CaseI") {
        c.case_id = CaseId::CaseI;
      } else if (value == "CaseII") {
        c.case_id = CaseId::CaseII;
      } else {
        throw ConfigError(line_no, "case must be CaseI or CaseII");
      }
    } else if (key == "field_id") {
      c.field_id = parse_int<int>(value, line_no, key);
      if (c.field_id < 1 || c.field_id > 4) {
        throw ConfigError(line_no, "field_id must be in 1..4, got " + std::string(value));
      }
    } else if (key == "method") {
      if (value == "MLMC") {
        c.method = Method::MLMC;
      } else if (value == "MLQMC_Lattice") {
        c.method = Method::MLQMC_Lattice;
      } else if (value == "MLQMC_Sobol") {
        c.method = Method::MLQMC_Sobol;
      } else {
        throw ConfigError(line_no, "method must be MLMC, MLQMC_Lattice or MLQMC_Sobol");
      }
    } else if (key == "epsilon") {
      c.epsilon_list.clear();
      for (auto item : split_list(value)) c.epsilon_list.push_back(parse_real(item, line_no, key));
    } else if (key == "seed") {
      c.seed = parse_int<std::uint64_t>(value, line_no, key);
    } else if (key == "max_level") {
      c.max_level = parse_int<int>(value, line_no, key);
    } else if (key == "tau") {
      c.tau = parse_real(value, line_no, key);
    } else if (key == "output_dir") {
      c.output_dir = std::string(value);
    } else if (key == "solver") {
      if (value == "fmg") {
        c.solver = SolverMode::Fmg;
      } else if (value == "standalone") {
        c.solver = SolverMode::Standalone;
      } else {
        throw ConfigError(line_no, "solver must be fmg or standalone");
      }
    } else if (key == "unit_coefficient") {
      c.unit_coefficient = parse_bool(value, line_no, key);
    } else if (key == "randomizations") {
      c.randomizations = parse_int<std::size_t>(value, line_no, key);
    } else if (key == "initial_samples") {
      c.initial_samples = parse_int<std::uint64_t>(value, line_no, key);
    } else if (key == "initial_qmc_points") {
      c.initial_qmc_points = parse_int<std::uint64_t>(value, line_no, key);
    } else if (key == "variance_test_levels") {
      c.variance_test_levels.clear();
      for (auto item : split_list(value)) c.variance_test_levels.push_back(parse_int<int>(item, line_no, key));
    } else if (key == "variance_test_n") {
      c.variance_test_n.clear();
      for (auto item : split_list(value)) {
        c.variance_test_n.push_back(parse_int<std::uint64_t>(item, line_no, key));
      }
    } else if (key == "kl_cache_dir") {
      c.kl_cache_dir = std::string(value);
    } else {
      throw ConfigError(line_no, "unknown key '" + key + "'");
    }
  }
  for (auto key : kRequired) {
    if (!seen.contains(key)) throw ConfigError(0, "missing required key '" + std::string(key) + "'");
  }
  try {
    validate_config(c);
  } catch (const ConfigError& e) {
    // Attribute range errors to the line of the key they concern.
    std::string msg = e.what();
    for (const auto& [key, line] : seen) {
      if (msg.rfind(key, 0) == 0) throw ConfigError(ctx(key), msg);
    }
    throw;
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot read config file " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream os;
  os << "case = " << to_string(c.case_id) << '\n'
     << "field_id = " << c.field_id << '\n'
     << "method = " << to_string(c.method) << '\n'
     << "epsilon = " << join(c.epsilon_list, real_text) << '\n'
     << "seed = " << c.seed << '\n'
     << "max_level = " << c.max_level << '\n'
     << "tau = " << real_text(c.tau) << '\n'
     << "output_dir = " << c.output_dir.string() << '\n'
     << "solver = " << to_string(c.solver) << '\n'
     << "unit_coefficient = " << (c.unit_coefficient ? "true" : "false") << '\n'
     << "randomizations = " << c.randomizations << '\n'
     << "initial_samples = " << c.initial_samples << '\n'
     << "initial_qmc_points = " << c.initial_qmc_points << '\n'
     << "variance_test_levels = " << join(c.variance_test_levels, [](int l) { return std::to_string(l); })
     << '\n'
     << "variance_test_n = "
     << join(c.variance_test_n, [](std::uint64_t n) { return std::to_string(n); }) << '\n';
  if (!c.kl_cache_dir.empty()) os << "kl_cache_dir = " << c.kl_cache_dir.string() << '\n';
  return os.str();
}

}  // namespace mlqmc
