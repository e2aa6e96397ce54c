#include "mlqmc/matern.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mlqmc/errors.hpp"

namespace mlqmc {

void MaternParams::validate() const {
  if (!(nu > 0.0) || !(corr_length > 0.0) || !(variance > 0.0) || !std::isfinite(nu) ||
      !std::isfinite(corr_length) || !std::isfinite(variance)) {
    throw ArgumentError("Matern parameters must be positive and finite");
  }
  if (nu != 0.5 && nu != 1.0) {
    throw UnsupportedError("Matern smoothness nu = " + std::to_string(nu) +
                           " is not supported (use 0.5 or 1)");
  }
}

namespace {

// Ascending series, accurate for 0 < x <= 2:
// K1(x) = 1/x + ln(x/2) I1(x) - (x/4) sum_k (psi(k+1) + psi(k+2)) (x^2/4)^k / (k! (k+1)!)
double bessel_k1_series(double x) {
  const double q = 0.25 * x * x;
  double term = 1.0;  // (x^2/4)^k / (k! (k+1)!)
  double psi_k1 = -std::numbers::egamma_v<double>;  // psi(k+1)
  double psi_k2 = psi_k1 + 1.0;                     // psi(k+2)
  double i1_sum = 0.0;
  double psi_sum = 0.0;
  for (int k = 0; k < 60; ++k) {
    i1_sum += term;
    psi_sum += (psi_k1 + psi_k2) * term;
    if (term < 1e-18 * i1_sum) break;
    term *= q / ((k + 1.0) * (k + 2.0));
    psi_k1 += 1.0 / (k + 1.0);
    psi_k2 += 1.0 / (k + 2.0);
  }
  const double i1 = 0.5 * x * i1_sum;
  return 1.0 / x + std::log(0.5 * x) * i1 - 0.25 * x * psi_sum;
}

// Steed's continued fraction for K0 and K1, valid for x >= 2.
double bessel_k1_continued_fraction(double x) {
  constexpr double a1 = 0.25;
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 1; i < 10000; ++i) {
    a -= 2 * i;
    c = -a * c / (i + 1.0);
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < 1e-17) break;
  }
  h *= a1;
  const double k0 = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) / s;
  return k0 * (x + 0.5 - h) / x;
}

}  // namespace

double bessel_k1(double x) {
  if (!(x > 0.0)) throw ArgumentError("bessel_k1 needs x > 0");
  return x <= 2.0 ? bessel_k1_series(x) : bessel_k1_continued_fraction(x);
}

double matern_covariance(double d, const MaternParams& params) {
  if (!(d >= 0.0)) throw ArgumentError("Matern covariance needs a non-negative distance");
  params.validate();
  if (d == 0.0) return params.variance;
  if (params.nu == 0.5) return params.variance * std::exp(-d / params.corr_length);

  // nu = 1: 2^0/Gamma(1) = 1, so C(d) = sigma^2 x K1(x) with x = sqrt(2) d / lambda.
  const double x = std::numbers::sqrt2 * d / params.corr_length;
  if (x < 1e-150) return params.variance;
  return params.variance * x * bessel_k1(x);
}

}  // namespace mlqmc
