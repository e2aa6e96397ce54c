#pragma once

namespace mlqmc {

/// Matern covariance parameters: smoothness nu, correlation length lambda,
/// marginal variance sigma^2. Only nu = 0.5 and nu = 1 are supported.
struct MaternParams {
  double nu = 0.5;
  double corr_length = 1.0;
  double variance = 1.0;

  /// Throws ArgumentError for non-positive fields and UnsupportedError for
  /// other smoothness values.
  void validate() const;

  friend bool operator==(const MaternParams&, const MaternParams&) = default;
};

/// Modified Bessel function of the second kind, order one, for x > 0.
/// Relative error below 1e-13 over (0, 700].
double bessel_k1(double x);

/// C(d) = sigma^2 2^(1-nu)/Gamma(nu) (sqrt(2 nu) d / lambda)^nu K_nu(sqrt(2 nu) d / lambda).
double matern_covariance(double d, const MaternParams& params);

}  // namespace mlqmc
