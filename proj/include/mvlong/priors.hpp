#ifndef MVLONG_PRIORS_HPP
#define MVLONG_PRIORS_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "linalg.hpp"
#include "random.hpp"

namespace mvlong {

inline double log_beta_function(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

/// log density of IG(shape, scale) at x.
inline double inv_gamma_logpdf(double x, double shape, double scale) {
  if (!(x > 0.0)) throw std::domain_error("inv_gamma_logpdf: x must be positive");
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

inline double gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0)) throw std::domain_error("gamma_logpdf: x must be positive");
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

struct ScalePrior {
  enum class Kind { inverse_gamma, half_normal };
  Kind kind = Kind::inverse_gamma;
  double a = 1.1;     // IG shape
  double b = 1.1;     // IG scale
  double phi2 = 2.0;  // half-normal variance

  static ScalePrior inverse_gamma(double a, double b) {
    ScalePrior s;
    s.kind = Kind::inverse_gamma;
    s.a = a;
    s.b = b;
    return s;
  }
  static ScalePrior half_normal(double phi2) {
    ScalePrior s;
    s.kind = Kind::half_normal;
    s.phi2 = phi2;
    return s;
  }
  void validate(const std::string& name) const {
    if (kind == Kind::inverse_gamma && !(a > 0.0 && b > 0.0))
      throw std::invalid_argument(name + ": inverse gamma parameters must be positive");
    if (kind == Kind::half_normal && !(phi2 > 0.0))
      throw std::invalid_argument(name + ": half-normal variance must be positive");
  }
};

/// IG density on the squared scale, or half-normal density on the scale itself.
inline double scale_prior_logpdf(double x, const ScalePrior& spec) {
  if (!(x > 0.0)) throw std::domain_error("scale_prior_logpdf: x must be positive");
  if (spec.kind == ScalePrior::Kind::inverse_gamma) return inv_gamma_logpdf(x, spec.a, spec.b);
  return std::log(2.0) - 0.5 * std::log(2.0 * M_PI * spec.phi2) - 0.5 * x * x / spec.phi2;
}

/// Prior log density expressed on the variance v, whichever parametrization the prior uses.
inline double variance_prior_logpdf(double v, const ScalePrior& spec) {
  if (spec.kind == ScalePrior::Kind::inverse_gamma) return scale_prior_logpdf(v, spec);
  const double s = std::sqrt(v);
  return scale_prior_logpdf(s, spec) - std::log(2.0 * s);
}

inline double sample_variance_prior(Rng& rng, const ScalePrior& spec) {
  if (spec.kind == ScalePrior::Kind::inverse_gamma) return rng.inv_gamma(spec.a, spec.b);
  double s = std::abs(rng.normal()) * std::sqrt(spec.phi2);
  return s * s;
}

struct BetaParams {
  double c = 1.0;
  double d = 1.0;
};

struct GammaParams {
  double a = 5.0;
  double b = 2.0;
};

struct InvGammaParams {
  double a = 0.5;
  double b = 1.0;
};

/// All prior hyperparameters. Zero b values for c_beta/c_eta mean "use the data-dependent default".
struct HyperParams {
  InvGammaParams c_beta{0.5, 0.0};
  InvGammaParams c_eta{0.5, 0.0};
  BetaParams mean_indicators;
  BetaParams ar_indicators;
  BetaParams variance_indicators;
  BetaParams corr_mean_indicators;
  BetaParams corr_dispersion_indicators;
  ScalePrior c_alpha = ScalePrior::inverse_gamma(1.1, 1.1);
  ScalePrior c_omega = ScalePrior::inverse_gamma(1.1, 1.1);
  ScalePrior c_psi = ScalePrior::half_normal(2.0);
  ScalePrior sigma2_k = ScalePrior::half_normal(2.0);
  ScalePrior sigma2_corr = ScalePrior::half_normal(2.0);
  GammaParams concentration;

  /// Fill data-dependent defaults: b_beta = n p / 2, b_eta = M d / 2.
  HyperParams resolved(int n_subjects, int p, int n_times) const {
    HyperParams out = *this;
    const int d = p * (p - 1) / 2;
    if (out.c_beta.b <= 0.0) out.c_beta.b = 0.5 * n_subjects * p;
    if (out.c_eta.b <= 0.0) out.c_eta.b = 0.5 * std::max(1, n_times * d);
    return out;
  }

  void validate() const {
    auto pos = [](double x) { return x > 0.0; };
    if (!pos(c_beta.a) || !pos(c_eta.a)) throw std::invalid_argument("c_beta / c_eta shapes must be positive");
    for (const auto* bp : {&mean_indicators, &ar_indicators, &variance_indicators, &corr_mean_indicators,
                           &corr_dispersion_indicators})
      if (!pos(bp->c) || !pos(bp->d)) throw std::invalid_argument("indicator Beta parameters must be positive");
    c_alpha.validate("c_alpha");
    c_omega.validate("c_omega");
    c_psi.validate("c_psi");
    sigma2_k.validate("sigma2_k");
    sigma2_corr.validate("sigma2_corr");
    if (!pos(concentration.a) || !pos(concentration.b))
      throw std::invalid_argument("concentration Gamma parameters must be positive");
  }
};

/// log p(gamma_B | gamma_C) with the indicator probability integrated out under Beta(c, d).
inline double blocked_indicator_log_pmf(const std::vector<bool>& block, int complement_on, const BetaParams& beta, int q) {
  const int L = static_cast<int>(block.size());
  int on = complement_on;
  for (bool b : block) on += b ? 1 : 0;
  if (L + complement_on > q) throw std::invalid_argument("blocked_indicator_log_pmf: block and complement exceed q");
  return log_beta_function(beta.c + on, beta.d + q - on) -
         log_beta_function(beta.c + complement_on, beta.d + q - L - complement_on);
}

inline double blocked_indicator_proposal_pmf(const std::vector<bool>& block, int complement_on, const BetaParams& beta,
                                             int q) {
  return std::exp(blocked_indicator_log_pmf(block, complement_on, beta, q));
}

/// Draw a block of indicators from p(gamma_B | gamma_C) by sequential Polya-urn updates.
inline std::vector<bool> sample_indicator_block(Rng& rng, int block_size, int complement_on, const BetaParams& beta,
                                                int q) {
  std::vector<bool> out(block_size);
  int on = complement_on;
  int seen = q - block_size;
  for (int b = 0; b < block_size; ++b) {
    double prob = (beta.c + on) / (beta.c + beta.d + seen);
    out[b] = rng.bernoulli(prob);
    on += out[b] ? 1 : 0;
    ++seen;
  }
  return out;
}

/// Log prior of a full indicator vector with the Beta-distributed inclusion probability integrated out.
inline double indicator_log_prior(int on, int q, const BetaParams& beta) {
  return log_beta_function(beta.c + on, beta.d + q - on) - log_beta_function(beta.c, beta.d);
}

/// Random partition of members into consecutive blocks with sizes uniform on {1..min(5, remaining)}.
inline std::vector<std::vector<int>> random_blocks(Rng& rng, const std::vector<int>& members, int max_block = 5) {
  std::vector<std::vector<int>> out;
  auto order = rng.permutation(static_cast<int>(members.size()));
  std::size_t at = 0;
  while (at < order.size()) {
    int remaining = static_cast<int>(order.size() - at);
    int size = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(std::min(max_block, remaining))));
    std::vector<int> block;
    for (int s = 0; s < size; ++s) block.push_back(members[order[at + s]]);
    at += size;
    out.push_back(std::move(block));
  }
  return out;
}

/// log N(beta; 0, c (X'X)^{-1}).
inline double g_prior_logpdf(const Eigen::VectorXd& beta, double c, const Eigen::MatrixXd& xtx) {
  if (beta.size() != xtx.rows()) throw std::invalid_argument("g_prior_logpdf: dimension mismatch");
  if (beta.size() == 0) return 0.0;
  auto llt = checked_cholesky(xtx);
  if (!llt) throw numerical_error("g_prior_logpdf: singular Gram matrix");
  const double k = static_cast<double>(beta.size());
  return -0.5 * k * (log_two_pi + std::log(c)) + 0.5 * log_det(*llt) - 0.5 * beta.dot(xtx * beta) / c;
}

inline std::vector<double> stick_breaking(const std::vector<double>& v) {
  std::vector<double> w(v.size() + 1);
  double rest = 1.0;
  for (std::size_t h = 0; h < v.size(); ++h) {
    if (!(v[h] >= 0.0 && v[h] <= 1.0)) throw std::domain_error("stick_breaking: stick fractions must lie in [0, 1]");
    w[h] = v[h] * rest;
    rest *= 1.0 - v[h];
  }
  w[v.size()] = rest;
  return w;
}

/// v_h ~ Beta(1 + n_h, alpha + sum_{l > h} n_l), h = 1..H-1.
inline std::vector<double> sample_sticks(Rng& rng, const std::vector<int>& counts, double alpha) {
  const int H = static_cast<int>(counts.size());
  std::vector<double> v(std::max(0, H - 1));
  for (int h = 0; h + 1 < H; ++h) {
    int tail = 0;
    for (int l = h + 1; l < H; ++l) tail += counts[l];
    double draw = rng.beta(1.0 + counts[h], alpha + tail);
    v[h] = std::clamp(draw, 1e-300, 1.0 - 1e-16);
  }
  return v;
}

/// Mixture weight of the Gamma(a + k, b - log eta) component in the concentration update.
inline double escobar_west_weight(double eta, int k, int n, const GammaParams& prior) {
  double num = prior.a + k - 1.0;
  double den = num + n * (prior.b - std::log(eta));
  if (num <= 0.0) return 0.0;
  return num / den;
}

/// Auxiliary-variable update of the concentration given k occupied clusters among n items.
inline double escobar_west_update(Rng& rng, double alpha, int k, int n, const GammaParams& prior) {
  double eta = rng.beta(alpha + 1.0, static_cast<double>(n));
  eta = std::clamp(eta, 1e-300, 1.0);
  double pi = escobar_west_weight(eta, k, n, prior);
  double rate = prior.b - std::log(eta);
  if (rng.uniform() < pi) return rng.gamma(prior.a + k, rate);
  return rng.gamma(std::max(prior.a + k - 1.0, 1e-12), rate);
}

}  // namespace mvlong

#endif
