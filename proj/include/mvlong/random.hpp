#ifndef MVLONG_RANDOM_HPP
#define MVLONG_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace mvlong {

constexpr double log_two_pi = 1.8378770664093454835606594728112;

/// Random source used by every sampler component. One instance per chain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  /// Uniform on the open interval (0, 1); never returns 0.
  double uniform_open() {
    double u = 0.0;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }

  /// Gamma with shape a and rate b.
  double gamma(double shape, double rate) {
    if (!(shape > 0.0) || !(rate > 0.0))
      throw std::domain_error("gamma: shape and rate must be positive");
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }

  /// Inverse gamma with shape a and scale b (density proportional to x^{-a-1} exp(-b/x)).
  double inv_gamma(double shape, double scale) { return 1.0 / gamma(shape, scale); }

  double beta(double a, double b) {
    double x = gamma(a, 1.0);
    double y = gamma(b, 1.0);
    return x / (x + y);
  }

  double chi_squared(double df) { return gamma(0.5 * df, 0.5); }

  bool bernoulli(double prob) { return uniform() < prob; }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("index: empty range");
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  /// Draw from a discrete distribution given unnormalized log weights.
  std::size_t categorical_log(const std::vector<double>& log_weights) {
    double top = -std::numeric_limits<double>::infinity();
    for (double w : log_weights) top = std::max(top, w);
    if (!std::isfinite(top)) throw std::domain_error("categorical_log: no finite weight");
    std::vector<double> cumulative(log_weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < log_weights.size(); ++i) {
      total += std::exp(log_weights[i] - top);
      cumulative[i] = total;
    }
    double u = uniform() * total;
    for (std::size_t i = 0; i < cumulative.size(); ++i)
      if (u < cumulative[i]) return i;
    return cumulative.size() - 1;
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = normal();
    return z;
  }

  /// Random permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = static_cast<int>(index(static_cast<std::size_t>(i) + 1));
      std::swap(order[i], order[j]);
    }
    return order;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// log of the multivariate gamma function Gamma_p(a).
inline double log_multigamma(double a, int p) {
  double out = 0.25 * p * (p - 1) * std::log(M_PI);
  for (int j = 0; j < p; ++j) out += std::lgamma(a - 0.5 * j);
  return out;
}

/// Wishart draw W(df, scale) via the Bartlett decomposition.
inline Eigen::MatrixXd rwishart(Rng& rng, double df, const Eigen::MatrixXd& scale) {
  const Eigen::Index p = scale.rows();
  if (df <= p - 1) throw std::domain_error("rwishart: degrees of freedom too small");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw std::domain_error("rwishart: scale not positive definite");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(df - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  Eigen::MatrixXd la = llt.matrixL() * a;
  return la * la.transpose();
}

/// Inverse Wishart draw IW(df, psi) with mean psi / (df - p - 1).
inline Eigen::MatrixXd rinv_wishart(Rng& rng, double df, const Eigen::MatrixXd& psi) {
  const Eigen::Index p = psi.rows();
  Eigen::MatrixXd psi_inv = psi.llt().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd w = rwishart(rng, df, psi_inv);
  Eigen::MatrixXd out = w.llt().solve(Eigen::MatrixXd::Identity(p, p));
  return 0.5 * (out + out.transpose());
}

inline double inv_wishart_logpdf(const Eigen::MatrixXd& x, double df, const Eigen::MatrixXd& psi) {
  const int p = static_cast<int>(x.rows());
  Eigen::LLT<Eigen::MatrixXd> lx(x);
  Eigen::LLT<Eigen::MatrixXd> lp(psi);
  if (lx.info() != Eigen::Success || lp.info() != Eigen::Success)
    throw std::domain_error("inv_wishart_logpdf: matrix not positive definite");
  double logdet_x = 2.0 * lx.matrixLLT().diagonal().array().log().sum();
  double logdet_psi = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
  double trace = lx.solve(psi).trace();
  return 0.5 * df * logdet_psi - 0.5 * df * p * std::log(2.0) - log_multigamma(0.5 * df, p) -
         0.5 * (df + p + 1) * logdet_x - 0.5 * trace;
}

}  // namespace mvlong

#endif
