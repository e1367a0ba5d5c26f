#ifndef MVLONG_STATE_HPP
#define MVLONG_STATE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covariance.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "priors.hpp"

namespace mvlong {

/// Full MCMC state. Coefficient arrays are stored full length with exact zeros where the
/// corresponding indicator is off; intercepts of the mean and correlation-center models are always in.
struct ParameterState {
  // mean
  std::vector<std::vector<bool>> gamma;  // p x (mean columns - 1)
  Eigen::MatrixXd beta;                  // p x mean columns
  double c_beta = 1.0;
  // autoregressive coefficients; row l * p + m
  std::vector<std::vector<bool>> xi;  // p^2 x ar columns
  Eigen::MatrixXd psi;                // p^2 x ar columns
  Eigen::VectorXd c_psi;              // p^2
  // innovation variances
  std::vector<std::vector<bool>> delta;  // p x variance columns
  Eigen::MatrixXd alpha;                 // p x variance columns
  Eigen::VectorXd sigma2;                // p
  Eigen::VectorXd c_alpha;               // p
  // correlations
  std::vector<Eigen::MatrixXd> R;     // one per registry time
  Eigen::VectorXd theta;              // M d, entry t d + q
  std::vector<std::vector<bool>> nu;  // clusters x (corr-mean columns - 1)
  Eigen::MatrixXd eta;                // clusters x corr-mean columns
  std::vector<bool> varphi;           // dispersion columns
  Eigen::VectorXd omega;              // dispersion columns
  double sigma2_corr = 1.0;
  double c_eta = 1.0;
  double c_omega = 1.0;
  // clustering
  std::vector<int> labels;  // per pair (grouped correlations) or per variable (grouped variables)
  std::vector<double> sticks;
  std::vector<double> weights;
  double concentration = 2.5;
};

/// One adaptively tuned scalar (or a plain acceptance counter when not tunable).
struct TuningScalar {
  std::string name;
  double value = 1.0;
  double lower = 1e-12;
  double upper = 1e12;
  bool tunable = true;
  bool concentration = false;  // larger value means smaller moves
  long window_accepted = 0, window_proposed = 0;
  long total_accepted = 0, total_proposed = 0;
  long kept_accepted = 0, kept_proposed = 0;

  void record(bool accepted, bool after_burn_in) {
    ++window_proposed;
    ++total_proposed;
    if (accepted) {
      ++window_accepted;
      ++total_accepted;
    }
    if (after_burn_in) {
      ++kept_proposed;
      if (accepted) ++kept_accepted;
    }
  }
  double rate() const { return total_proposed ? static_cast<double>(total_accepted) / total_proposed : 0.0; }
  double kept_rate() const { return kept_proposed ? static_cast<double>(kept_accepted) / kept_proposed : 0.0; }
};

struct TuningState {
  std::vector<TuningScalar> scalars;
  int window_index = 0;
  long auto_rejected = 0;  // rank-deficient proposals

  int add(const std::string& name, double value, double lower, double upper, bool tunable = true,
          bool concentration = false) {
    TuningScalar s;
    s.name = name;
    s.value = value;
    s.lower = lower;
    s.upper = upper;
    s.tunable = tunable;
    s.concentration = concentration;
    scalars.push_back(s);
    return static_cast<int>(scalars.size()) - 1;
  }
  TuningScalar& operator[](int i) { return scalars[i]; }
  const TuningScalar& operator[](int i) const { return scalars[i]; }
  int find(const std::string& name) const {
    for (std::size_t i = 0; i < scalars.size(); ++i)
      if (scalars[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

/// Move each tuning scalar toward the 20-25% acceptance band and reset the window counters.
inline void adapt_tuning(TuningState& tuning, double lower_band = 0.20, double upper_band = 0.25) {
  ++tuning.window_index;
  const double step = 1.0 / std::sqrt(static_cast<double>(tuning.window_index));
  for (auto& s : tuning.scalars) {
    if (s.tunable && s.window_proposed > 0) {
      double rate = static_cast<double>(s.window_accepted) / s.window_proposed;
      double dir = 0.0;
      if (rate > upper_band) dir = 1.0;
      else if (rate < lower_band) dir = -1.0;
      if (s.concentration) dir = -dir;
      s.value = std::clamp(s.value * std::exp(dir * step), s.lower, s.upper);
    }
    s.window_accepted = 0;
    s.window_proposed = 0;
  }
}

struct ChainConfig {
  int iterations = 30000;
  int burn_in = 10000;
  int thin = 2;
  std::uint64_t seed = 1;
  int adapt_window = 100;
  bool adapt = true;
  bool check_invariants = false;
  double zeta_span = 500.0;  // zeta_t is adapted within [p + 2, p + zeta_span]

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
    if (burn_in < 0 || (iterations > 0 && burn_in >= iterations && burn_in != iterations))
      throw std::invalid_argument("burn-in must be smaller than the number of iterations");
    if (thin < 1) throw std::invalid_argument("thinning must be at least 1");
    if (adapt_window < 1) throw std::invalid_argument("adaptation window must be at least 1");
    if (!(zeta_span > 2.0)) throw std::invalid_argument("zeta span must exceed 2");
  }
};

inline std::vector<double> stick_weights_of(const ParameterState& s) { return stick_breaking(s.sticks); }

/// Every violated state invariant, described in words; empty when the state is consistent.
inline std::vector<std::string> check_state_invariants(const ParameterState& s, const ModelDesign& m) {
  std::vector<std::string> out;
  auto check_rows = [&](const std::vector<std::vector<bool>>& ind, const Eigen::MatrixXd& coef, int offset,
                        const std::string& name) {
    if (static_cast<Eigen::Index>(ind.size()) != coef.rows()) {
      out.push_back(name + ": indicator and coefficient row counts differ");
      return;
    }
    for (std::size_t r = 0; r < ind.size(); ++r) {
      if (static_cast<Eigen::Index>(ind[r].size()) + offset != coef.cols()) {
        out.push_back(name + ": indicator length does not match coefficient length");
        continue;
      }
      for (std::size_t c = 0; c < ind[r].size(); ++c)
        if (!ind[r][c] && coef(r, c + offset) != 0.0)
          out.push_back(name + ": unselected coefficient is nonzero at (" + std::to_string(r) + ", " +
                        std::to_string(c + offset) + ")");
    }
  };
  check_rows(s.gamma, s.beta, 1, "mean");
  check_rows(s.xi, s.psi, 0, "autoregressive");
  check_rows(s.delta, s.alpha, 0, "variance");
  for (int k = 0; k < s.sigma2.size(); ++k)
    if (!(s.sigma2(k) > 0.0)) out.push_back("variance: sigma2 not positive");
  if (m.has_correlation()) {
    check_rows(s.nu, s.eta, 1, "correlation center");
    if (static_cast<Eigen::Index>(s.varphi.size()) != s.omega.size())
      out.push_back("dispersion: indicator length does not match coefficient length");
    else
      for (std::size_t c = 0; c < s.varphi.size(); ++c)
        if (!s.varphi[c] && s.omega(c) != 0.0) out.push_back("dispersion: unselected coefficient is nonzero");
    for (std::size_t t = 0; t < s.R.size(); ++t) {
      const auto& r = s.R[t];
      bool unit = (r.diagonal().array() == 1.0).all();
      bool sym = (r - r.transpose()).cwiseAbs().maxCoeff() == 0.0;
      if (!unit || !sym || !is_positive_definite(r))
        out.push_back("R_t at time index " + std::to_string(t) + " is not a positive definite correlation matrix");
    }
    if (m.variant != CorrelationVariant::common) {
      double total = 0.0;
      for (double w : s.weights) total += w;
      if (std::abs(total - 1.0) > 1e-12) out.push_back("mixture weights do not sum to one");
      for (int lab : s.labels)
        if (lab < 0 || lab >= m.n_components) out.push_back("cluster label out of range");
    }
  }
  return out;
}

}  // namespace mvlong

#endif
