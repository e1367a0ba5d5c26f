#ifndef MVLONG_SIMULATION_HPP
#define MVLONG_SIMULATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "covariance.hpp"
#include "data.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "posterior.hpp"
#include "random.hpp"

namespace mvlong {

/// Normal density N(x; mu, var).
inline double normal_density(double x, double mu, double var) {
  return std::exp(-0.5 * (x - mu) * (x - mu) / var) / std::sqrt(2.0 * M_PI * var);
}

/// Run task(i) for i in [0, n) on up to `threads` workers; results are placed by index so order is deterministic.
inline void parallel_for(int n, int threads, const std::function<void(int)>& task) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) task(i);
    return;
  }
  std::mutex mutex;
  int next = 0;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      while (true) {
        int i;
        {
          std::lock_guard<std::mutex> lock(mutex);
          if (next >= n || failure) return;
          i = next++;
        }
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Dataset with a subset of the responses.
inline LongitudinalDataset keep_responses(const LongitudinalDataset& data, const std::vector<int>& columns) {
  std::vector<std::string> names;
  for (int c : columns) names.push_back(data.response_names().at(c));
  std::vector<SubjectRecord> subs = data.subjects();
  for (auto& s : subs) {
    Eigen::MatrixXd y(s.responses.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) y.col(c) = s.responses.col(columns[c]);
    s.responses = y;
  }
  return LongitudinalDataset(subs, names, data.covariate_names());
}

// ------------------------------------------------------------------ study 1

/// Truth for the trivariate study with smooth autoregressive, variance and correlation functions.
struct Study1Truth {
  static constexpr int p = 3;
  std::vector<double> times{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> mu_ct{0.50, -0.50, 0.0, 0.50, 0.65, 0.55};

  /// phi_lm at lag u, l, m in {0, 1, 2}.
  static double phi(int l, int m, double u) {
    switch (l * 3 + m) {
      case 0: return 0.4 + 0.2 * u - 0.4 * u * u - 0.2 * u * u * u;
      case 1: return -0.2 + 0.2 * u;
      case 2: return -normal_density(u, 0.2, 0.025) / 7.0;
      case 3: return u < 0.21 ? -0.2 : 0.0;
      case 4: return normal_density(u, 0.2, 0.025) / 7.0;
      case 5: return 0.1 + (u < 0.61 ? 0.1 : 0.0);
      case 6: return 0.15 * std::sin(2.0 * M_PI * u);
      case 7: return (normal_density(u, 0.2, 0.025) - normal_density(u, 0.7, 0.1)) / 10.0;
      case 8: return (normal_density(u, 0.2, 0.003) + normal_density(u, 0.6, 0.05)) / 10.0;
    }
    throw std::out_of_range("Study1Truth::phi: index out of range");
  }

  static double innovation_variance(int k, double t) {
    switch (k) {
      case 0: return (normal_density(t, 0.0, 0.04) + normal_density(t, 0.6, 0.1)) / 2.0;
      case 1: return 0.8 + 0.5 * std::sin(2.0 * M_PI * t);
      case 2: return 0.6 - 0.5 * t;
    }
    throw std::out_of_range("Study1Truth::innovation_variance: index out of range");
  }

  Eigen::MatrixXd correlation(int t) const {
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(3, 3);
    r(0, 1) = r(1, 0) = mu_ct[t];
    r(0, 2) = r(2, 0) = mu_ct[t];
    return r;
  }

  std::vector<Eigen::MatrixXd> correlations() const {
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t t = 0; t < times.size(); ++t) out.push_back(correlation(static_cast<int>(t)));
    return out;
  }

  Eigen::MatrixXd L() const {
    const int M = static_cast<int>(times.size());
    Eigen::MatrixXd L = Eigen::MatrixXd::Identity(M * p, M * p);
    for (int j = 1; j < M; ++j)
      for (int k = 0; k < j; ++k)
        for (int l = 0; l < p; ++l)
          for (int m = 0; m < p; ++m) L(j * p + l, k * p + m) = -phi(l, m, times[j] - times[k]);
    return L;
  }

  std::vector<Eigen::MatrixXd> innovation_blocks() const {
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t t = 0; t < times.size(); ++t) {
      Eigen::VectorXd v(p);
      for (int k = 0; k < p; ++k) v(k) = innovation_variance(k, times[t]);
      out.push_back(innovation_block(v, correlation(static_cast<int>(t))));
    }
    return out;
  }

  Eigen::MatrixXd sigma() const {
    Eigen::MatrixXd s = assemble_sigma(L(), innovation_blocks());
    if (!is_positive_definite(s)) throw numerical_error("study 1 covariance is not positive definite");
    return s;
  }
};

inline LongitudinalDataset balanced_dataset(const Eigen::MatrixXd& y_stacked, const std::vector<double>& times, int p,
                                            const std::vector<bool>* keep = nullptr, int* dropped_subjects = nullptr) {
  const int M = static_cast<int>(times.size());
  std::vector<SubjectRecord> subs;
  std::vector<std::string> names;
  for (int k = 0; k < p; ++k) names.push_back("y" + std::to_string(k + 1));
  int dropped = 0;
  for (Eigen::Index i = 0; i < y_stacked.rows(); ++i) {
    SubjectRecord s;
    s.id = "s" + std::to_string(i + 1);
    std::vector<int> visits;
    for (int j = 0; j < M; ++j)
      if (!keep || (*keep)[i * M + j]) visits.push_back(j);
    if (visits.empty()) {
      ++dropped;
      continue;
    }
    s.responses.resize(static_cast<Eigen::Index>(visits.size()), p);
    s.covariates.resize(static_cast<Eigen::Index>(visits.size()), 0);
    for (std::size_t v = 0; v < visits.size(); ++v) {
      s.times.push_back(times[visits[v]]);
      for (int k = 0; k < p; ++k) s.responses(v, k) = y_stacked(i, visits[v] * p + k);
    }
    subs.push_back(std::move(s));
  }
  if (dropped_subjects) *dropped_subjects = dropped;
  if (subs.empty()) throw data_error("every subject lost all visits");
  return LongitudinalDataset(subs, names, {});
}

/// n zero-mean draws from the assembled 18 x 18 covariance, one balanced subject each.
inline LongitudinalDataset gen_study1(int n, std::uint64_t seed, const Study1Truth& truth = {}) {
  if (n < 1) throw std::invalid_argument("gen_study1: n must be at least 1");
  Eigen::MatrixXd sigma = truth.sigma();
  Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
  Rng rng(seed);
  Eigen::MatrixXd y(n, sigma.rows());
  for (int i = 0; i < n; ++i) y.row(i) = (chol * rng.normal_vector(sigma.rows())).transpose();
  return balanced_dataset(y, truth.times, Study1Truth::p);
}

/// Model specifications M1 (constant center), M2 (smooth center) and M3 (grouped variables, G = 2).
inline ModelSpec study1_spec(int model) {
  ModelSpec spec;
  spec.ar_terms = {{"lag", TermKind::smooth, 5}};
  spec.variance_terms = {{"time", TermKind::smooth, 5}};
  if (model == 2 || model == 3) spec.corr_mean_terms = {{"time", TermKind::smooth, 5}};
  if (model == 3) {
    spec.variant = CorrelationVariant::grouped_variables;
    spec.clusters = 2;
  }
  if (model < 1 || model > 3) throw std::invalid_argument("study1_spec: model must be 1, 2 or 3");
  return spec;
}

struct Study1Replicate {
  double D_R[3] = {0, 0, 0};
  double D_Sigma[3] = {0, 0, 0};
  double I_R(int d) const { return 100.0 * D_R[d - 1] / D_R[0]; }
  double I_Sigma(int d) const { return 100.0 * D_Sigma[d - 1] / D_Sigma[0]; }
};

/// Average losses of R_t (averaged over time) and of Sigma for one fitted chain against the truth.
inline std::pair<double, double> study1_losses(const LongitudinalDataset& data, const ModelDesign& m,
                                               const PosteriorSamples& chain, const Study1Truth& truth) {
  int complete = -1;
  for (int i = 0; i < data.n_subjects(); ++i)
    if (data.n_visits(i) == static_cast<int>(truth.times.size())) {
      complete = i;
      break;
    }
  if (complete < 0) throw std::invalid_argument("study1_losses: no subject observed at every time");
  std::vector<std::vector<Eigen::MatrixXd>> r_draws, s_draws;
  for (const auto& st : chain.draws) {
    r_draws.push_back(st.R);
    s_draws.push_back({subject_sigma(data, factors_of(data, m, st), complete)});
  }
  return {average_loss(r_draws, truth.correlations()), average_loss(s_draws, {truth.sigma()})};
}

/// Fit M1, M2 and M3 to one generated dataset.
inline Study1Replicate run_study1_replicate(int n, std::uint64_t seed, const ChainConfig& chain,
                                            const Study1Truth& truth = {}) {
  auto data = gen_study1(n, seed, truth);
  Study1Replicate out;
  for (int model = 1; model <= 3; ++model) {
    auto m = build_model_design(data, study1_spec(model));
    ChainConfig cfg = chain;
    cfg.seed = chain_seed(seed, model);
    auto samples = run_chain(data, m, cfg);
    auto [dr, ds] = study1_losses(data, m, samples, truth);
    out.D_R[model - 1] = dr;
    out.D_Sigma[model - 1] = ds;
  }
  return out;
}

// ------------------------------------------------------------------ study 2

struct Study2Truth {
  double beta10 = 0.0;
  double beta11 = 2.95;
  double rho1 = 0.5;
  double rho2 = 0.2;
  std::vector<double> times{-0.5, -0.3, -0.1, 0.1, 0.3, 0.5};

  Eigen::MatrixXd sigma1() const {
    const int M = static_cast<int>(times.size());
    Eigen::MatrixXd s(M, M);
    for (int a = 0; a < M; ++a)
      for (int b = 0; b < M; ++b) s(a, b) = std::pow(rho1, std::abs(a - b));
    return s;
  }
  Eigen::MatrixXd sigma23() const {
    Eigen::MatrixXd s = Eigen::MatrixXd::Constant(3, 3, rho2);
    s.diagonal().setOnes();
    return s;
  }
  /// Sigma_1 kron Sigma_23, rows ordered visit-major (j p + k).
  Eigen::MatrixXd sigma() const {
    Eigen::MatrixXd a = sigma1(), b = sigma23();
    Eigen::MatrixXd s(a.rows() * 3, a.cols() * 3);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) s.block(i * 3, j * 3, 3, 3) = a(i, j) * b;
    return s;
  }
  /// Same matrix built entry by entry: rho1^|j - j'| times (1 or rho2).
  Eigen::MatrixXd sigma_explicit() const {
    const int M = static_cast<int>(times.size());
    Eigen::MatrixXd s(3 * M, 3 * M);
    for (int j = 0; j < M; ++j)
      for (int k = 0; k < 3; ++k)
        for (int jj = 0; jj < M; ++jj)
          for (int kk = 0; kk < 3; ++kk)
            s(j * 3 + k, jj * 3 + kk) = std::pow(rho1, std::abs(j - jj)) * (k == kk ? 1.0 : rho2);
    return s;
  }
  double mean(double t) const { return beta10 + beta11 * t; }
};

/// n trivariate subjects with mean (beta10 + beta11 t, 0, 0), Kronecker covariance and MCAR visit deletion.
inline LongitudinalDataset gen_study2(int n, double rho2, double missing, std::uint64_t seed,
                                      int* dropped_subjects = nullptr) {
  if (n < 1) throw std::invalid_argument("gen_study2: n must be at least 1");
  if (!(missing >= 0.0 && missing < 1.0)) throw std::invalid_argument("gen_study2: missingness must lie in [0, 1)");
  Study2Truth truth;
  truth.rho2 = rho2;
  Eigen::MatrixXd sigma = truth.sigma();
  auto llt = checked_cholesky(sigma);
  if (!llt) throw std::invalid_argument("gen_study2: rho2 does not give a positive definite covariance");
  Eigen::MatrixXd chol = llt->matrixL();
  const int M = static_cast<int>(truth.times.size());
  Rng rng(seed);
  Eigen::MatrixXd y(n, 3 * M);
  for (int i = 0; i < n; ++i) {
    y.row(i) = (chol * rng.normal_vector(3 * M)).transpose();
    for (int j = 0; j < M; ++j) y(i, j * 3) += truth.mean(truth.times[j]);
  }
  // deletion uses its own stream so the responses do not depend on the missingness level
  Rng miss(chain_seed(seed, 7));
  std::vector<bool> keep(static_cast<std::size_t>(n) * M, true);
  for (auto&& k : keep) k = !(miss.uniform() < missing);
  return balanced_dataset(y, truth.times, 3, &keep, dropped_subjects);
}

/// (SST - SSE) / SSE for the first response, with the linear-in-time fit.
inline double realized_snr(const LongitudinalDataset& data) {
  const int N = data.n_obs();
  Eigen::MatrixXd X(N, 2);
  Eigen::VectorXd y = data.responses().col(0);
  for (int o = 0; o < N; ++o) X.row(o) << 1.0, data.time(o);
  Eigen::VectorXd b = X.colPivHouseholderQr().solve(y);
  double sse = (y - X * b).squaredNorm();
  double sst = (y.array() - y.mean()).square().sum();
  return (sst - sse) / sse;
}

/// Mean and time-slope model used in the gains study, with p responses.
inline ModelSpec study2_spec() {
  ModelSpec spec;
  spec.mean_terms = {{"time", TermKind::parametric, 0}};
  spec.ar_terms = {{"lag", TermKind::smooth, 5}};
  spec.variance_terms = {{"time", TermKind::smooth, 6}};
  return spec;
}

/// Sums over t of the two printed quantities: B = sum_s (mu_s - mean)^2 and V = (mean - truth)^2.
struct BiasVariance {
  double B = 0.0;
  double V = 0.0;
};

inline BiasVariance study2_bias_variance(const std::vector<std::vector<double>>& mu_draws,
                                         const std::vector<double>& truth) {
  BiasVariance out;
  if (mu_draws.empty()) throw std::invalid_argument("study2_bias_variance: no draws");
  const std::size_t T = truth.size();
  for (std::size_t t = 0; t < T; ++t) {
    double mean = 0.0;
    for (const auto& d : mu_draws) mean += d.at(t);
    mean /= static_cast<double>(mu_draws.size());
    for (const auto& d : mu_draws) out.B += (d[t] - mean) * (d[t] - mean);
    out.V += (mean - truth[t]) * (mean - truth[t]);
  }
  return out;
}

/// Draws of the first response's mean function at the given times.
inline std::vector<std::vector<double>> mean_function_draws(const ModelDesign& m, const PosteriorSamples& chain,
                                                            const std::vector<double>& times) {
  std::vector<std::vector<double>> out;
  for (const auto& st : chain.draws) {
    std::vector<double> mu;
    for (double t : times) {
      std::vector<double> vals(m.mean.terms.size(), t);
      mu.push_back(m.mean.row(vals).dot(st.beta.row(0)));
    }
    out.push_back(std::move(mu));
  }
  return out;
}

/// Fit the first `dims` responses of a study-2 dataset and return its bias/variance sums.
inline BiasVariance run_study2_fit(const LongitudinalDataset& data, int dims, double rho2, const ChainConfig& chain) {
  std::vector<int> cols;
  for (int k = 0; k < dims; ++k) cols.push_back(k);
  auto sub = dims == data.response_dim() ? data : keep_responses(data, cols);
  auto m = build_model_design(sub, study2_spec());
  auto samples = run_chain(sub, m, chain);
  Study2Truth truth;
  truth.rho2 = rho2;
  std::vector<double> mu_true;
  for (double t : truth.times) mu_true.push_back(truth.mean(t));
  return study2_bias_variance(mean_function_draws(m, samples, truth.times), mu_true);
}

// ------------------------------------------------------------ study drivers

/// Worker count from MVLONG_THREADS, defaulting to the hardware concurrency.
inline int thread_count_from_env() {
  if (const char* v = std::getenv("MVLONG_THREADS")) {
    int n = std::atoi(v);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline std::vector<Study1Replicate> run_study1(int n, int replicates, const ChainConfig& chain, std::uint64_t seed,
                                               int threads) {
  std::vector<Study1Replicate> out(static_cast<std::size_t>(replicates));
  parallel_for(replicates, threads, [&](int r) { out[r] = run_study1_replicate(n, chain_seed(seed, r), chain); });
  return out;
}

/// Ratio of summed losses over replicates, times 100.
inline double pooled_relative_risk(const std::vector<Study1Replicate>& reps, int model, bool sigma) {
  double num = 0.0, den = 0.0;
  for (const auto& r : reps) {
    num += sigma ? r.D_Sigma[model - 1] : r.D_R[model - 1];
    den += sigma ? r.D_Sigma[0] : r.D_R[0];
  }
  return 100.0 * num / den;
}

struct Study2Cell {
  int replicate = 0;
  double rho2 = 0.0;
  double missing = 0.0;
  int dims = 1;
  int dropped_subjects = 0;
  double snr = 0.0;
  BiasVariance bv;
};

/// Every (replicate, rho2, missingness, dimension) fit. A replicate shares its seed across rho2 and missingness
/// levels, so the first response is the same draw in every cell of that replicate.
inline std::vector<Study2Cell> run_study2(int n, int replicates, const std::vector<double>& rho2s,
                                          const std::vector<double>& missings, const std::vector<int>& dims,
                                          const ChainConfig& chain, std::uint64_t seed, int threads) {
  std::vector<Study2Cell> cells;
  for (int r = 0; r < replicates; ++r)
    for (double rho : rho2s)
      for (double miss : missings)
        for (int d : dims) {
          if (d < 1 || d > 3) throw std::invalid_argument("run_study2: dimensions must lie in 1..3");
          Study2Cell c;
          c.replicate = r;
          c.rho2 = rho;
          c.missing = miss;
          c.dims = d;
          cells.push_back(c);
        }
  parallel_for(static_cast<int>(cells.size()), threads, [&](int i) {
    auto& c = cells[i];
    const std::uint64_t data_seed = chain_seed(seed, c.replicate);
    auto data = gen_study2(n, c.rho2, c.missing, data_seed, &c.dropped_subjects);
    c.snr = realized_snr(data);
    ChainConfig cfg = chain;
    cfg.seed = chain_seed(data_seed, 100 + c.dims);
    c.bv = run_study2_fit(data, c.dims, c.rho2, cfg);
  });
  return cells;
}

inline const Study2Cell& find_cell(const std::vector<Study2Cell>& cells, int replicate, double rho2, double missing,
                                   int dims) {
  for (const auto& c : cells)
    if (c.replicate == replicate && c.rho2 == rho2 && c.missing == missing && c.dims == dims) return c;
  throw std::out_of_range("find_cell: no such study-2 cell");
}

/// 100 sum(metric of cell) / sum(metric of reference cell) over replicates. The metric is the spread B, or the
/// squared distance V of the chain mean from the truth when `distance` is set.
inline double pooled_ratio(const std::vector<Study2Cell>& cells, int replicates, double rho2, double missing, int dims,
                           double ref_missing, int ref_dims, bool distance) {
  double num = 0.0, den = 0.0;
  for (int r = 0; r < replicates; ++r) {
    const auto& a = find_cell(cells, r, rho2, missing, dims);
    const auto& b = find_cell(cells, r, rho2, ref_missing, ref_dims);
    num += distance ? a.bv.V : a.bv.B;
    den += distance ? b.bv.V : b.bv.B;
  }
  return 100.0 * num / den;
}

// ------------------------------------------------------- Paquid-shaped data

/// Synthetic cohort shaped like the four-response cognitive-ageing application: n subjects, 21 possible
/// times 0, 0.1, ..., 2, at most 9 visits each, binary x1 and x2 and a continuous entry age x3.
inline LongitudinalDataset gen_cohort(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_cohort: n must be at least 1");
  const int p = 4;
  const int n_times = 21;
  Rng rng(seed);
  std::vector<SubjectRecord> subs;
  Eigen::MatrixXd cross = Eigen::MatrixXd::Constant(p, p, 0.4);
  cross.diagonal().setOnes();
  cross(3, 0) = cross(0, 3) = cross(3, 1) = cross(1, 3) = cross(3, 2) = cross(2, 3) = -0.2;
  Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(cross).matrixL();
  for (int i = 0; i < n; ++i) {
    SubjectRecord s;
    s.id = "p" + std::to_string(i + 1);
    double x1 = rng.uniform() < 0.4 ? 1.0 : 0.0;
    double x2 = rng.uniform() < 0.3 ? 1.0 : 0.0;
    double x3 = rng.uniform() * 2.0;
    // follow-up: baseline plus a declining chance of each later visit
    std::vector<int> visits{0};
    double stay = 0.62;
    for (int t = 1; t < n_times && visits.size() < 9; ++t) {
      if (rng.uniform() < stay) visits.push_back(t);
      stay *= 0.87;
    }
    const int ni = static_cast<int>(visits.size());
    s.responses.resize(ni, p);
    s.covariates.resize(ni, 3);
    Eigen::VectorXd b = 0.7 * (chol * rng.normal_vector(p));
    Eigen::VectorXd prev = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < ni; ++j) {
      double t = visits[j] / 10.0;
      s.times.push_back(t);
      Eigen::VectorXd e = chol * rng.normal_vector(p) * std::sqrt(0.5 + 0.2 * x3);
      prev = 0.4 * prev + e;
      for (int k = 0; k < p; ++k)
        s.responses(j, k) = 0.3 * x1 - 0.2 * x2 - 0.5 * std::sin(x3 + k) - 0.4 * t * t + b(k) + prev(k);
      s.covariates.row(j) << x1, x2, x3;
    }
    subs.push_back(std::move(s));
  }
  return LongitudinalDataset(subs, {"y1", "y2", "y3", "y4"}, {"x1", "x2", "x3"});
}

}  // namespace mvlong

#endif
