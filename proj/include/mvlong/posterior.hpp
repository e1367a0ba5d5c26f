#ifndef MVLONG_POSTERIOR_HPP
#define MVLONG_POSTERIOR_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "basis.hpp"
#include "covariance.hpp"
#include "data.hpp"
#include "model.hpp"
#include "sampler.hpp"
#include "state.hpp"

namespace mvlong {

/// Thinned output of one chain.
struct PosteriorSamples {
  int chain = 0;
  std::uint64_t seed = 0;
  std::vector<int> iterations;  // 1-based iteration numbers of the kept draws
  std::vector<ParameterState> draws;
  TuningState tuning;
  double seconds = 0.0;

  std::size_t size() const { return draws.size(); }
  bool empty() const { return draws.empty(); }
};

/// Covariance factors implied by a sampled state.
inline CovarianceFactors factors_of(const LongitudinalDataset& data, const ModelDesign& m, const ParameterState& st) {
  CovarianceFactors f;
  f.ar = autoregressive_from_coefficients(data, m.ar.matrix, st.psi);
  f.innovation.variances.resize(data.n_obs(), m.p);
  for (int k = 0; k < m.p; ++k)
    f.innovation.variances.col(k) =
        (std::log(st.sigma2(k)) + (m.variance.matrix * st.alpha.row(k).transpose()).array()).exp().matrix();
  f.innovation.correlations = st.R;
  return f;
}

/// Independent stream seed for chain c of a run seeded with seed.
inline std::uint64_t chain_seed(std::uint64_t seed, int chain) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(chain + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Positive-definiteness and consistency checks on a sampled state, including every reconstructed Sigma_i.
inline std::vector<std::string> check_sampled_state(const Sampler& sampler) {
  auto problems = check_state_invariants(sampler.state(), sampler.design());
  const auto& data = sampler.data();
  auto f = sampler.factors();
  for (int i = 0; i < data.n_subjects(); ++i) {
    try {
      if (!is_positive_definite(subject_sigma(data, f, i)))
        problems.push_back("Sigma for subject '" + data.id(i) + "' is not positive definite");
    } catch (const std::exception& ex) {
      problems.push_back("Sigma for subject '" + data.id(i) + "': " + ex.what());
    }
  }
  return problems;
}

inline PosteriorSamples run_chain(const LongitudinalDataset& data, const ModelDesign& design, ChainConfig config,
                                  int chain = 0,
                                  const std::function<void(int, const ParameterState&)>& observer = {}) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  PosteriorSamples out;
  out.chain = chain;
  out.seed = config.seed;
  Sampler sampler(data, design, config);
  for (int it = 0; it < config.iterations; ++it) {
    const bool kept_phase = it >= config.burn_in;
    sampler.set_adaptation(!kept_phase);
    sampler.set_after_burn_in(kept_phase);
    sampler.iterate();
    if (!kept_phase) continue;
    if (config.check_invariants) {
      auto problems = check_sampled_state(sampler);
      if (!problems.empty())
        throw numerical_error("iteration " + std::to_string(it + 1) + ": invariant violated: " + problems.front());
    }
    if ((it - config.burn_in + 1) % config.thin == 0) {
      out.iterations.push_back(it + 1);
      out.draws.push_back(sampler.state());
      if (observer) observer(it + 1, sampler.state());
    }
  }
  out.tuning = sampler.tuning();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ------------------------------------------------------------------ summaries

struct ValueSummary {
  std::size_t n = 0;
  double mean = 0.0, sd = 0.0;
  double q05 = 0.0, q10 = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0, q90 = 0.0, q95 = 0.0;
};

inline ValueSummary summarize_values(std::vector<double> values) {
  ValueSummary s;
  s.n = values.size();
  if (values.empty()) throw std::invalid_argument("summarize_values: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / values.size();
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = values.size() > 1 ? std::sqrt(ss / (values.size() - 1.0)) : 0.0;
  std::sort(values.begin(), values.end());
  s.q05 = quantile_sorted(values, 0.05);
  s.q10 = quantile_sorted(values, 0.10);
  s.q25 = quantile_sorted(values, 0.25);
  s.q50 = quantile_sorted(values, 0.50);
  s.q75 = quantile_sorted(values, 0.75);
  s.q90 = quantile_sorted(values, 0.90);
  s.q95 = quantile_sorted(values, 0.95);
  return s;
}

// -------------------------------------------------------------- column labels

inline std::vector<std::string> column_labels(const Design& design) {
  std::vector<std::string> out;
  if (design.intercept) out.push_back("intercept");
  for (const auto& t : design.terms) {
    if (t.kind == TermKind::parametric) {
      out.push_back(t.covariate);
    } else {
      for (int c = 0; c < t.width(); ++c) out.push_back(t.covariate + ":s" + std::to_string(c));
    }
  }
  return out;
}

// ------------------------------------------------------------------ sample CSVs

namespace detail {

class LongWriter {
 public:
  explicit LongWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out_ << "chain,iteration,parameter,index,selected,value\n";
  }
  void row(int chain, int iteration, const std::string& parameter, const std::string& index, int selected,
           double value) {
    out_ << chain << ',' << iteration << ',' << parameter << ',' << index << ',';
    if (selected >= 0) out_ << selected;
    out_ << ',' << format_double(value) << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace detail

/// One long-format CSV per parameter family.
inline void write_samples(const std::filesystem::path& dir, const LongitudinalDataset& data, const ModelDesign& m,
                          const std::vector<PosteriorSamples>& chains) {
  std::filesystem::create_directories(dir);
  const auto& rn = data.response_names();
  const auto mean_labels = column_labels(m.mean);
  const auto ar_labels = column_labels(m.ar);
  const auto var_labels = column_labels(m.variance);
  const auto cm_labels = column_labels(m.corr_mean);
  const auto cd_labels = column_labels(m.corr_dispersion);
  const int p = m.p;
  detail::LongWriter mean(dir / "mean.csv");
  detail::LongWriter ar(dir / "autoregressive.csv");
  detail::LongWriter var(dir / "variance.csv");
  detail::LongWriter scales(dir / "scales.csv");
  std::optional<detail::LongWriter> corr, center, disp, clus;
  if (m.has_correlation()) {
    corr.emplace(dir / "correlation.csv");
    center.emplace(dir / "correlation_center.csv");
    disp.emplace(dir / "correlation_dispersion.csv");
    if (m.variant != CorrelationVariant::common) clus.emplace(dir / "clustering.csv");
  }
  for (const auto& ch : chains) {
    for (std::size_t s = 0; s < ch.draws.size(); ++s) {
      const auto& st = ch.draws[s];
      const int c = ch.chain;
      const int it = ch.iterations[s];
      for (int k = 0; k < p; ++k)
        for (int col = 0; col < m.mean.n_columns(); ++col)
          mean.row(c, it, "beta", rn[k] + "/" + mean_labels[col], col == 0 ? 1 : (st.gamma[k][col - 1] ? 1 : 0),
                   st.beta(k, col));
      for (int lm = 0; lm < p * p; ++lm)
        for (int col = 0; col < m.ar.n_columns(); ++col)
          ar.row(c, it, "psi", rn[lm / p] + "/" + rn[lm % p] + "/" + ar_labels[col], st.xi[lm][col] ? 1 : 0,
                 st.psi(lm, col));
      for (int k = 0; k < p; ++k) {
        var.row(c, it, "sigma2", rn[k], -1, st.sigma2(k));
        for (int col = 0; col < m.variance.n_columns(); ++col)
          var.row(c, it, "alpha", rn[k] + "/" + var_labels[col], st.delta[k][col] ? 1 : 0, st.alpha(k, col));
      }
      scales.row(c, it, "c_beta", "", -1, st.c_beta);
      for (int k = 0; k < p; ++k) scales.row(c, it, "c_alpha", rn[k], -1, st.c_alpha(k));
      for (int lm = 0; lm < p * p; ++lm) scales.row(c, it, "c_psi", rn[lm / p] + "/" + rn[lm % p], -1, st.c_psi(lm));
      if (!m.has_correlation()) continue;
      scales.row(c, it, "c_eta", "", -1, st.c_eta);
      scales.row(c, it, "c_omega", "", -1, st.c_omega);
      const auto& times = data.time_registry();
      for (std::size_t t = 0; t < times.size(); ++t)
        for (int q = 0; q < m.d; ++q) {
          const auto [a, b] = m.pairs[q];
          std::string idx = "t=" + format_double(times[t]) + "/" + rn[a] + "/" + rn[b];
          corr->row(c, it, "R", idx, -1, st.R[t](a, b));
          corr->row(c, it, "theta", idx, -1, st.theta(static_cast<Eigen::Index>(t) * m.d + q));
        }
      for (int h = 0; h < m.n_clusters; ++h)
        for (int col = 0; col < m.corr_mean.n_columns(); ++col)
          center->row(c, it, "eta", "h" + std::to_string(h) + "/" + cm_labels[col],
                      col == 0 ? 1 : (st.nu[h][col - 1] ? 1 : 0), st.eta(h, col));
      disp->row(c, it, "sigma2_corr", "", -1, st.sigma2_corr);
      for (int col = 0; col < m.corr_dispersion.n_columns(); ++col)
        disp->row(c, it, "omega", cd_labels[col], st.varphi[col] ? 1 : 0, st.omega(col));
      if (clus) {
        for (std::size_t i = 0; i < st.labels.size(); ++i) {
          std::string idx = m.variant == CorrelationVariant::grouped_variables
                                ? rn[i]
                                : rn[m.pairs[i].first] + "/" + rn[m.pairs[i].second];
          clus->row(c, it, "label", idx, -1, st.labels[i]);
        }
        for (std::size_t h = 0; h < st.weights.size(); ++h)
          clus->row(c, it, "weight", "h" + std::to_string(h), -1, st.weights[h]);
        clus->row(c, it, "concentration", "", -1, st.concentration);
      }
    }
  }
}

// ------------------------------------------------------------------ curve grids

struct CurveRow {
  std::string submodel;
  std::string index;
  std::string term;
  double x = 0.0;
  ValueSummary summary;
};

namespace detail {

inline std::pair<double, double> term_range(const LongitudinalDataset& data, const std::string& covariate,
                                            RowDomain domain) {
  auto values = covariate_values(data, covariate, domain);
  if (values.empty()) return {0.0, 0.0};
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return {*lo, *hi};
}

inline std::vector<double> grid(double lo, double hi, int n) {
  std::vector<double> out(n);
  for (int g = 0; g < n; ++g) out[g] = n == 1 ? lo : lo + (hi - lo) * g / (n - 1.0);
  return out;
}

template <typename F>
void emit_curve(std::vector<CurveRow>& out, const std::vector<const ParameterState*>& draws, const std::string& submodel,
                const std::string& index, const std::string& term, const std::vector<double>& xs, F&& value) {
  for (double x : xs) {
    std::vector<double> v;
    v.reserve(draws.size());
    for (const auto* st : draws) v.push_back(value(*st, x));
    out.push_back({submodel, index, term, x, summarize_values(std::move(v))});
  }
}

}  // namespace detail

/// Posterior mean and equal-tailed bands of every fitted function on an evaluation grid.
inline std::vector<CurveRow> curve_grids(const LongitudinalDataset& data, const ModelDesign& m,
                                         const std::vector<PosteriorSamples>& chains, int points = 51) {
  std::vector<const ParameterState*> draws;
  for (const auto& ch : chains)
    for (const auto& d : ch.draws) draws.push_back(&d);
  std::vector<CurveRow> out;
  if (draws.empty()) return out;
  const auto& rn = data.response_names();
  const int p = m.p;
  auto term_curves = [&](const std::string& submodel, const Design& design, RowDomain domain, int rows,
                         const std::function<std::string(int)>& index_of,
                         const std::function<double(const ParameterState&, int, int)>& coef) {
    for (std::size_t l = 0; l < design.terms.size(); ++l) {
      const auto& term = design.terms[l];
      auto [lo, hi] = detail::term_range(data, term.covariate, domain);
      auto xs = detail::grid(lo, hi, points);
      const int start = design.term_start[l];
      for (int r = 0; r < rows; ++r)
        detail::emit_curve(out, draws, submodel, index_of(r), term.label(), xs, [&](const ParameterState& st, double x) {
          Eigen::VectorXd b = term.evaluate(x);
          double v = 0.0;
          for (Eigen::Index c = 0; c < b.size(); ++c) v += b(c) * coef(st, r, start + static_cast<int>(c));
          return v;
        });
    }
  };
  term_curves("mean", m.mean, RowDomain::observations, p, [&](int k) { return rn[k]; },
              [](const ParameterState& st, int k, int c) { return st.beta(k, c); });
  term_curves("variance", m.variance, RowDomain::observations, p, [&](int k) { return rn[k]; },
              [](const ParameterState& st, int k, int c) { return st.alpha(k, c); });
  // full autoregressive functions phi_lm(lag)
  {
    auto [lo, hi] = detail::term_range(data, "lag", RowDomain::lag_pairs);
    auto xs = detail::grid(0.0, std::max(hi, lo), points);
    for (int lm = 0; lm < p * p; ++lm)
      detail::emit_curve(out, draws, "autoregressive", rn[lm / p] + "/" + rn[lm % p], "phi", xs,
                         [&](const ParameterState& st, double x) {
                           std::vector<double> vals(m.ar.terms.size(), x);
                           return m.ar.row(vals).dot(st.psi.row(lm));
                         });
  }
  if (m.has_correlation()) {
    const auto& times = data.time_registry();
    auto xs = detail::grid(times.front(), times.back(), points);
    for (int h = 0; h < m.n_clusters; ++h)
      detail::emit_curve(out, draws, "correlation_center", "h" + std::to_string(h), "mu", xs,
                         [&](const ParameterState& st, double x) {
                           std::vector<double> vals(m.corr_mean.terms.size(), x);
                           return m.corr_mean.row(vals).dot(st.eta.row(h));
                         });
    detail::emit_curve(out, draws, "correlation_dispersion", "all", "log_sigma2", xs,
                       [&](const ParameterState& st, double x) {
                         std::vector<double> vals(m.corr_dispersion.terms.size(), x);
                         double v = std::log(st.sigma2_corr);
                         if (m.corr_dispersion.n_columns() > 0) v += m.corr_dispersion.row(vals).dot(st.omega);
                         return v;
                       });
  }
  return out;
}

inline void write_curves(const std::filesystem::path& path, const std::vector<CurveRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "submodel,index,term,x,mean,q05,q10,q90,q95\n";
  for (const auto& r : rows)
    out << r.submodel << ',' << r.index << ',' << r.term << ',' << format_double(r.x) << ','
        << format_double(r.summary.mean) << ',' << format_double(r.summary.q05) << ',' << format_double(r.summary.q10)
        << ',' << format_double(r.summary.q90) << ',' << format_double(r.summary.q95) << '\n';
}

// ---------------------------------------------------------- covariance profiles

/// A hypothetical subject: constant covariate values and visit times taken from the time registry.
struct CovariateProfile {
  std::string name;
  std::map<std::string, double> covariates;
  std::vector<double> times;
};

/// Sigma for the profile under one sampled state.
inline Eigen::MatrixXd profile_sigma(const LongitudinalDataset& data, const ModelDesign& m,
                                     const ParameterState& st, const CovariateProfile& profile) {
  const int p = m.p;
  const int n = static_cast<int>(profile.times.size());
  const auto& registry = data.time_registry();
  std::vector<int> tidx(n);
  for (int j = 0; j < n; ++j) {
    auto it = std::find(registry.begin(), registry.end(), profile.times[j]);
    if (it == registry.end())
      throw std::invalid_argument("profile '" + profile.name + "': time " + format_double(profile.times[j]) +
                                  " is not an observed time");
    tidx[j] = static_cast<int>(it - registry.begin());
    if (j > 0 && !(profile.times[j] > profile.times[j - 1]))
      throw std::invalid_argument("profile '" + profile.name + "': times must be strictly increasing");
  }
  auto value_of = [&](const std::string& cov, double t) {
    if (cov == "time") return t;
    auto it = profile.covariates.find(cov);
    if (it == profile.covariates.end())
      throw std::invalid_argument("profile '" + profile.name + "' does not set covariate '" + cov + "'");
    return it->second;
  };
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(n * p, n * p);
  for (int j = 1; j < n; ++j)
    for (int k = 0; k < j; ++k) {
      std::vector<double> vals(m.ar.terms.size(), profile.times[j] - profile.times[k]);
      Eigen::RowVectorXd z = m.ar.row(vals);
      for (int l = 0; l < p; ++l)
        for (int mm = 0; mm < p; ++mm) L(j * p + l, k * p + mm) = -z.dot(st.psi.row(l * p + mm));
    }
  std::vector<Eigen::MatrixXd> blocks;
  for (int j = 0; j < n; ++j) {
    std::vector<double> vals;
    for (const auto& term : m.variance.terms) vals.push_back(value_of(term.covariate, profile.times[j]));
    Eigen::VectorXd v(p);
    for (int k = 0; k < p; ++k) {
      double lv = std::log(st.sigma2(k));
      if (m.variance.n_columns() > 0) lv += m.variance.row(vals).dot(st.alpha.row(k));
      v(k) = std::exp(lv);
    }
    blocks.push_back(innovation_block(v, st.R[tidx[j]]));
  }
  return assemble_sigma(L, blocks);
}

inline void write_profile_summary(const std::filesystem::path& path, const LongitudinalDataset& data,
                                  const ModelDesign& m, const std::vector<PosteriorSamples>& chains,
                                  const CovariateProfile& profile) {
  std::vector<Eigen::MatrixXd> sig;
  for (const auto& ch : chains)
    for (const auto& st : ch.draws) sig.push_back(profile_sigma(data, m, st, profile));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "row,column,mean,sd,q05,q10,q90,q95,correlation_mean\n";
  if (sig.empty()) return;
  const Eigen::Index n = sig.front().rows();
  const auto& rn = data.response_names();
  auto label = [&](Eigen::Index r) {
    return rn[r % m.p] + "@" + format_double(profile.times[r / m.p]);
  };
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      std::vector<double> v, cor;
      for (const auto& s : sig) {
        v.push_back(s(a, b));
        cor.push_back(s(a, b) / std::sqrt(s(a, a) * s(b, b)));
      }
      auto sm = summarize_values(v);
      auto cm = summarize_values(cor);
      out << label(a) << ',' << label(b) << ',' << format_double(sm.mean) << ',' << format_double(sm.sd) << ','
          << format_double(sm.q05) << ',' << format_double(sm.q10) << ',' << format_double(sm.q90) << ','
          << format_double(sm.q95) << ',' << format_double(cm.mean) << '\n';
    }
}

}  // namespace mvlong

#endif
