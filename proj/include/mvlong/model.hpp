#ifndef MVLONG_MODEL_HPP
#define MVLONG_MODEL_HPP

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "basis.hpp"
#include "covariance.hpp"
#include "data.hpp"
#include "priors.hpp"

namespace mvlong {

enum class CorrelationVariant { common, grouped_correlations, grouped_variables };

inline std::string to_string(CorrelationVariant v) {
  switch (v) {
    case CorrelationVariant::common: return "common";
    case CorrelationVariant::grouped_correlations: return "grouped_correlations";
    case CorrelationVariant::grouped_variables: return "grouped_variables";
  }
  return "common";
}

inline CorrelationVariant parse_variant(const std::string& s) {
  if (s == "common") return CorrelationVariant::common;
  if (s == "grouped_correlations") return CorrelationVariant::grouped_correlations;
  if (s == "grouped_variables") return CorrelationVariant::grouped_variables;
  throw std::invalid_argument("unknown correlation variant '" + s + "'");
}

/// Declarative description of the five submodels.
struct ModelSpec {
  std::vector<TermSpec> mean_terms;
  std::vector<TermSpec> ar_terms;  // covariate "lag"
  std::vector<TermSpec> variance_terms;
  std::vector<TermSpec> corr_mean_terms;        // covariate "time"
  std::vector<TermSpec> corr_dispersion_terms;  // covariate "time"
  CorrelationVariant variant = CorrelationVariant::common;
  int clusters = 0;  // H (grouped correlations) or G (grouped variables); 0 selects the default
  double tau2 = 1e-4;
  HyperParams hyper;
};

/// A group of design columns whose indicators are updated together (one model term).
struct Effect {
  std::string label;
  std::vector<int> columns;
};

struct ParameterCounts {
  int mean_total = 0, mean_selectable = 0;
  int ar_total = 0, ar_selectable = 0;
  int variance_total = 0, variance_selectable = 0;
  int corr_mean_total = 0, corr_mean_selectable = 0;
  int corr_dispersion_total = 0, corr_dispersion_selectable = 0;
};

/// Everything the sampler needs that depends only on the covariates and the spec.
struct ModelDesign {
  int p = 1;
  int d = 0;
  int n_subjects = 0;
  int n_obs = 0;
  int n_times = 0;
  CorrelationVariant variant = CorrelationVariant::common;
  int n_components = 1;  // mixture components: 1, H or G
  int n_clusters = 1;    // distinct correlation-center curves
  double tau2 = 1e-4;
  HyperParams hyper;

  Design mean;             // with intercept (forced in)
  Design ar;               // with intercept (selectable)
  Design variance;         // no intercept; sigma^2_k carries it
  Design corr_mean;        // with intercept (forced in)
  Design corr_dispersion;  // no intercept; sigma^2 carries it

  std::vector<Effect> mean_effects;  // columns of mean.matrix (intercept excluded)
  std::vector<Effect> ar_effects;
  std::vector<Effect> variance_effects;
  std::vector<Effect> corr_mean_effects;
  std::vector<Effect> corr_dispersion_effects;

  std::vector<std::pair<int, int>> pairs;
  LagPairIndex lag_pairs;
  std::vector<std::string> warnings;

  bool has_correlation() const { return p > 1; }
  int n_items() const {
    return variant == CorrelationVariant::grouped_variables ? p : d;
  }

  ParameterCounts counts() const {
    ParameterCounts c;
    c.mean_total = p * mean.n_columns();
    c.mean_selectable = p * (mean.n_columns() - 1);
    c.ar_total = p * p * ar.n_columns();
    c.ar_selectable = c.ar_total;
    c.variance_total = p * (1 + variance.n_columns());
    c.variance_selectable = p * variance.n_columns();
    if (has_correlation()) {
      c.corr_mean_total = n_clusters * corr_mean.n_columns();
      c.corr_mean_selectable = n_clusters * (corr_mean.n_columns() - 1);
      c.corr_dispersion_total = 1 + corr_dispersion.n_columns();
      c.corr_dispersion_selectable = corr_dispersion.n_columns();
    }
    return c;
  }

  /// Index of the unordered group pair (a, b) among G(G+1)/2.
  int group_pair_cluster(int a, int b) const {
    if (a > b) std::swap(a, b);
    const int G = n_components;
    return a * G - a * (a - 1) / 2 + (b - a);
  }

  /// Correlation-center cluster of correlation pair q under the given labels.
  int cluster_of_pair(const std::vector<int>& labels, int q) const {
    switch (variant) {
      case CorrelationVariant::common: return 0;
      case CorrelationVariant::grouped_correlations: return labels[q];
      case CorrelationVariant::grouped_variables:
        return group_pair_cluster(labels[pairs[q].first], labels[pairs[q].second]);
    }
    return 0;
  }

  /// Cluster of every theta entry (row t d + q).
  std::vector<int> row_clusters(const std::vector<int>& labels) const {
    std::vector<int> out(static_cast<std::size_t>(n_times) * d);
    for (int t = 0; t < n_times; ++t)
      for (int q = 0; q < d; ++q) out[t * d + q] = cluster_of_pair(labels, q);
    return out;
  }
};

namespace detail {
inline std::vector<Effect> effects_of(const Design& design, bool include_intercept_effect) {
  std::vector<Effect> out;
  if (design.intercept && include_intercept_effect) out.push_back({"intercept", {0}});
  for (std::size_t l = 0; l < design.terms.size(); ++l) {
    Effect e;
    e.label = design.terms[l].label();
    for (int c = 0; c < design.terms[l].width(); ++c) e.columns.push_back(design.term_start[l] + c);
    out.push_back(std::move(e));
  }
  return out;
}
}  // namespace detail

inline ModelDesign build_model_design(const LongitudinalDataset& data, const ModelSpec& spec) {
  ModelDesign m;
  m.p = data.response_dim();
  m.d = m.p * (m.p - 1) / 2;
  m.n_subjects = data.n_subjects();
  m.n_obs = data.n_obs();
  m.n_times = data.n_times();
  m.variant = spec.variant;
  if (!(spec.tau2 > 0.0)) throw std::invalid_argument("tau2 must be positive");
  m.tau2 = spec.tau2;
  m.hyper = spec.hyper.resolved(data.n_subjects(), m.p, data.n_times());
  m.hyper.validate();
  m.pairs = correlation_pairs(m.p);
  m.lag_pairs = LagPairIndex(data);

  m.mean = build_design(data, spec.mean_terms, RowDomain::observations, true, &m.warnings);
  m.ar = build_design(data, spec.ar_terms, RowDomain::lag_pairs, true, &m.warnings);
  m.variance = build_design(data, spec.variance_terms, RowDomain::observations, false, &m.warnings);
  m.corr_mean = build_design(data, spec.corr_mean_terms, RowDomain::time_registry, true, &m.warnings);
  m.corr_dispersion = build_design(data, spec.corr_dispersion_terms, RowDomain::time_registry, false, &m.warnings);

  m.mean_effects = detail::effects_of(m.mean, false);
  m.ar_effects = detail::effects_of(m.ar, true);
  m.variance_effects = detail::effects_of(m.variance, false);
  m.corr_mean_effects = detail::effects_of(m.corr_mean, false);
  m.corr_dispersion_effects = detail::effects_of(m.corr_dispersion, false);

  if (spec.variant == CorrelationVariant::common) {
    m.n_components = 1;
    m.n_clusters = 1;
  } else if (spec.variant == CorrelationVariant::grouped_correlations) {
    m.n_components = spec.clusters > 0 ? spec.clusters : std::max(1, m.d);
    m.n_clusters = m.n_components;
  } else {
    m.n_components = spec.clusters > 0 ? spec.clusters : m.p;
    m.n_clusters = m.n_components * (m.n_components + 1) / 2;
  }
  if (!m.has_correlation()) {
    m.n_components = 1;
    m.n_clusters = 1;
  }
  return m;
}

}  // namespace mvlong

#endif
