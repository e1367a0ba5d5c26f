#ifndef MVLONG_BASIS_HPP
#define MVLONG_BASIS_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "data.hpp"

namespace mvlong {

/// Type-7 (linear interpolation) sample quantile of already sorted values.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (prob <= 0.0) return sorted.front();
  if (prob >= 1.0) return sorted.back();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double prob) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, prob);
}

struct KnotSet {
  std::vector<double> knots;
  bool degenerate = false;
  std::string warning;
};

/// Unique quantiles at probabilities k/(max_knots+1), k = 1..max_knots.
inline KnotSet quantile_knots(std::vector<double> values, int max_knots) {
  if (values.empty()) throw std::invalid_argument("quantile_knots: no values");
  if (max_knots < 1) throw std::invalid_argument("quantile_knots: max_knots must be at least 1");
  std::sort(values.begin(), values.end());
  KnotSet out;
  for (int k = 1; k <= max_knots; ++k) {
    double q = quantile_sorted(values, static_cast<double>(k) / (max_knots + 1));
    if (out.knots.empty() || q != out.knots.back()) out.knots.push_back(q);
  }
  if (values.front() == values.back()) {
    out.degenerate = true;
    out.warning = "covariate is constant; smooth term collapses to a single knot";
  }
  return out;
}

/// Thin-plate radial basis (u, |u - k_1|^2 log|u - k_1|^2, ...), zero at each knot.
inline Eigen::VectorXd radial_basis(double u, const std::vector<double>& knots) {
  Eigen::VectorXd out(knots.size() + 1);
  out(0) = u;
  for (std::size_t s = 0; s < knots.size(); ++s) {
    double r2 = (u - knots[s]) * (u - knots[s]);
    out(s + 1) = r2 > 0.0 ? r2 * std::log(r2) : 0.0;
  }
  return out;
}

enum class TermKind { parametric, smooth };

enum class RowDomain { observations, lag_pairs, time_registry };

/// Declarative term: a covariate column (or the reserved names "time" and "lag").
struct TermSpec {
  std::string covariate;
  TermKind kind = TermKind::parametric;
  int max_knots = 0;
};

/// A term after knot placement, with the column standardization fixed.
struct FittedTerm {
  std::string covariate;
  TermKind kind = TermKind::parametric;
  std::vector<double> knots;
  Eigen::VectorXd center;
  Eigen::VectorXd scale;

  int width() const { return kind == TermKind::parametric ? 1 : static_cast<int>(knots.size()) + 1; }

  Eigen::VectorXd raw(double u) const {
    if (kind == TermKind::parametric) return Eigen::VectorXd::Constant(1, u);
    return radial_basis(u, knots);
  }

  /// Standardized columns at covariate value u.
  Eigen::VectorXd evaluate(double u) const {
    return ((raw(u) - center).array() / scale.array()).matrix();
  }

  std::string label() const {
    return covariate + (kind == TermKind::smooth ? ":smooth" : ":linear");
  }
};

struct DesignBlock {
  Eigen::MatrixXd matrix;
  TermKind term_kind = TermKind::parametric;
  std::string label;
};

/// Design matrix for one submodel: optional leading intercept, then one column block per term.
struct Design {
  RowDomain domain = RowDomain::observations;
  bool intercept = true;
  int replication = 1;  // time-registry rows are repeated once per correlation pair
  std::vector<FittedTerm> terms;
  std::vector<DesignBlock> blocks;
  std::vector<int> term_start;  // first column of each term in matrix
  Eigen::MatrixXd matrix;       // full design over the domain rows
  Eigen::MatrixXd base;         // unreplicated rows (time-registry domain), else equals matrix

  int n_columns() const { return static_cast<int>(matrix.cols()); }
  int n_rows() const { return static_cast<int>(matrix.rows()); }
  int n_term_columns() const { return n_columns() - (intercept ? 1 : 0); }

  /// Row for the given term covariate values (one value per term).
  Eigen::RowVectorXd row(const std::vector<double>& values) const {
    if (values.size() != terms.size()) throw std::invalid_argument("Design::row: one value per term required");
    Eigen::RowVectorXd out(n_columns());
    if (intercept) out(0) = 1.0;
    for (std::size_t l = 0; l < terms.size(); ++l) {
      Eigen::VectorXd v = terms[l].evaluate(values[l]);
      out.segment(term_start[l], v.size()) = v.transpose();
    }
    return out;
  }
};

/// Lag-pair bookkeeping: pair (j, k), k < j, of subject i sits at row offset(i) + j(j-1)/2 + k.
struct LagPairIndex {
  std::vector<int> offsets;
  int size() const { return offsets.empty() ? 0 : offsets.back(); }
  int row(int subject, int j, int k) const { return offsets[subject] + j * (j - 1) / 2 + k; }

  explicit LagPairIndex(const LongitudinalDataset& data) {
    offsets.push_back(0);
    for (int i = 0; i < data.n_subjects(); ++i) {
      int ni = data.n_visits(i);
      offsets.push_back(offsets.back() + ni * (ni - 1) / 2);
    }
  }
  LagPairIndex() = default;
};

namespace detail {

inline std::vector<double> covariate_values(const LongitudinalDataset& data, const std::string& name,
                                            RowDomain domain) {
  std::vector<double> out;
  if (domain == RowDomain::time_registry) {
    if (name != "time")
      throw std::invalid_argument("unknown covariate '" + name + "' for the correlation models (only 'time' is allowed)");
    return data.time_registry();
  }
  if (domain == RowDomain::lag_pairs) {
    if (name != "lag")
      throw std::invalid_argument("unknown covariate '" + name + "' for the autoregressive model (only 'lag' is allowed)");
    for (int i = 0; i < data.n_subjects(); ++i) {
      const int off = data.offset(i);
      for (int j = 1; j < data.n_visits(i); ++j)
        for (int k = 0; k < j; ++k) out.push_back(data.time(off + j) - data.time(off + k));
    }
    return out;
  }
  if (name == "time") return data.times();
  const int col = data.covariate_column(name);
  if (col < 0) throw std::invalid_argument("unknown covariate '" + name + "'");
  out.resize(data.n_obs());
  for (int o = 0; o < data.n_obs(); ++o) out[o] = data.covariates()(o, col);
  return out;
}

}  // namespace detail

/// Build the design for a submodel over the given row domain.
///
/// Columns of every term are centered and scaled to unit sample standard
/// deviation over the domain's base rows; the intercept column is left as ones.
inline Design build_design(const LongitudinalDataset& data, const std::vector<TermSpec>& terms, RowDomain domain,
                           bool intercept = true, std::vector<std::string>* warnings = nullptr) {
  Design design;
  design.domain = domain;
  design.intercept = intercept;
  const int p = data.response_dim();
  design.replication = domain == RowDomain::time_registry ? p * (p - 1) / 2 : 1;

  std::vector<Eigen::MatrixXd> raw_blocks;
  int n_base = 0;
  for (const auto& spec : terms) {
    auto values = detail::covariate_values(data, spec.covariate, domain);
    n_base = static_cast<int>(values.size());
    FittedTerm term;
    term.covariate = spec.covariate;
    term.kind = spec.kind;
    if (spec.kind == TermKind::smooth) {
      if (spec.max_knots < 1) throw std::invalid_argument("smooth term '" + spec.covariate + "' needs at least one knot");
      auto ks = quantile_knots(values, spec.max_knots);
      term.knots = ks.knots;
      if (ks.degenerate && warnings) warnings->push_back(spec.covariate + ": " + ks.warning);
    }
    Eigen::MatrixXd block(values.size(), term.width());
    for (std::size_t r = 0; r < values.size(); ++r) block.row(r) = term.raw(values[r]).transpose();
    term.center = block.colwise().mean().transpose();
    term.scale.resize(block.cols());
    for (Eigen::Index c = 0; c < block.cols(); ++c) {
      double sd = block.rows() > 1
                      ? std::sqrt((block.col(c).array() - term.center(c)).square().sum() / (block.rows() - 1.0))
                      : 0.0;
      term.scale(c) = sd > 0.0 ? sd : 1.0;
      block.col(c) = (block.col(c).array() - term.center(c)) / term.scale(c);
    }
    design.terms.push_back(term);
    raw_blocks.push_back(block);
  }
  if (terms.empty()) {
    if (domain == RowDomain::observations) n_base = data.n_obs();
    else if (domain == RowDomain::lag_pairs) n_base = LagPairIndex(data).size();
    else n_base = data.n_times();
  }

  int cols = intercept ? 1 : 0;
  for (const auto& t : design.terms) {
    design.term_start.push_back(cols);
    cols += t.width();
  }
  design.base.resize(n_base, cols);
  if (intercept) design.base.col(0).setOnes();
  for (std::size_t l = 0; l < raw_blocks.size(); ++l)
    design.base.middleCols(design.term_start[l], raw_blocks[l].cols()) = raw_blocks[l];

  if (domain == RowDomain::time_registry) {
    const int d = design.replication;
    design.matrix.resize(static_cast<Eigen::Index>(n_base) * d, cols);
    for (int t = 0; t < n_base; ++t)
      for (int q = 0; q < d; ++q) design.matrix.row(t * d + q) = design.base.row(t);
  } else {
    design.matrix = design.base;
  }
  for (std::size_t l = 0; l < design.terms.size(); ++l) {
    DesignBlock b;
    b.matrix = design.matrix.middleCols(design.term_start[l], design.terms[l].width());
    b.term_kind = design.terms[l].kind;
    b.label = design.terms[l].label();
    design.blocks.push_back(std::move(b));
  }
  return design;
}

}  // namespace mvlong

#endif
