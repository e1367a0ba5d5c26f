#ifndef MVLONG_LINALG_HPP
#define MVLONG_LINALG_HPP

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "random.hpp"

namespace mvlong {

/// Raised when a numerical precondition (positive definiteness, full rank) fails.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr double min_cholesky_pivot = 1e-12;

/// Cholesky factor of a symmetric matrix, or nothing if any pivot falls below the threshold.
inline std::optional<Eigen::LLT<Eigen::MatrixXd>> checked_cholesky(const Eigen::MatrixXd& a,
                                                                   double min_pivot = min_cholesky_pivot) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double pivot = l(i, i) * l(i, i);
    if (!(pivot >= min_pivot) || !std::isfinite(pivot)) return std::nullopt;
  }
  return llt;
}

inline bool is_positive_definite(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) return false;
  return checked_cholesky(a).has_value();
}

inline double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Log density of N(mean, cov) at x.
inline double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  auto llt = checked_cholesky(cov);
  if (!llt) throw numerical_error("mvn_logpdf: covariance not positive definite");
  Eigen::VectorXd z = llt->matrixL().solve(x - mean);
  return -0.5 * (x.size() * log_two_pi + log_det(*llt) + z.squaredNorm());
}

/// Log density of N(mean, prec^{-1}) at x given the Cholesky factor of the precision.
inline double mvn_logpdf_precision(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                                   const Eigen::LLT<Eigen::MatrixXd>& prec) {
  Eigen::VectorXd z = prec.matrixU() * (x - mean);
  return -0.5 * (x.size() * log_two_pi - log_det(prec) + z.squaredNorm());
}

/// Draw from N(prec^{-1} b, prec^{-1}) given the Cholesky factor of the precision.
inline Eigen::VectorXd draw_canonical(Rng& rng, const Eigen::LLT<Eigen::MatrixXd>& prec, const Eigen::VectorXd& b,
                                      Eigen::VectorXd* mean_out = nullptr) {
  Eigen::VectorXd mean = prec.solve(b);
  Eigen::VectorXd z = rng.normal_vector(b.size());
  Eigen::VectorXd draw = mean + prec.matrixU().solve(z);
  if (mean_out) *mean_out = mean;
  return draw;
}

inline Eigen::MatrixXd select_square(const Eigen::MatrixXd& a, const std::vector<int>& idx) {
  Eigen::MatrixXd out(idx.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = a(idx[i], idx[j]);
  return out;
}

inline Eigen::MatrixXd select_block(const Eigen::MatrixXd& a, const std::vector<int>& rows, const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = a(rows[i], cols[j]);
  return out;
}

inline Eigen::VectorXd select_entries(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& a, const std::vector<int>& cols) {
  Eigen::MatrixXd out(a.rows(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = a.col(cols[j]);
  return out;
}

inline std::string join_indices(const std::vector<int>& idx) {
  std::string out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(idx[i]);
  }
  return out;
}

}  // namespace mvlong

#endif
