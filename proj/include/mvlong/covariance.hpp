#ifndef MVLONG_COVARIANCE_HPP
#define MVLONG_COVARIANCE_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "basis.hpp"
#include "data.hpp"
#include "linalg.hpp"

namespace mvlong {

inline double fisher_z(double r) {
  if (!(std::abs(r) < 1.0)) throw std::domain_error("fisher_z: |r| must be below 1");
  return 0.5 * std::log((1.0 + r) / (1.0 - r));
}

inline double inv_fisher_z(double z) { return std::tanh(z); }

inline double jacobian_fisher(double r) {
  if (!(std::abs(r) < 1.0)) throw std::domain_error("jacobian_fisher: |r| must be below 1");
  return 1.0 / ((1.0 - r) * (1.0 + r));
}

/// Correlation pairs (k, l), k < l, in lexicographic order.
inline std::vector<std::pair<int, int>> correlation_pairs(int p) {
  std::vector<std::pair<int, int>> out;
  for (int k = 0; k < p; ++k)
    for (int l = k + 1; l < p; ++l) out.emplace_back(k, l);
  return out;
}

/// Generalized autoregressive matrices, one p x p block per within-subject lag pair.
struct AutoregressiveBlocks {
  int p = 1;
  LagPairIndex pairs;
  std::vector<Eigen::MatrixXd> phi;

  AutoregressiveBlocks() = default;
  AutoregressiveBlocks(const LongitudinalDataset& data)
      : p(data.response_dim()), pairs(data), phi(pairs.size(), Eigen::MatrixXd::Zero(p, p)) {}

  const Eigen::MatrixXd& at(int subject, int j, int k) const {
    if (k >= j) throw std::out_of_range("autoregressive block requires k < j");
    return phi.at(pairs.row(subject, j, k));
  }
  Eigen::MatrixXd& at(int subject, int j, int k) {
    if (k >= j) throw std::out_of_range("autoregressive block requires k < j");
    return phi.at(pairs.row(subject, j, k));
  }
};

/// Blocks with entries phi_lm = z_row . psi.row(l * p + m).
inline AutoregressiveBlocks autoregressive_from_coefficients(const LongitudinalDataset& data,
                                                             const Eigen::MatrixXd& lag_design,
                                                             const Eigen::MatrixXd& psi) {
  AutoregressiveBlocks ar(data);
  const int p = data.response_dim();
  if (lag_design.rows() != ar.pairs.size() || psi.rows() != p * p || psi.cols() != lag_design.cols())
    throw std::invalid_argument("autoregressive_from_coefficients: dimension mismatch");
  Eigen::MatrixXd values = lag_design * psi.transpose();  // pairs x p^2
  for (int r = 0; r < ar.pairs.size(); ++r)
    for (int l = 0; l < p; ++l)
      for (int m = 0; m < p; ++m) ar.phi[r](l, m) = values(r, l * p + m);
  return ar;
}

struct InnovationState {
  Eigen::MatrixXd variances;                 // N x p, sigma^2_ijk
  std::vector<Eigen::MatrixXd> correlations;  // one R_t per registry time
};

struct CovarianceFactors {
  AutoregressiveBlocks ar;
  InnovationState innovation;
};

inline Eigen::MatrixXd build_L(const AutoregressiveBlocks& blocks, int subject, int n_i) {
  const int p = blocks.p;
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(n_i * p, n_i * p);
  for (int j = 1; j < n_i; ++j)
    for (int k = 0; k < j; ++k) L.block(j * p, k * p, p, p) = -blocks.at(subject, j, k);
  return L;
}

/// D = S^{1/2} R S^{1/2}.
inline Eigen::MatrixXd innovation_block(const Eigen::VectorXd& variances, const Eigen::MatrixXd& R) {
  Eigen::VectorXd s = variances.array().sqrt();
  return s.asDiagonal() * R * s.asDiagonal();
}

/// Sigma = L^{-1} D L^{-T} for a unit lower block-triangular L.
inline Eigen::MatrixXd assemble_sigma(const Eigen::MatrixXd& L, const std::vector<Eigen::MatrixXd>& D_blocks) {
  const Eigen::Index n = L.rows();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index at = 0;
  for (const auto& b : D_blocks) {
    if (!is_positive_definite(b)) throw numerical_error("assemble_sigma: innovation block not positive definite");
    D.block(at, at, b.rows(), b.cols()) = b;
    at += b.rows();
  }
  if (at != n) throw std::invalid_argument("assemble_sigma: block sizes do not match L");
  Eigen::MatrixXd linv_d = L.triangularView<Eigen::Lower>().solve(D);
  Eigen::MatrixXd sigma = L.triangularView<Eigen::Lower>().solve(linv_d.transpose());
  return 0.5 * (sigma + sigma.transpose());
}

inline std::vector<Eigen::MatrixXd> subject_innovation_blocks(const LongitudinalDataset& data,
                                                              const CovarianceFactors& f, int subject) {
  std::vector<Eigen::MatrixXd> out;
  for (int o = data.offset(subject); o < data.offset(subject) + data.n_visits(subject); ++o)
    out.push_back(innovation_block(f.innovation.variances.row(o).transpose(),
                                   f.innovation.correlations[data.time_index(o)]));
  return out;
}

inline Eigen::MatrixXd subject_sigma(const LongitudinalDataset& data, const CovarianceFactors& f, int subject) {
  return assemble_sigma(build_L(f.ar, subject, data.n_visits(subject)), subject_innovation_blocks(data, f, subject));
}

/// e_ij = r_ij - sum_{k<j} Phi_ijk r_ik for every observation.
inline Eigen::MatrixXd prediction_errors(const LongitudinalDataset& data, const AutoregressiveBlocks& ar,
                                         const Eigen::MatrixXd& residuals) {
  Eigen::MatrixXd e = residuals;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const int off = data.offset(i);
    for (int j = 1; j < data.n_visits(i); ++j)
      for (int k = 0; k < j; ++k) e.row(off + j).noalias() -= (ar.at(i, j, k) * residuals.row(off + k).transpose()).transpose();
  }
  return e;
}

namespace detail {
inline void check_residual_shape(const LongitudinalDataset& data, const Eigen::MatrixXd& residuals) {
  if (residuals.rows() != data.n_obs() || residuals.cols() != data.response_dim())
    throw std::invalid_argument("quadratic form: residual matrix must be N x p");
}
}  // namespace detail

/// Q through per-subject prediction errors against D_ij.
inline double quadratic_form_prediction(const LongitudinalDataset& data, const CovarianceFactors& f,
                                        const Eigen::MatrixXd& residuals) {
  detail::check_residual_shape(data, residuals);
  Eigen::MatrixXd e = prediction_errors(data, f.ar, residuals);
  double q = 0.0;
  for (int o = 0; o < data.n_obs(); ++o) {
    Eigen::MatrixXd D = innovation_block(f.innovation.variances.row(o).transpose(),
                                         f.innovation.correlations[data.time_index(o)]);
    Eigen::VectorXd eo = e.row(o).transpose();
    q += eo.dot(D.llt().solve(eo));
  }
  return q;
}

/// Q through standardized errors against R_t; optionally returns the per-time scatter S_t.
inline double quadratic_form_standardized(const LongitudinalDataset& data, const CovarianceFactors& f,
                                          const Eigen::MatrixXd& residuals,
                                          std::vector<Eigen::MatrixXd>* scatter = nullptr) {
  detail::check_residual_shape(data, residuals);
  const int p = data.response_dim();
  Eigen::MatrixXd e = prediction_errors(data, f.ar, residuals);
  std::vector<Eigen::MatrixXd> s(data.n_times(), Eigen::MatrixXd::Zero(p, p));
  for (int o = 0; o < data.n_obs(); ++o) {
    Eigen::VectorXd z = e.row(o).transpose().array() / f.innovation.variances.row(o).transpose().array().sqrt();
    s[data.time_index(o)].noalias() += z * z.transpose();
  }
  double q = 0.0;
  for (int t = 0; t < data.n_times(); ++t) {
    if (data.occupancy()[t].empty()) continue;
    q += f.innovation.correlations[t].llt().solve(s[t]).trace();
  }
  if (scatter) *scatter = std::move(s);
  return q;
}

/// Q through the dynamic-linear-model residuals r_ij - V_ij psi, with phi_ijklm = z_ijk . psi.row(l p + m).
inline double quadratic_form_dynamic(const LongitudinalDataset& data, const InnovationState& innovation,
                                     const Eigen::MatrixXd& residuals, const Eigen::MatrixXd& lag_design,
                                     const Eigen::MatrixXd& psi) {
  detail::check_residual_shape(data, residuals);
  const int p = data.response_dim();
  const int q = static_cast<int>(lag_design.cols());
  LagPairIndex pairs(data);
  if (lag_design.rows() != pairs.size() || psi.rows() != p * p || psi.cols() != q)
    throw std::invalid_argument("quadratic_form_dynamic: dimension mismatch");
  // psi stacked as (l, m, b) -> l * p * q + m * q + b
  Eigen::VectorXd psi_vec(p * p * q);
  for (int l = 0; l < p; ++l)
    for (int m = 0; m < p; ++m) psi_vec.segment((l * p + m) * q, q) = psi.row(l * p + m).transpose();
  double total = 0.0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const int off = data.offset(i);
    for (int j = 0; j < data.n_visits(i); ++j) {
      const int o = off + j;
      Eigen::VectorXd v = Eigen::VectorXd::Zero(p * q);
      for (int k = 0; k < j; ++k) {
        Eigen::RowVectorXd z = lag_design.row(pairs.row(i, j, k));
        for (int m = 0; m < p; ++m) v.segment(m * q, q).noalias() += residuals(off + k, m) * z.transpose();
      }
      Eigen::VectorXd pred(p);
      for (int l = 0; l < p; ++l) pred(l) = v.dot(psi_vec.segment(l * p * q, p * q));
      Eigen::VectorXd res = residuals.row(o).transpose() - pred;
      Eigen::MatrixXd D = innovation_block(innovation.variances.row(o).transpose(),
                                           innovation.correlations[data.time_index(o)]);
      total += res.dot(D.llt().solve(res));
    }
  }
  return total;
}

/// A mean-model column: response k times design column c.
struct MeanColumn {
  int response = 0;
  int column = 0;
};

/// Accumulated R_t-whitened cross products of the response and the selected mean columns.
struct WhitenedSystem {
  Eigen::MatrixXd xtx;
  Eigen::VectorXd xty;
  double yty = 0.0;
  double log_det_sigma = 0.0;
  int n_values = 0;  // N p
};

/// Per-time Cholesky factors of R_t and their log determinants.
struct CorrelationFactors {
  std::vector<Eigen::MatrixXd> lower;
  std::vector<double> log_det;

  CorrelationFactors() = default;
  explicit CorrelationFactors(const std::vector<Eigen::MatrixXd>& R) {
    for (const auto& r : R) {
      auto llt = checked_cholesky(r);
      if (!llt) throw numerical_error("correlation matrix is not positive definite");
      lower.push_back(llt->matrixL());
      log_det.push_back(mvlong::log_det(*llt));
    }
  }
};

/// Accumulation of the whitened system over a subset of observations.
///
/// Each observation contributes C^{-1} S^{-1/2} (Y_ij - sum Phi_ijk Y_ik), with C the Cholesky factor of
/// R_t, and the same transformation applied to each selected design column.
inline void accumulate_whitened(const LongitudinalDataset& data, const AutoregressiveBlocks& ar,
                                const Eigen::MatrixXd& variances, const CorrelationFactors& corr,
                                const Eigen::MatrixXd& y, const Eigen::MatrixXd& x,
                                const std::vector<MeanColumn>& columns, const std::vector<int>& observations,
                                WhitenedSystem& out, bool with_response = true) {
  const int p = data.response_dim();
  const int nc = static_cast<int>(columns.size());
  Eigen::MatrixXd lx(p, nc);
  Eigen::VectorXd ly(p);
  for (int o : observations) {
    const int i = data.subject_of(o);
    const int off = data.offset(i);
    const int j = o - off;
    const int t = data.time_index(o);
    lx.setZero();
    for (int c = 0; c < nc; ++c) lx(columns[c].response, c) = x(o, columns[c].column);
    if (with_response) ly = y.row(o).transpose();
    for (int k = 0; k < j; ++k) {
      const Eigen::MatrixXd& phi = ar.at(i, j, k);
      const int ok = off + k;
      for (int c = 0; c < nc; ++c) lx.col(c).noalias() -= phi.col(columns[c].response) * x(ok, columns[c].column);
      if (with_response) ly.noalias() -= phi * y.row(ok).transpose();
    }
    for (int l = 0; l < p; ++l) {
      double s = 1.0 / std::sqrt(variances(o, l));
      lx.row(l) *= s;
      if (with_response) ly(l) *= s;
      out.log_det_sigma += std::log(variances(o, l));
    }
    out.log_det_sigma += corr.log_det[t];
    auto L = corr.lower[t].triangularView<Eigen::Lower>();
    L.solveInPlace(lx);
    out.xtx.noalias() += lx.transpose() * lx;
    if (with_response) {
      L.solveInPlace(ly);
      out.xty.noalias() += lx.transpose() * ly;
      out.yty += ly.squaredNorm();
    }
    out.n_values += p;
  }
}

inline WhitenedSystem whiten_system(const LongitudinalDataset& data, const AutoregressiveBlocks& ar,
                                    const Eigen::MatrixXd& variances, const CorrelationFactors& corr,
                                    const Eigen::MatrixXd& y, const Eigen::MatrixXd& x,
                                    const std::vector<MeanColumn>& columns, bool with_response = true) {
  WhitenedSystem out;
  out.xtx = Eigen::MatrixXd::Zero(columns.size(), columns.size());
  out.xty = Eigen::VectorXd::Zero(columns.size());
  std::vector<int> all(data.n_obs());
  for (int o = 0; o < data.n_obs(); ++o) all[o] = o;
  accumulate_whitened(data, ar, variances, corr, y, x, columns, all, out, with_response);
  return out;
}

inline std::string describe_columns(const std::vector<MeanColumn>& columns, const std::vector<int>& idx) {
  std::string out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) out += ", ";
    out += "(response " + std::to_string(columns[idx[i]].response) + ", column " +
           std::to_string(columns[idx[i]].column) + ")";
  }
  return out;
}

/// Columns that are linearly dependent on earlier ones in a Gram matrix.
inline std::vector<int> dependent_columns(const Eigen::MatrixXd& gram) {
  std::vector<int> kept, bad;
  for (int c = 0; c < gram.cols(); ++c) {
    std::vector<int> trial = kept;
    trial.push_back(c);
    if (is_positive_definite(select_square(gram, trial))) kept = trial;
    else bad.push_back(c);
  }
  return bad;
}

struct MarginalY {
  double loglik = 0.0;
  double S = 0.0;
  double log_det_sigma = 0.0;
  Eigen::VectorXd beta_hat;  // posterior mean c/(1+c) (X'X)^{-1} X'y
};

/// log f(Y | gamma, Sigma, c) with beta integrated out under the g-prior.
inline MarginalY marginal_from_system(const WhitenedSystem& sys, double c_beta,
                                      const std::vector<MeanColumn>* columns = nullptr) {
  MarginalY out;
  const double shrink = c_beta / (1.0 + c_beta);
  const int P = static_cast<int>(sys.xtx.rows());
  double quad = 0.0;
  if (P > 0) {
    auto llt = checked_cholesky(sys.xtx);
    if (!llt) {
      std::string msg = "rank-deficient whitened mean design";
      if (columns) msg += "; dependent columns: " + describe_columns(*columns, dependent_columns(sys.xtx));
      throw numerical_error(msg);
    }
    Eigen::VectorXd sol = llt->solve(sys.xty);
    quad = sys.xty.dot(sol);
    out.beta_hat = shrink * sol;
  } else {
    out.beta_hat.resize(0);
  }
  out.S = sys.yty - shrink * quad;
  out.log_det_sigma = sys.log_det_sigma;
  out.loglik = -0.5 * sys.n_values * log_two_pi - 0.5 * sys.log_det_sigma - 0.5 * P * std::log(c_beta + 1.0) -
               0.5 * out.S;
  return out;
}

/// Selected mean columns: intercept always, then gamma[k][c] marks design column c + 1 for response k.
inline std::vector<MeanColumn> selected_mean_columns(const std::vector<std::vector<bool>>& gamma, bool intercept = true) {
  std::vector<MeanColumn> out;
  for (int k = 0; k < static_cast<int>(gamma.size()); ++k) {
    if (intercept) out.push_back({k, 0});
    for (int c = 0; c < static_cast<int>(gamma[k].size()); ++c)
      if (gamma[k][c]) out.push_back({k, c + (intercept ? 1 : 0)});
  }
  return out;
}

inline MarginalY marginal_loglik_Y(const LongitudinalDataset& data, const CovarianceFactors& f,
                                   const Eigen::MatrixXd& mean_design, const std::vector<std::vector<bool>>& gamma,
                                   double c_beta) {
  auto columns = selected_mean_columns(gamma);
  CorrelationFactors corr(f.innovation.correlations);
  auto sys = whiten_system(data, f.ar, f.innovation.variances, corr, data.responses(), mean_design, columns);
  return marginal_from_system(sys, c_beta, &columns);
}

enum class ClusterExponent { exact, printed };

struct MarginalTheta {
  double loglik = 0.0;
  double S = 0.0;                          // S* summed over clusters (not divided by sigma^2)
  std::vector<Eigen::VectorXd> eta_hat;    // posterior means per cluster (empty when cluster empty)
  std::vector<Eigen::MatrixXd> gram;       // whitened Z'Z per cluster
};

/// log f(theta | nu, omega, c_eta, sigma^2, labels) with eta integrated out.
///
/// rows of zstar are theta entries; row_cluster assigns each entry to a cluster; selected[h] lists the
/// zstar columns (intercept included) active in cluster h; log_dispersion holds z_sigma' omega per row.
inline MarginalTheta marginal_loglik_theta(const Eigen::VectorXd& theta, const Eigen::MatrixXd& zstar,
                                           const std::vector<std::vector<int>>& selected,
                                           const std::vector<int>& row_cluster, const Eigen::VectorXd& log_dispersion,
                                           double c_eta, double sigma2,
                                           ClusterExponent convention = ClusterExponent::exact) {
  const int H = static_cast<int>(selected.size());
  const Eigen::Index R = theta.size();
  if (zstar.rows() != R || static_cast<Eigen::Index>(row_cluster.size()) != R || log_dispersion.size() != R)
    throw std::invalid_argument("marginal_loglik_theta: dimension mismatch");
  MarginalTheta out;
  out.eta_hat.resize(H);
  out.gram.resize(H);
  const double shrink = c_eta / (1.0 + c_eta);
  std::vector<std::vector<int>> rows(H);
  for (Eigen::Index r = 0; r < R; ++r) rows.at(row_cluster[r]).push_back(static_cast<int>(r));
  double exponent = 0.0;
  for (int h = 0; h < H; ++h) {
    const int q = static_cast<int>(selected[h].size());
    if (convention == ClusterExponent::printed) exponent += q;
    if (rows[h].empty()) continue;
    if (convention == ClusterExponent::exact) exponent += q;
    Eigen::MatrixXd z(rows[h].size(), q);
    Eigen::VectorXd y(rows[h].size());
    for (std::size_t a = 0; a < rows[h].size(); ++a) {
      const int r = rows[h][a];
      double w = std::exp(-0.5 * log_dispersion(r));
      y(a) = w * theta(r);
      for (int c = 0; c < q; ++c) z(a, c) = w * zstar(r, selected[h][c]);
    }
    Eigen::MatrixXd gram = z.transpose() * z;
    Eigen::VectorXd zty = z.transpose() * y;
    double quad = 0.0;
    if (q > 0) {
      auto llt = checked_cholesky(gram);
      if (!llt) throw numerical_error("rank-deficient whitened correlation design in cluster " + std::to_string(h));
      Eigen::VectorXd sol = llt->solve(zty);
      quad = zty.dot(sol);
      out.eta_hat[h] = shrink * sol;
    }
    out.gram[h] = gram;
    out.S += y.squaredNorm() - shrink * quad;
  }
  out.loglik = -0.5 * R * (log_two_pi + std::log(sigma2)) - 0.5 * log_dispersion.sum() -
               0.5 * exponent * std::log(1.0 + c_eta) - 0.5 * out.S / sigma2;
  return out;
}

/// tr((A B^{-1} - I)^2).
inline double loss_quadratic(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw std::invalid_argument("loss_quadratic: size mismatch");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
  if (!lu.isInvertible()) throw numerical_error("loss_quadratic: reference matrix is singular");
  Eigen::MatrixXd m = (lu.solve(A.transpose())).transpose() - Eigen::MatrixXd::Identity(A.rows(), A.cols());
  return (m * m).trace();
}

/// Average loss over samples and over the matrices within each sample (e.g. over time points).
inline double average_loss(const std::vector<std::vector<Eigen::MatrixXd>>& samples,
                           const std::vector<Eigen::MatrixXd>& truth) {
  if (samples.empty()) throw std::invalid_argument("average_loss: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    if (s.size() != truth.size()) throw std::invalid_argument("average_loss: sample and truth sizes differ");
    double inner = 0.0;
    for (std::size_t t = 0; t < s.size(); ++t) inner += loss_quadratic(s[t], truth[t]);
    total += inner / static_cast<double>(s.size());
  }
  return total / static_cast<double>(samples.size());
}

/// 100 D(M_d) / D(M_1).
inline double relative_risk(const std::vector<std::vector<Eigen::MatrixXd>>& samples_d,
                            const std::vector<std::vector<Eigen::MatrixXd>>& samples_1,
                            const std::vector<Eigen::MatrixXd>& truth) {
  return 100.0 * average_loss(samples_d, truth) / average_loss(samples_1, truth);
}

/// Split a covariance matrix into standard deviations and correlation matrix.
inline Eigen::MatrixXd correlation_of(const Eigen::MatrixXd& cov) {
  Eigen::VectorXd s = cov.diagonal().array().sqrt().inverse();
  Eigen::MatrixXd r = s.asDiagonal() * cov * s.asDiagonal();
  r.diagonal().setOnes();
  return r;
}

}  // namespace mvlong

#endif
