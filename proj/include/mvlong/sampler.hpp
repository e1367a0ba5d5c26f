#ifndef MVLONG_SAMPLER_HPP
#define MVLONG_SAMPLER_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covariance.hpp"
#include "data.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "priors.hpp"
#include "random.hpp"
#include "state.hpp"

namespace mvlong {

namespace detail {

/// Result of the normal-approximation proposal machinery for g-prior scales.
struct ScaleTarget {
  double half_p;  // exponent multiplier on log(1 + c)
  double half_b;  // coefficient of c / (1 + c)
  double a, b;    // IG prior

  double value(double c) const {
    return -half_p * std::log1p(c) + half_b * c / (1.0 + c) - (a + 1.0) * std::log(c) - b / c;
  }
  double first(double c) const {
    return -half_p / (1.0 + c) + half_b / ((1.0 + c) * (1.0 + c)) - (a + 1.0) / c + b / (c * c);
  }
  double second(double c) const {
    return half_p / ((1.0 + c) * (1.0 + c)) - 2.0 * half_b / std::pow(1.0 + c, 3) + (a + 1.0) / (c * c) -
           2.0 * b / (c * c * c);
  }
};

inline std::optional<double> newton_mode(const ScaleTarget& f, double start) {
  double c = start > 0.0 && std::isfinite(start) ? start : 1.0;
  for (int it = 0; it < 50; ++it) {
    double g = f.first(c);
    double h = f.second(c);
    if (!(h < 0.0) || !std::isfinite(h)) {
      // move toward the region where the log target is concave
      double next = g > 0.0 ? c * 2.0 : c / 2.0;
      if (!std::isfinite(next) || next <= 0.0) return std::nullopt;
      c = next;
      continue;
    }
    double step = -g / h;
    double next = c + step;
    while (next <= 0.0) {
      step /= 2.0;
      next = c + step;
    }
    if (std::abs(next - c) < 1e-10 * (1.0 + c)) {
      c = next;
      if (f.second(c) < 0.0) return c;
      return std::nullopt;
    }
    c = next;
  }
  return std::nullopt;
}

inline double normal_logpdf(double x, double mean, double var) {
  return -0.5 * (log_two_pi + std::log(var) + (x - mean) * (x - mean) / var);
}

inline std::vector<int> selected_of(const std::vector<bool>& ind, int offset = 0) {
  std::vector<int> out;
  for (std::size_t c = 0; c < ind.size(); ++c)
    if (ind[c]) out.push_back(static_cast<int>(c) + offset);
  return out;
}

inline int count_on(const std::vector<bool>& ind, const std::vector<int>& columns, int offset) {
  int n = 0;
  for (int c : columns)
    if (ind[c - offset]) ++n;
  return n;
}

inline double iso_normal_logpdf(const Eigen::VectorXd& x, double var) {
  return -0.5 * x.size() * (log_two_pi + std::log(var)) - 0.5 * x.squaredNorm() / var;
}

}  // namespace detail

/// MCMC engine for the multivariate longitudinal model.
class Sampler {
 public:
  Sampler(const LongitudinalDataset& data, const ModelDesign& design, const ChainConfig& config)
      : data_(&data), m_(&design), config_(config), rng_(config.seed) {
    if (data.n_obs() != design.n_obs || data.response_dim() != design.p)
      throw std::invalid_argument("Sampler: dataset does not match the model design");
    initialize();
  }

  const ParameterState& state() const { return s_; }
  const TuningState& tuning() const { return tune_; }
  TuningState& tuning() { return tune_; }
  const ModelDesign& design() const { return *m_; }
  const LongitudinalDataset& data() const { return *data_; }
  Rng& rng() { return rng_; }

  /// Replace the state (e.g. with a prior draw) and rebuild every cache.
  void set_state(const ParameterState& s) {
    s_ = s;
    refresh_all();
  }

  /// Point the sampler at a dataset with identical layout but different responses.
  void rebind(const LongitudinalDataset& data) {
    if (data.n_obs() != data_->n_obs() || data.response_dim() != data_->response_dim())
      throw std::invalid_argument("Sampler::rebind: dataset layout differs");
    data_ = &data;
  }

  void set_adaptation(bool on) { adapting_ = on; }
  void set_after_burn_in(bool on) { after_burn_in_ = on; }
  void set_zeta_span(double span) {
    for (int t : zeta_idx_) tune_[t].upper = m_->p + span;
  }

  CovarianceFactors factors() const {
    CovarianceFactors f;
    f.ar = ar_;
    f.innovation.variances = var_;
    f.innovation.correlations = s_.R;
    return f;
  }

  Eigen::MatrixXd fitted_mean() const { return m_->mean.matrix * s_.beta.transpose(); }

  /// One full sweep in the fixed step order.
  void iterate() {
    run_step("gamma", [&] { step_gamma(); });
    run_step("c_beta", [&] { step_c_beta(); });
    run_step("delta_alpha", [&] { step_delta_alpha(); });
    run_step("sigma2_k", [&] { step_sigma2_k(); });
    run_step("c_alpha", [&] { step_c_alpha(); });
    run_step("beta", [&] { step_beta(); });
    run_step("xi_psi", [&] { step_xi_psi(); });
    run_step("c_psi", [&] { step_c_psi(); });
    if (m_->has_correlation()) {
      run_step("R_t", [&] { step_R(); });
      run_step("theta", [&] { step_theta(); });
      run_step("nu", [&] { step_nu(); });
      run_step("varphi_omega", [&] { step_varphi_omega(); });
      run_step("sigma2_corr", [&] { step_sigma2_corr(); });
      run_step("c_omega", [&] { step_c_omega(); });
      run_step("c_eta", [&] { step_c_eta(); });
      run_step("eta", [&] { step_eta(); });
      if (m_->variant != CorrelationVariant::common) {
        run_step("sticks", [&] { step_sticks(); });
        run_step("labels", [&] { step_labels(); });
        run_step("concentration", [&] { step_concentration(); });
      }
    }
    ++iteration_;
    if (adapting_ && config_.adapt && iteration_ % config_.adapt_window == 0) adapt_tuning(tune_);
  }

  int iteration() const { return iteration_; }

  // ---------------------------------------------------------------- mean model

  void step_gamma() {
    const int pm = m_->mean.n_columns();
    if (pm <= 1) return;
    const int p = m_->p;
    std::vector<MeanColumn> all;
    for (int k = 0; k < p; ++k)
      for (int c = 0; c < pm; ++c) all.push_back({k, c});
    auto full = whiten_system(*data_, ar_, var_, corr_, data_->responses(), m_->mean.matrix, all);
    auto positions = [&](const std::vector<std::vector<bool>>& g) {
      std::vector<int> out;
      for (int k = 0; k < p; ++k) {
        out.push_back(k * pm);
        for (int c = 1; c < pm; ++c)
          if (g[k][c - 1]) out.push_back(k * pm + c);
      }
      return out;
    };
    auto evaluate = [&](const std::vector<int>& pos) -> std::optional<double> {
      Eigen::MatrixXd xtx = select_square(full.xtx, pos);
      auto llt = checked_cholesky(xtx);
      if (!llt) return std::nullopt;
      Eigen::VectorXd xty = select_entries(full.xty, pos);
      const double shrink = s_.c_beta / (1.0 + s_.c_beta);
      return full.yty - shrink * xty.dot(llt->solve(xty));
    };
    auto current_pos = positions(s_.gamma);
    auto current = evaluate(current_pos);
    if (!current) throw numerical_error("current mean selection is rank deficient");
    double s_current = *current;
    const double log1c = std::log1p(s_.c_beta);
    for (int k = 0; k < p; ++k) {
      for (const auto& effect : m_->mean_effects) {
        const int q = static_cast<int>(effect.columns.size());
        for (const auto& block : random_blocks(rng_, effect.columns)) {
          int complement_on = detail::count_on(s_.gamma[k], effect.columns, 1) -
                              detail::count_on(s_.gamma[k], block, 1);
          auto values = sample_indicator_block(rng_, static_cast<int>(block.size()), complement_on,
                                               m_->hyper.mean_indicators, q);
          auto proposal = s_.gamma;
          for (std::size_t b = 0; b < block.size(); ++b) proposal[k][block[b] - 1] = values[b];
          if (proposal == s_.gamma) {
            tune_[gamma_idx_].record(true, after_burn_in_);
            continue;
          }
          auto pos = positions(proposal);
          auto s_prop = evaluate(pos);
          if (!s_prop) {
            ++tune_.auto_rejected;
            tune_[gamma_idx_].record(false, after_burn_in_);
            continue;
          }
          double log_ratio = 0.5 * (static_cast<double>(current_pos.size()) - static_cast<double>(pos.size())) * log1c +
                             0.5 * (s_current - *s_prop);
          bool accept = std::log(rng_.uniform_open()) < log_ratio;
          tune_[gamma_idx_].record(accept, after_burn_in_);
          if (accept) {
            s_.gamma = proposal;
            current_pos = pos;
            s_current = *s_prop;
          }
        }
      }
    }
    // unselected coefficients must be exactly zero
    for (int k = 0; k < p; ++k)
      for (int c = 1; c < pm; ++c)
        if (!s_.gamma[k][c - 1]) s_.beta(k, c) = 0.0;
  }

  void step_c_beta() {
    auto cols = selected_mean_columns(s_.gamma);
    auto sys = whiten_system(*data_, ar_, var_, corr_, data_->responses(), m_->mean.matrix, cols);
    auto llt = checked_cholesky(sys.xtx);
    if (!llt) throw numerical_error("current mean selection is rank deficient");
    double quad = sys.xty.dot(llt->solve(sys.xty));
    detail::ScaleTarget f{0.5 * static_cast<double>(cols.size()), 0.5 * quad, m_->hyper.c_beta.a, m_->hyper.c_beta.b};
    s_.c_beta = mode_proposal(f, s_.c_beta, c_beta_g2_idx_, c_beta_walk_idx_);
  }

  void step_beta() {
    auto cols = selected_mean_columns(s_.gamma);
    auto sys = whiten_system(*data_, ar_, var_, corr_, data_->responses(), m_->mean.matrix, cols);
    auto llt = checked_cholesky(sys.xtx);
    if (!llt) throw numerical_error("singular whitened mean design in beta update");
    const double shrink = s_.c_beta / (1.0 + s_.c_beta);
    Eigen::VectorXd mean = shrink * llt->solve(sys.xty);
    Eigen::VectorXd draw = mean + std::sqrt(shrink) * llt->matrixU().solve(rng_.normal_vector(mean.size()));
    s_.beta.setZero();
    for (std::size_t c = 0; c < cols.size(); ++c) s_.beta(cols[c].response, cols[c].column) = draw(c);
  }

  // ------------------------------------------------------------ variance model

  void step_delta_alpha() {
    const int pv = m_->variance.n_columns();
    if (pv == 0) return;
    const int p = m_->p;
    const Eigen::MatrixXd& W = m_->variance.matrix;
    auto cols = selected_mean_columns(s_.gamma);
    auto current = marginal_for(var_, cols);
    for (int k = 0; k < p; ++k) {
      for (std::size_t l = 0; l < m_->variance_effects.size(); ++l) {
        const auto& effect = m_->variance_effects[l];
        const int q = static_cast<int>(effect.columns.size());
        TuningScalar& h = tune_[h_idx_[k][l]];
        for (const auto& block : random_blocks(rng_, effect.columns)) {
          int complement_on = detail::count_on(s_.delta[k], effect.columns, 0) - detail::count_on(s_.delta[k], block, 0);
          auto values = sample_indicator_block(rng_, static_cast<int>(block.size()), complement_on,
                                               m_->hyper.variance_indicators, q);
          std::vector<bool> delta_p = s_.delta[k];
          for (std::size_t b = 0; b < block.size(); ++b) delta_p[block[b]] = values[b];
          std::vector<int> sel_c, sel_p;
          for (int c : effect.columns) {
            if (s_.delta[k][c]) sel_c.push_back(c);
            if (delta_p[c]) sel_p.push_back(c);
          }
          if (sel_c.empty() && sel_p.empty()) {
            s_.delta[k] = delta_p;
            continue;
          }
          // working response at the current state, with the other effects as offset
          Eigen::VectorXd z_c = variance_working_response(k, var_, current.beta_hat, cols, effect.columns, s_.alpha);
          Eigen::VectorXd alpha_p_eff;
          double log_fwd = 0.0;
          if (!sel_p.empty()) {
            auto prop = irls_proposal(W, sel_p, z_c, s_.c_alpha(k), h.value);
            alpha_p_eff = prop.draw(rng_);
            log_fwd = prop.logpdf(alpha_p_eff);
          }
          Eigen::MatrixXd alpha_p = s_.alpha;
          for (int c : effect.columns) alpha_p(k, c) = 0.0;
          for (std::size_t a = 0; a < sel_p.size(); ++a) alpha_p(k, sel_p[a]) = alpha_p_eff(a);
          Eigen::MatrixXd var_p = var_;
          var_p.col(k) = (std::log(s_.sigma2(k)) + (W * alpha_p.row(k).transpose()).array()).exp().matrix();
          auto proposed = try_marginal_for(var_p, cols);
          if (!proposed) {
            ++tune_.auto_rejected;
            h.record(false, after_burn_in_);
            continue;
          }
          double log_rev = 0.0;
          if (!sel_c.empty()) {
            Eigen::VectorXd z_p = variance_working_response(k, var_p, proposed->beta_hat, cols, effect.columns, alpha_p);
            auto rev = irls_proposal(W, sel_c, z_p, s_.c_alpha(k), h.value);
            log_rev = rev.logpdf(select_entries(s_.alpha.row(k).transpose(), sel_c));
          }
          double log_prior_p = detail::iso_normal_logpdf(alpha_p_eff, s_.c_alpha(k));
          double log_prior_c = detail::iso_normal_logpdf(select_entries(s_.alpha.row(k).transpose(), sel_c), s_.c_alpha(k));
          double log_ratio = (-0.5 * proposed->log_det_sigma - 0.5 * proposed->S) -
                             (-0.5 * current.log_det_sigma - 0.5 * current.S) + log_prior_p - log_prior_c + log_rev -
                             log_fwd;
          bool accept = std::log(rng_.uniform_open()) < log_ratio;
          h.record(accept, after_burn_in_);
          if (accept) {
            s_.delta[k] = delta_p;
            s_.alpha = alpha_p;
            var_ = var_p;
            current = *proposed;
          }
        }
      }
    }
  }

  void step_sigma2_k() {
    auto cols = selected_mean_columns(s_.gamma);
    auto current = marginal_for(var_, cols);
    for (int k = 0; k < m_->p; ++k) {
      TuningScalar& v = tune_[sigma2_idx_[k]];
      double prop = s_.sigma2(k) + std::sqrt(v.value) * rng_.normal();
      if (!(prop > 0.0)) {
        v.record(false, after_burn_in_);
        continue;
      }
      Eigen::MatrixXd var_p = var_;
      var_p.col(k) *= prop / s_.sigma2(k);
      auto proposed = try_marginal_for(var_p, cols);
      if (!proposed) {
        v.record(false, after_burn_in_);
        continue;
      }
      double log_ratio = (-0.5 * proposed->log_det_sigma - 0.5 * proposed->S) -
                         (-0.5 * current.log_det_sigma - 0.5 * current.S) +
                         variance_prior_logpdf(prop, m_->hyper.sigma2_k) -
                         variance_prior_logpdf(s_.sigma2(k), m_->hyper.sigma2_k);
      bool accept = std::log(rng_.uniform_open()) < log_ratio;
      v.record(accept, after_burn_in_);
      if (accept) {
        s_.sigma2(k) = prop;
        var_ = var_p;
        current = *proposed;
      }
    }
  }

  void step_c_alpha() {
    for (int k = 0; k < m_->p; ++k) {
      Eigen::VectorXd a = s_.alpha.row(k).transpose();
      int n_on = static_cast<int>(detail::selected_of(s_.delta[k]).size());
      s_.c_alpha(k) = scale_update(s_.c_alpha(k), n_on, a.squaredNorm(), m_->hyper.c_alpha, c_alpha_idx_[k]);
    }
  }

  // -------------------------------------------------- autoregressive model

  void step_xi_psi() {
    const int p = m_->p;
    const int qa = m_->ar.n_columns();
    const int D = p * qa;
    Eigen::MatrixXd r = data_->responses() - fitted_mean();
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p * D, p * D);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(p * D);
    ar_statistics(r, G, h);
    Eigen::VectorXd psi = flatten_psi(s_.psi);
    auto cols = selected_mean_columns(s_.gamma);
    Eigen::VectorXd beta_sel = beta_selected(cols);
    double gprior_c = mean_gprior(ar_, var_, corr_, cols, beta_sel);
    for (int lm = 0; lm < p * p; ++lm) {
      const int l = lm / p;
      const int mm = lm % p;
      auto index = [&](int c) { return l * D + mm * qa + c; };
      for (const auto& effect : m_->ar_effects) {
        const int q = static_cast<int>(effect.columns.size());
        for (const auto& block : random_blocks(rng_, effect.columns)) {
          int complement_on = detail::count_on(s_.xi[lm], effect.columns, 0) - detail::count_on(s_.xi[lm], block, 0);
          auto values = sample_indicator_block(rng_, static_cast<int>(block.size()), complement_on,
                                               m_->hyper.ar_indicators, q);
          std::vector<bool> xi_p = s_.xi[lm];
          for (std::size_t b = 0; b < block.size(); ++b) xi_p[block[b]] = values[b];
          std::vector<int> sel_c, sel_p, rest;
          for (int c : effect.columns) {
            if (s_.xi[lm][c]) sel_c.push_back(index(c));
            if (xi_p[c]) sel_p.push_back(index(c));
          }
          for (int row = 0; row < p * p; ++row)
            for (int c = 0; c < qa; ++c) {
              bool in_effect = row == lm && std::find(effect.columns.begin(), effect.columns.end(), c) != effect.columns.end();
              if (!in_effect && s_.xi[row][c]) rest.push_back((row / p) * D + (row % p) * qa + c);
            }
          if (sel_c.empty() && sel_p.empty()) {
            s_.xi[lm] = xi_p;
            continue;
          }
          Eigen::VectorXd psi_rest = select_entries(psi, rest);
          auto conditional = [&](const std::vector<int>& sel) {
            Eigen::MatrixXd prec = select_square(G, sel);
            prec.diagonal().array() += 1.0 / s_.c_psi(lm);
            Eigen::VectorXd rhs = select_entries(h, sel);
            if (!rest.empty()) rhs -= select_block(G, sel, rest) * psi_rest;
            return std::make_pair(prec, rhs);
          };
          Eigen::VectorXd psi_p = psi;
          for (int c : effect.columns) psi_p(index(c)) = 0.0;
          Eigen::VectorXd draw_p;
          double log_fwd = 0.0;
          if (!sel_p.empty()) {
            auto [prec, rhs] = conditional(sel_p);
            auto llt = checked_cholesky(prec);
            if (!llt) {
              ++tune_.auto_rejected;
              tune_[xi_idx_].record(false, after_burn_in_);
              continue;
            }
            Eigen::VectorXd mean;
            draw_p = draw_canonical(rng_, *llt, rhs, &mean);
            log_fwd = mvn_logpdf_precision(draw_p, mean, *llt);
            for (std::size_t a = 0; a < sel_p.size(); ++a) psi_p(sel_p[a]) = draw_p(a);
          }
          double log_rev = 0.0;
          Eigen::VectorXd cur_vals = select_entries(psi, sel_c);
          if (!sel_c.empty()) {
            auto [prec, rhs] = conditional(sel_c);
            auto llt = checked_cholesky(prec);
            if (!llt) throw numerical_error("autoregressive conditional precision not positive definite");
            Eigen::VectorXd mean = llt->solve(rhs);
            log_rev = mvn_logpdf_precision(cur_vals, mean, *llt);
          }
          Eigen::VectorXd diff = psi_p - psi;
          double dq = -2.0 * h.dot(diff) + psi_p.dot(G * psi_p) - psi.dot(G * psi);
          // proposed autoregressive blocks for the g-prior factor
          AutoregressiveBlocks ar_p = ar_;
          Eigen::VectorXd coef(qa);
          for (int c = 0; c < qa; ++c) coef(c) = psi_p(index(c));
          Eigen::VectorXd vals = m_->ar.matrix * coef;
          for (int row = 0; row < ar_p.pairs.size(); ++row) ar_p.phi[row](l, mm) = vals(row);
          double gprior_p = mean_gprior(ar_p, var_, corr_, cols, beta_sel);
          double log_ratio = -0.5 * dq + detail::iso_normal_logpdf(draw_p, s_.c_psi(lm)) -
                             detail::iso_normal_logpdf(cur_vals, s_.c_psi(lm)) + log_rev - log_fwd + gprior_p - gprior_c;
          bool accept = std::log(rng_.uniform_open()) < log_ratio;
          tune_[xi_idx_].record(accept, after_burn_in_);
          if (accept) {
            s_.xi[lm] = xi_p;
            psi = psi_p;
            for (int c = 0; c < qa; ++c) s_.psi(lm, c) = psi(index(c));
            ar_ = std::move(ar_p);
            gprior_c = gprior_p;
          }
        }
      }
    }
  }

  void step_c_psi() {
    for (int lm = 0; lm < m_->p * m_->p; ++lm) {
      Eigen::VectorXd a = s_.psi.row(lm).transpose();
      int n_on = static_cast<int>(detail::selected_of(s_.xi[lm]).size());
      s_.c_psi(lm) = scale_update(s_.c_psi(lm), n_on, a.squaredNorm(), m_->hyper.c_psi, c_psi_idx_[lm]);
    }
  }

  // ----------------------------------------------------- correlation model

  void step_R() {
    const int p = m_->p;
    const int M = data_->n_times();
    const int d = m_->d;
    Eigen::MatrixXd r = data_->responses() - fitted_mean();
    Eigen::MatrixXd e = prediction_errors(*data_, ar_, r);
    std::vector<Eigen::MatrixXd> scatter(M, Eigen::MatrixXd::Zero(p, p));
    for (int o = 0; o < data_->n_obs(); ++o) {
      Eigen::VectorXd z = e.row(o).transpose().array() / var_.row(o).transpose().array().sqrt();
      scatter[data_->time_index(o)].noalias() += z * z.transpose();
    }
    auto cols = selected_mean_columns(s_.gamma);
    Eigen::VectorXd beta_sel = beta_selected(cols);
    std::vector<Eigen::MatrixXd> xtx_t(M);
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(cols.size(), cols.size());
    for (int t = 0; t < M; ++t) {
      xtx_t[t] = time_gram(t, corr_, cols);
      total += xtx_t[t];
    }
    double gprior_c = g_prior_logpdf(beta_sel, s_.c_beta, total);
    auto theta_density = theta_marginal(s_.nu, s_.omega);
    if (!theta_density) throw numerical_error("current correlation-center selection is rank deficient");
    double theta_c = theta_density->loglik;
    for (int t = 0; t < M; ++t) {
      TuningScalar& zeta_s = tune_[zeta_idx_[t]];
      const double zeta = zeta_s.value;
      const double nt = static_cast<double>(obs_at_time_[t].size());
      const double df = nt + zeta;
      const double kappa = 0.5 * (nt + zeta - p + 1.0);
      const double scale_ig = kappa - 1.0;
      Eigen::VectorXd dvar(p);
      for (int k = 0; k < p; ++k) dvar(k) = rng_.inv_gamma(kappa, scale_ig);
      Eigen::MatrixXd Eu = innovation_block(dvar, s_.R[t]);
      Eigen::MatrixXd psi_fwd = scatter[t] + (zeta - p - 1.0) * Eu;
      Eigen::MatrixXd E;
      Eigen::MatrixXd Rp;
      bool ok = false;
      for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        E = rinv_wishart(rng_, df, psi_fwd);
        if (!is_positive_definite(E)) continue;
        Rp = correlation_of(E);
        Rp = 0.5 * (Rp + Rp.transpose()).eval();
        Rp.diagonal().setOnes();
        ok = is_positive_definite(Rp) && (Rp.array().abs() <= 1.0).all();
        for (int a = 0; a < p && ok; ++a)
          for (int b = a + 1; b < p && ok; ++b) ok = std::abs(Rp(a, b)) < 1.0;
      }
      if (!ok) {
        zeta_s.record(false, after_burn_in_);
        continue;
      }
      Eigen::VectorXd dvar_p = E.diagonal();
      Eigen::MatrixXd Ep = innovation_block(dvar_p, Rp);
      Eigen::MatrixXd psi_rev = scatter[t] + (zeta - p - 1.0) * Ep;
      CorrelationFactors corr_p = corr_;
      auto llt_p = checked_cholesky(Rp);
      corr_p.lower[t] = llt_p->matrixL();
      corr_p.log_det[t] = log_det(*llt_p);
      Eigen::MatrixXd xtx_p = time_gram(t, corr_p, cols);
      Eigen::MatrixXd total_p = total - xtx_t[t] + xtx_p;
      auto gprior = [&](const Eigen::MatrixXd& g) -> std::optional<double> {
        if (beta_sel.size() == 0) return 0.0;
        if (!checked_cholesky(g)) return std::nullopt;
        return g_prior_logpdf(beta_sel, s_.c_beta, g);
      };
      auto gprior_p = gprior(total_p);
      if (!gprior_p) {
        ++tune_.auto_rejected;
        zeta_s.record(false, after_burn_in_);
        continue;
      }
      // theta_t moves with g(r_t), which leaves the shadow factor unchanged
      Eigen::VectorXd theta_p = s_.theta;
      for (int q = 0; q < d; ++q) {
        const auto [a, b] = m_->pairs[q];
        theta_p(t * d + q) += fisher_z(Rp(a, b)) - fisher_z(s_.R[t](a, b));
      }
      auto theta_prop = theta_marginal(s_.nu, s_.omega, &theta_p);
      auto log_f = [&](const Eigen::MatrixXd& R, const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& theta) {
        double v = -0.5 * nt * log_det(llt) - 0.5 * llt.solve(scatter[t]).trace();
        for (int q = 0; q < d; ++q) {
          double rr = R(m_->pairs[q].first, m_->pairs[q].second);
          double z = fisher_z(rr) - theta(t * d + q);
          v += -0.5 * z * z / m_->tau2 + std::log(jacobian_fisher(rr));
        }
        return v;
      };
      auto llt_c = checked_cholesky(s_.R[t]);
      double log_k_p = 0.0, log_k_c = 0.0;
      for (int k = 0; k < p; ++k) {
        log_k_p += inv_gamma_logpdf(dvar_p(k), kappa, scale_ig);
        log_k_c += inv_gamma_logpdf(dvar(k), kappa, scale_ig);
      }
      double log_ratio = log_f(Rp, *llt_p, theta_p) + *gprior_p + theta_prop->loglik - log_f(s_.R[t], *llt_c, s_.theta) -
                         gprior_c - theta_c + log_k_p - log_k_c +
                         inv_wishart_logpdf(Eu, df, psi_rev) - inv_wishart_logpdf(Ep, df, psi_fwd) +
                         0.5 * (p - 1.0) * (dvar.array().log().sum() - dvar_p.array().log().sum());
      bool accept = std::log(rng_.uniform_open()) < log_ratio;
      zeta_s.record(accept, after_burn_in_);
      if (accept) {
        s_.R[t] = Rp;
        s_.theta = theta_p;
        theta_c = theta_prop->loglik;
        corr_ = std::move(corr_p);
        total = total_p;
        xtx_t[t] = xtx_p;
        gprior_c = *gprior_p;
      }
    }
  }

  void step_theta() {
    const int d = m_->d;
    const int M = data_->n_times();
    const int n = M * d;
    Eigen::MatrixXd prec = theta_prior_precision();
    prec.diagonal().array() += 1.0 / m_->tau2;
    Eigen::VectorXd g(n);
    for (int t = 0; t < M; ++t)
      for (int q = 0; q < d; ++q) g(t * d + q) = fisher_z(s_.R[t](m_->pairs[q].first, m_->pairs[q].second));
    auto llt = checked_cholesky(prec);
    if (!llt) throw numerical_error("theta conditional precision not positive definite");
    s_.theta = draw_canonical(rng_, *llt, g / m_->tau2);
  }

  void step_nu() {
    const int H = m_->n_clusters;
    auto current = theta_marginal(s_.nu, s_.omega);
    if (!current) throw numerical_error("current correlation-center selection is rank deficient");
    for (int h = 0; h < H; ++h) {
      for (const auto& effect : m_->corr_mean_effects) {
        const int q = static_cast<int>(effect.columns.size());
        for (const auto& block : random_blocks(rng_, effect.columns)) {
          int complement_on = detail::count_on(s_.nu[h], effect.columns, 1) - detail::count_on(s_.nu[h], block, 1);
          auto values = sample_indicator_block(rng_, static_cast<int>(block.size()), complement_on,
                                               m_->hyper.corr_mean_indicators, q);
          auto proposal = s_.nu;
          for (std::size_t b = 0; b < block.size(); ++b) proposal[h][block[b] - 1] = values[b];
          if (proposal == s_.nu) {
            tune_[nu_idx_].record(true, after_burn_in_);
            continue;
          }
          auto prop = theta_marginal(proposal, s_.omega);
          if (!prop) {
            ++tune_.auto_rejected;
            tune_[nu_idx_].record(false, after_burn_in_);
            continue;
          }
          bool accept = std::log(rng_.uniform_open()) < prop->loglik - current->loglik;
          tune_[nu_idx_].record(accept, after_burn_in_);
          if (accept) {
            s_.nu = proposal;
            current = prop;
          }
        }
      }
    }
    for (int h = 0; h < H; ++h)
      for (std::size_t c = 0; c < s_.nu[h].size(); ++c)
        if (!s_.nu[h][c]) s_.eta(h, c + 1) = 0.0;
  }

  void step_varphi_omega() {
    const int pd = m_->corr_dispersion.n_columns();
    if (pd == 0) return;
    const Eigen::MatrixXd& Z = m_->corr_dispersion.matrix;
    auto current = theta_marginal(s_.nu, s_.omega);
    if (!current) throw numerical_error("current correlation-center selection is rank deficient");
    TuningScalar& h = tune_[omega_h_idx_];
    std::vector<int> all(pd);
    for (int c = 0; c < pd; ++c) all[c] = c;
    for (const auto& effect : m_->corr_dispersion_effects) {
      const int q = static_cast<int>(effect.columns.size());
      for (const auto& block : random_blocks(rng_, effect.columns)) {
        int complement_on = detail::count_on(s_.varphi, effect.columns, 0) - detail::count_on(s_.varphi, block, 0);
        auto values = sample_indicator_block(rng_, static_cast<int>(block.size()), complement_on,
                                             m_->hyper.corr_dispersion_indicators, q);
        std::vector<bool> varphi_p = s_.varphi;
        for (std::size_t b = 0; b < block.size(); ++b) varphi_p[block[b]] = values[b];
        auto sel_c = detail::selected_of(s_.varphi);
        auto sel_p = detail::selected_of(varphi_p);
        if (sel_c.empty() && sel_p.empty()) {
          s_.varphi = varphi_p;
          continue;
        }
        Eigen::VectorXd z_c = dispersion_working_response(*current, s_.nu, s_.omega);
        Eigen::VectorXd omega_p = Eigen::VectorXd::Zero(pd);
        Eigen::VectorXd draw;
        double log_fwd = 0.0;
        if (!sel_p.empty()) {
          auto prop = irls_proposal(Z, sel_p, z_c, s_.c_omega, h.value);
          draw = prop.draw(rng_);
          log_fwd = prop.logpdf(draw);
          for (std::size_t a = 0; a < sel_p.size(); ++a) omega_p(sel_p[a]) = draw(a);
        }
        auto proposed = theta_marginal(s_.nu, omega_p);
        if (!proposed) {
          ++tune_.auto_rejected;
          h.record(false, after_burn_in_);
          continue;
        }
        double log_rev = 0.0;
        Eigen::VectorXd cur_vals = select_entries(s_.omega, sel_c);
        if (!sel_c.empty()) {
          Eigen::VectorXd z_p = dispersion_working_response(*proposed, s_.nu, omega_p);
          auto rev = irls_proposal(Z, sel_c, z_p, s_.c_omega, h.value);
          log_rev = rev.logpdf(cur_vals);
        }
        double log_ratio = proposed->loglik - current->loglik + detail::iso_normal_logpdf(draw, s_.c_omega) -
                           detail::iso_normal_logpdf(cur_vals, s_.c_omega) + log_rev - log_fwd;
        bool accept = std::log(rng_.uniform_open()) < log_ratio;
        h.record(accept, after_burn_in_);
        if (accept) {
          s_.varphi = varphi_p;
          s_.omega = omega_p;
          current = proposed;
        }
      }
    }
  }

  void step_sigma2_corr() {
    auto current = theta_marginal(s_.nu, s_.omega);
    if (!current) throw numerical_error("current correlation-center selection is rank deficient");
    const double n = static_cast<double>(s_.theta.size());
    const ScalePrior& prior = m_->hyper.sigma2_corr;
    if (prior.kind == ScalePrior::Kind::inverse_gamma) {
      s_.sigma2_corr = rng_.inv_gamma(prior.a + 0.5 * n, prior.b + 0.5 * current->S);
      return;
    }
    TuningScalar& f = tune_[sigma2_corr_idx_];
    double prop = s_.sigma2_corr + std::sqrt(f.value) * rng_.normal();
    if (!(prop > 0.0)) {
      f.record(false, after_burn_in_);
      return;
    }
    auto target = [&](double v) { return -0.5 * n * std::log(v) - 0.5 * current->S / v + variance_prior_logpdf(v, prior); };
    bool accept = std::log(rng_.uniform_open()) < target(prop) - target(s_.sigma2_corr);
    f.record(accept, after_burn_in_);
    if (accept) s_.sigma2_corr = prop;
  }

  void step_c_omega() {
    int n_on = static_cast<int>(detail::selected_of(s_.varphi).size());
    s_.c_omega = scale_update(s_.c_omega, n_on, s_.omega.squaredNorm(), m_->hyper.c_omega, c_omega_idx_);
  }

  void step_c_eta() {
    auto current = theta_marginal(s_.nu, s_.omega);
    if (!current) throw numerical_error("current correlation-center selection is rank deficient");
    detail::ScaleTarget f{0.5 * current->exponent, 0.5 * current->quad / s_.sigma2_corr, m_->hyper.c_eta.a,
                          m_->hyper.c_eta.b};
    s_.c_eta = mode_proposal(f, s_.c_eta, c_eta_g2_idx_, c_eta_walk_idx_);
  }

  void step_eta() {
    auto current = theta_marginal(s_.nu, s_.omega);
    if (!current) throw numerical_error("current correlation-center selection is rank deficient");
    const double shrink = s_.c_eta / (1.0 + s_.c_eta);
    s_.eta.setZero();
    for (int h = 0; h < m_->n_clusters; ++h) {
      auto sel = cluster_columns(s_.nu[h]);
      Eigen::VectorXd draw;
      if (current->empty[h]) {
        draw = std::sqrt(s_.c_eta * s_.sigma2_corr) * rng_.normal_vector(static_cast<Eigen::Index>(sel.size()));
      } else {
        auto llt = checked_cholesky(current->gram[h]);
        if (!llt) throw numerical_error("singular correlation-center design in eta update");
        Eigen::VectorXd mean = shrink * llt->solve(current->zty[h]);
        draw = mean + std::sqrt(shrink * s_.sigma2_corr) * llt->matrixU().solve(rng_.normal_vector(mean.size()));
      }
      for (std::size_t c = 0; c < sel.size(); ++c) s_.eta(h, sel[c]) = draw(c);
    }
  }

  // -------------------------------------------------------- grouped variants

  void step_sticks() {
    auto counts = component_counts(s_.labels);
    s_.sticks = sample_sticks(rng_, counts, s_.concentration);
    s_.weights = stick_breaking(s_.sticks);
  }

  void step_labels() {
    const int d = m_->d;
    const int M = data_->n_times();
    const int K = m_->n_components;
    // per-row log dispersion and fitted center under each cluster
    Eigen::VectorXd logdisp = m_->corr_dispersion.base * s_.omega;  // M
    Eigen::MatrixXd center(M, m_->n_clusters);
    for (int h = 0; h < m_->n_clusters; ++h) center.col(h) = m_->corr_mean.base * s_.eta.row(h).transpose();
    auto pair_loglik = [&](int q, int h) {
      double v = 0.0;
      for (int t = 0; t < M; ++t) {
        double var = s_.sigma2_corr * std::exp(logdisp(t));
        double z = s_.theta(t * d + q) - center(t, h);
        v += -0.5 * (log_two_pi + std::log(var) + z * z / var);
      }
      return v;
    };
    // g-prior bookkeeping for eta_h as a function of the number of pairs in cluster h
    std::vector<std::optional<Eigen::LLT<Eigen::MatrixXd>>> kfac(m_->n_clusters);
    std::vector<double> quad(m_->n_clusters), norm2(m_->n_clusters);
    std::vector<int> width(m_->n_clusters);
    for (int h = 0; h < m_->n_clusters; ++h) {
      auto sel = cluster_columns(s_.nu[h]);
      width[h] = static_cast<int>(sel.size());
      Eigen::MatrixXd Kh = Eigen::MatrixXd::Zero(sel.size(), sel.size());
      for (int t = 0; t < M; ++t) {
        Eigen::VectorXd z(sel.size());
        for (std::size_t c = 0; c < sel.size(); ++c) z(c) = m_->corr_mean.base(t, sel[c]);
        Kh.noalias() += z * z.transpose() / std::exp(logdisp(t));
      }
      Eigen::VectorXd eta = select_entries(s_.eta.row(h).transpose(), sel);
      kfac[h] = checked_cholesky(Kh);
      quad[h] = eta.dot(Kh * eta);
      norm2[h] = eta.squaredNorm();
    }
    const double cs = s_.c_eta * s_.sigma2_corr;
    auto gp = [&](int h, int members) -> double {
      const double w = width[h];
      double v = -0.5 * w * (log_two_pi + std::log(cs));
      if (members == 0) return v - 0.5 * norm2[h] / cs;
      if (!kfac[h]) return -std::numeric_limits<double>::infinity();
      return v + 0.5 * (w * std::log(static_cast<double>(members)) + log_det(*kfac[h])) - 0.5 * members * quad[h] / cs;
    };
    auto pair_counts = [&](const std::vector<int>& labels) {
      std::vector<int> n(m_->n_clusters, 0);
      for (int q = 0; q < d; ++q) ++n[m_->cluster_of_pair(labels, q)];
      return n;
    };
    auto total_gp = [&](const std::vector<int>& labels) {
      auto n = pair_counts(labels);
      double v = 0.0;
      for (int h = 0; h < m_->n_clusters; ++h) v += gp(h, n[h]);
      return v;
    };
    if (m_->variant == CorrelationVariant::grouped_correlations) {
      for (int q = 0; q < d; ++q) {
        std::vector<double> logw(K);
        for (int h = 0; h < K; ++h) {
          auto labels = s_.labels;
          labels[q] = h;
          logw[h] = std::log(s_.weights[h]) + pair_loglik(q, h) + total_gp(labels);
        }
        s_.labels[q] = static_cast<int>(rng_.categorical_log(logw));
      }
    } else {
      const int p = m_->p;
      for (int k = 0; k < p; ++k) {
        std::vector<double> logw(K);
        for (int g = 0; g < K; ++g) {
          auto labels = s_.labels;
          labels[k] = g;
          double v = std::log(s_.weights[g]) + total_gp(labels);
          for (int q = 0; q < d; ++q)
            if (m_->pairs[q].first == k || m_->pairs[q].second == k) v += pair_loglik(q, m_->cluster_of_pair(labels, q));
          logw[g] = v;
        }
        s_.labels[k] = static_cast<int>(rng_.categorical_log(logw));
      }
    }
  }

  void step_concentration() {
    auto counts = component_counts(s_.labels);
    int occupied = 0;
    for (int c : counts) occupied += c > 0 ? 1 : 0;
    s_.concentration = escobar_west_update(rng_, s_.concentration, occupied, m_->n_items(), m_->hyper.concentration);
  }

  // ---------------------------------------------------------------- helpers

  /// theta-marginal quantities for given center indicators and dispersion coefficients.
  struct ThetaMarginal {
    double loglik = 0.0;
    double S = 0.0;
    double quad = 0.0;
    double exponent = 0.0;
    std::vector<Eigen::MatrixXd> gram;
    std::vector<Eigen::VectorXd> zty;
    std::vector<bool> empty;
    std::vector<std::vector<int>> rows;
  };

  std::optional<ThetaMarginal> theta_marginal(const std::vector<std::vector<bool>>& nu, const Eigen::VectorXd& omega,
                                              const Eigen::VectorXd* theta_override = nullptr) const {
    const Eigen::VectorXd& theta = theta_override ? *theta_override : s_.theta;
    const int H = m_->n_clusters;
    const int d = m_->d;
    const Eigen::Index n = theta.size();
    ThetaMarginal out;
    out.gram.resize(H);
    out.zty.resize(H);
    out.empty.assign(H, true);
    out.rows.assign(H, {});
    const double shrink = s_.c_eta / (1.0 + s_.c_eta);
    Eigen::VectorXd logdisp = m_->corr_dispersion.base * omega;
    for (Eigen::Index r = 0; r < n; ++r) {
      int h = m_->cluster_of_pair(s_.labels, static_cast<int>(r % d));
      out.rows[h].push_back(static_cast<int>(r));
    }
    double T = 0.0;
    for (int h = 0; h < H; ++h) {
      auto sel = cluster_columns(nu[h]);
      out.gram[h] = Eigen::MatrixXd::Zero(sel.size(), sel.size());
      out.zty[h] = Eigen::VectorXd::Zero(sel.size());
      if (out.rows[h].empty()) continue;
      out.empty[h] = false;
      Eigen::VectorXd z(sel.size());
      for (int r : out.rows[h]) {
        const int t = r / d;
        double w = std::exp(-0.5 * logdisp(t));
        for (std::size_t c = 0; c < sel.size(); ++c) z(c) = w * m_->corr_mean.base(t, sel[c]);
        double y = w * theta(r);
        out.gram[h].noalias() += z * z.transpose();
        out.zty[h].noalias() += y * z;
        T += y * y;
      }
      auto llt = checked_cholesky(out.gram[h]);
      if (!llt) return std::nullopt;
      out.quad += out.zty[h].dot(llt->solve(out.zty[h]));
      out.exponent += static_cast<double>(sel.size());
    }
    out.S = T - shrink * out.quad;
    double sum_logdisp = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) sum_logdisp += logdisp(r / d);
    out.loglik = -0.5 * n * (log_two_pi + std::log(s_.sigma2_corr)) - 0.5 * sum_logdisp -
                 0.5 * out.exponent * std::log1p(s_.c_eta) - 0.5 * out.S / s_.sigma2_corr;
    return out;
  }

  /// Prior precision of theta with eta integrated out.
  Eigen::MatrixXd theta_prior_precision() const {
    const int d = m_->d;
    const Eigen::Index n = s_.theta.size();
    Eigen::VectorXd logdisp = m_->corr_dispersion.base * s_.omega;
    Eigen::VectorXd inv_sd(n);
    for (Eigen::Index r = 0; r < n; ++r) inv_sd(r) = std::exp(-0.5 * logdisp(r / d));
    Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(n, n);
    prec.diagonal() = inv_sd.array().square().matrix() / s_.sigma2_corr;
    const double shrink = s_.c_eta / (1.0 + s_.c_eta);
    std::vector<std::vector<int>> rows(m_->n_clusters);
    for (Eigen::Index r = 0; r < n; ++r) rows[m_->cluster_of_pair(s_.labels, static_cast<int>(r % d))].push_back(static_cast<int>(r));
    for (int h = 0; h < m_->n_clusters; ++h) {
      if (rows[h].empty()) continue;
      auto sel = cluster_columns(s_.nu[h]);
      Eigen::MatrixXd Z(rows[h].size(), sel.size());
      for (std::size_t a = 0; a < rows[h].size(); ++a)
        for (std::size_t c = 0; c < sel.size(); ++c)
          Z(a, c) = inv_sd(rows[h][a]) * m_->corr_mean.base(rows[h][a] / d, sel[c]);
      auto llt = checked_cholesky(Z.transpose() * Z);
      if (!llt) throw numerical_error("rank-deficient correlation-center design in theta prior");
      Eigen::MatrixXd proj = Z * llt->solve(Z.transpose());
      for (std::size_t a = 0; a < rows[h].size(); ++a)
        for (std::size_t b = 0; b < rows[h].size(); ++b)
          prec(rows[h][a], rows[h][b]) -= shrink * inv_sd(rows[h][a]) * proj(a, b) * inv_sd(rows[h][b]) / s_.sigma2_corr;
    }
    return prec;
  }

  std::vector<int> component_counts(const std::vector<int>& labels) const {
    std::vector<int> counts(m_->n_components, 0);
    for (int lab : labels) ++counts[lab];
    return counts;
  }

  static std::vector<int> cluster_columns(const std::vector<bool>& nu) {
    std::vector<int> out{0};
    for (std::size_t c = 0; c < nu.size(); ++c)
      if (nu[c]) out.push_back(static_cast<int>(c) + 1);
    return out;
  }

 private:
  struct GaussianProposal {
    Eigen::VectorXd mean;
    Eigen::LLT<Eigen::MatrixXd> prec;  // of (Delta^{-1} / h)
    Eigen::VectorXd draw(Rng& rng) const { return mean + prec.matrixU().solve(rng.normal_vector(mean.size())); }
    double logpdf(const Eigen::VectorXd& x) const { return mvn_logpdf_precision(x, mean, prec); }
  };

  /// One-step IRLS proposal N(Delta W' z / 2, h Delta), Delta = (I / c + W'W / 2)^{-1}; the squared residuals have
  /// Gamma dispersion 2, so W'W / 2 is the Fisher information of the log-linear variance model.
  static GaussianProposal irls_proposal(const Eigen::MatrixXd& W, const std::vector<int>& sel, const Eigen::VectorXd& z,
                                        double c, double h) {
    Eigen::MatrixXd Ws = select_columns(W, sel);
    Eigen::MatrixXd dinv = 0.5 * (Ws.transpose() * Ws);
    dinv.diagonal().array() += 1.0 / c;
    GaussianProposal g;
    Eigen::LLT<Eigen::MatrixXd> llt(dinv);
    g.mean = llt.solve(0.5 * (Ws.transpose() * z));
    g.prec = Eigen::LLT<Eigen::MatrixXd>(dinv / h);
    return g;
  }

  Eigen::VectorXd variance_working_response(int k, const Eigen::MatrixXd& var, const Eigen::VectorXd& beta_hat,
                                            const std::vector<MeanColumn>& cols, const std::vector<int>& effect_cols,
                                            const Eigen::MatrixXd& alpha) const {
    Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(m_->p, m_->mean.n_columns());
    for (std::size_t c = 0; c < cols.size(); ++c) beta(cols[c].response, cols[c].column) = beta_hat(c);
    Eigen::MatrixXd r = data_->responses() - m_->mean.matrix * beta.transpose();
    Eigen::MatrixXd e = prediction_errors(*data_, ar_, r);
    const Eigen::MatrixXd& W = m_->variance.matrix;
    Eigen::VectorXd z(data_->n_obs());
    for (int o = 0; o < data_->n_obs(); ++o) {
      double v = var(o, k);
      double eff = 0.0;
      for (int c : effect_cols) eff += W(o, c) * alpha(k, c);
      double dwork = std::log(v) + (e(o, k) * e(o, k) - v) / v;
      z(o) = dwork - (std::log(v) - eff);
    }
    return z;
  }

  Eigen::VectorXd dispersion_working_response(const ThetaMarginal& tm, const std::vector<std::vector<bool>>& nu,
                                              const Eigen::VectorXd& omega) const {
    const int d = m_->d;
    const Eigen::Index n = s_.theta.size();
    const double shrink = s_.c_eta / (1.0 + s_.c_eta);
    Eigen::VectorXd logdisp = m_->corr_dispersion.base * omega;
    Eigen::VectorXd z(n);
    for (int h = 0; h < m_->n_clusters; ++h) {
      if (tm.empty[h]) continue;
      auto sel = cluster_columns(nu[h]);
      Eigen::VectorXd eta_hat = shrink * tm.gram[h].llt().solve(tm.zty[h]);
      for (int r : tm.rows[h]) {
        const int t = r / d;
        double fit = 0.0;
        for (std::size_t c = 0; c < sel.size(); ++c) fit += m_->corr_mean.base(t, sel[c]) * eta_hat(c);
        double e = (s_.theta(r) - fit) * (s_.theta(r) - fit);
        double v = s_.sigma2_corr * std::exp(logdisp(t));
        z(r) = std::log(v) + (e - v) / v - std::log(s_.sigma2_corr);
      }
    }
    return z;
  }

  MarginalY marginal_for(const Eigen::MatrixXd& var, const std::vector<MeanColumn>& cols) const {
    auto sys = whiten_system(*data_, ar_, var, corr_, data_->responses(), m_->mean.matrix, cols);
    return marginal_from_system(sys, s_.c_beta, &cols);
  }

  std::optional<MarginalY> try_marginal_for(const Eigen::MatrixXd& var, const std::vector<MeanColumn>& cols) const {
    auto sys = whiten_system(*data_, ar_, var, corr_, data_->responses(), m_->mean.matrix, cols);
    if (!sys.xtx.allFinite() || !std::isfinite(sys.yty) || !checked_cholesky(sys.xtx)) return std::nullopt;
    return marginal_from_system(sys, s_.c_beta);
  }

  Eigen::VectorXd beta_selected(const std::vector<MeanColumn>& cols) const {
    Eigen::VectorXd out(cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) out(c) = s_.beta(cols[c].response, cols[c].column);
    return out;
  }

  double mean_gprior(const AutoregressiveBlocks& ar, const Eigen::MatrixXd& var, const CorrelationFactors& corr,
                     const std::vector<MeanColumn>& cols, const Eigen::VectorXd& beta_sel) const {
    auto sys = whiten_system(*data_, ar, var, corr, data_->responses(), m_->mean.matrix, cols, false);
    if (!checked_cholesky(sys.xtx)) return -std::numeric_limits<double>::infinity();
    return g_prior_logpdf(beta_sel, s_.c_beta, sys.xtx);
  }

  Eigen::MatrixXd time_gram(int t, const CorrelationFactors& corr, const std::vector<MeanColumn>& cols) const {
    WhitenedSystem sys;
    sys.xtx = Eigen::MatrixXd::Zero(cols.size(), cols.size());
    sys.xty = Eigen::VectorXd::Zero(cols.size());
    accumulate_whitened(*data_, ar_, var_, corr, data_->responses(), m_->mean.matrix, cols, obs_at_time_[t], sys, false);
    return sys.xtx;
  }

  /// Sufficient statistics of Q as a quadratic in the stacked autoregressive coefficients.
  void ar_statistics(const Eigen::MatrixXd& r, Eigen::MatrixXd& G, Eigen::VectorXd& h) const {
    const int p = m_->p;
    const int qa = m_->ar.n_columns();
    const int D = p * qa;
    Eigen::VectorXd v(D);
    for (int i = 0; i < data_->n_subjects(); ++i) {
      const int off = data_->offset(i);
      for (int j = 1; j < data_->n_visits(i); ++j) {
        const int o = off + j;
        v.setZero();
        for (int k = 0; k < j; ++k) {
          auto z = m_->ar.matrix.row(m_->lag_pairs.row(i, j, k));
          for (int mm = 0; mm < p; ++mm) v.segment(mm * qa, qa).noalias() += r(off + k, mm) * z.transpose();
        }
        Eigen::VectorXd sd = var_.row(o).transpose().array().sqrt();
        const int t = data_->time_index(o);
        // D^{-1} = S^{-1/2} R^{-1} S^{-1/2}
        Eigen::MatrixXd rinv = corr_.lower[t].triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(p, p));
        rinv = (rinv.transpose() * rinv).eval();
        Eigen::MatrixXd dinv = sd.cwiseInverse().asDiagonal() * rinv * sd.cwiseInverse().asDiagonal();
        Eigen::VectorXd dr = dinv * r.row(o).transpose();
        Eigen::MatrixXd vv = v * v.transpose();
        for (int l = 0; l < p; ++l) {
          h.segment(l * D, D).noalias() += dr(l) * v;
          for (int l2 = 0; l2 < p; ++l2) G.block(l * D, l2 * D, D, D).noalias() += dinv(l, l2) * vv;
        }
      }
    }
  }

  Eigen::VectorXd flatten_psi(const Eigen::MatrixXd& psi) const {
    const int p = m_->p;
    const int qa = m_->ar.n_columns();
    Eigen::VectorXd out(p * p * qa);
    for (int lm = 0; lm < p * p; ++lm) out.segment(lm * qa, qa) = psi.row(lm).transpose();
    return out;
  }

  /// Normal-approximation proposal around the mode, with a log-scale random walk fallback.
  /// Normal-approximation proposal at the Newton mode, followed by a log-scale random walk.
  double mode_proposal(const detail::ScaleTarget& f, double current, int g2_idx, int walk_idx) {
    auto mode = detail::newton_mode(f, current);
    if (mode) {
      TuningScalar& g2 = tune_[g2_idx];
      double var = -g2.value / f.second(*mode);
      double prop = *mode + std::sqrt(var) * rng_.normal();
      if (prop > 0.0) {
        double log_ratio = f.value(prop) - f.value(current) + detail::normal_logpdf(current, *mode, var) -
                           detail::normal_logpdf(prop, *mode, var);
        bool accept = std::log(rng_.uniform_open()) < log_ratio;
        g2.record(accept, after_burn_in_);
        if (accept) current = prop;
      } else {
        g2.record(false, after_burn_in_);
      }
    }
    TuningScalar& w = tune_[walk_idx];
    double prop = current * std::exp(std::sqrt(w.value) * rng_.normal());
    double log_ratio = f.value(prop) - f.value(current) + std::log(prop) - std::log(current);
    bool accept = std::log(rng_.uniform_open()) < log_ratio;
    w.record(accept, after_burn_in_);
    return accept ? prop : current;
  }

  /// Update of a coefficient-prior variance: conjugate for IG priors, log-scale random walk for half-normal.
  double scale_update(double current, int n_on, double sum_sq, const ScalePrior& prior, int idx) {
    if (prior.kind == ScalePrior::Kind::inverse_gamma) return rng_.inv_gamma(prior.a + 0.5 * n_on, prior.b + 0.5 * sum_sq);
    TuningScalar& v = tune_[idx];
    double prop = current * std::exp(std::sqrt(v.value) * rng_.normal());
    auto target = [&](double c) { return -0.5 * n_on * std::log(c) - 0.5 * sum_sq / c + variance_prior_logpdf(c, prior); };
    double log_ratio = target(prop) - target(current) + std::log(prop) - std::log(current);
    bool accept = std::log(rng_.uniform_open()) < log_ratio;
    v.record(accept, after_burn_in_);
    return accept ? prop : current;
  }

  template <typename F>
  void run_step(const char* name, F&& fn) {
    try {
      fn();
    } catch (const std::exception& ex) {
      throw std::runtime_error("iteration " + std::to_string(iteration_) + ", step " + name + ": " + ex.what());
    }
  }

  void refresh_all() {
    ar_ = autoregressive_from_coefficients(*data_, m_->ar.matrix, s_.psi);
    refresh_variances();
    corr_ = CorrelationFactors(s_.R);
  }

  void refresh_variances() {
    var_.resize(data_->n_obs(), m_->p);
    for (int k = 0; k < m_->p; ++k)
      var_.col(k) = (std::log(s_.sigma2(k)) + (m_->variance.matrix * s_.alpha.row(k).transpose()).array()).exp().matrix();
  }

  static std::vector<bool> initial_indicators(const Design& design, bool skip_intercept) {
    std::vector<bool> out;
    if (design.intercept && !skip_intercept) out.push_back(true);
    for (const auto& term : design.terms)
      for (int c = 0; c < term.width(); ++c) out.push_back(c == 0);
    return out;
  }

  void initialize() {
    const int p = m_->p;
    const int M = data_->n_times();
    const int d = m_->d;
    obs_at_time_.assign(M, {});
    for (int o = 0; o < data_->n_obs(); ++o) obs_at_time_[data_->time_index(o)].push_back(o);

    s_.gamma.assign(p, initial_indicators(m_->mean, true));
    s_.beta = Eigen::MatrixXd::Zero(p, m_->mean.n_columns());
    s_.c_beta = m_->hyper.c_beta.b / (m_->hyper.c_beta.a + 1.0);
    s_.xi.assign(p * p, initial_indicators(m_->ar, false));
    s_.psi = Eigen::MatrixXd::Zero(p * p, m_->ar.n_columns());
    s_.c_psi = Eigen::VectorXd::Ones(p * p);
    s_.delta.assign(p, initial_indicators(m_->variance, true));
    s_.alpha = Eigen::MatrixXd::Zero(p, m_->variance.n_columns());
    s_.sigma2.resize(p);
    for (int k = 0; k < p; ++k) {
      const auto y = data_->responses().col(k);
      double mean = y.mean();
      double v = data_->n_obs() > 1 ? (y.array() - mean).square().sum() / (data_->n_obs() - 1.0) : 1.0;
      s_.sigma2(k) = v > 0.0 ? v : 1.0;
    }
    s_.c_alpha = Eigen::VectorXd::Ones(p);
    s_.R.assign(M, Eigen::MatrixXd::Identity(p, p));
    s_.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M) * d);
    s_.nu.assign(m_->n_clusters, initial_indicators(m_->corr_mean, true));
    s_.eta = Eigen::MatrixXd::Zero(m_->n_clusters, m_->corr_mean.n_columns());
    s_.varphi = initial_indicators(m_->corr_dispersion, true);
    s_.omega = Eigen::VectorXd::Zero(m_->corr_dispersion.n_columns());
    s_.sigma2_corr = 1.0;
    s_.c_eta = m_->hyper.c_eta.b / (m_->hyper.c_eta.a + 1.0);
    s_.c_omega = 1.0;
    const int K = m_->n_components;
    s_.labels.assign(m_->variant == CorrelationVariant::grouped_variables ? p : std::max(d, 0), 0);
    if (m_->variant == CorrelationVariant::common) s_.labels.clear();
    s_.sticks.assign(std::max(0, K - 1), 0.0);
    for (int h = 0; h + 1 < K; ++h) s_.sticks[h] = 1.0 / (K - h);
    s_.weights = stick_breaking(s_.sticks);
    s_.concentration = m_->hyper.concentration.a / m_->hyper.concentration.b;

    // tuning scalars
    const double n_obs = std::max(1, data_->n_obs());
    gamma_idx_ = tune_.add("gamma", 1.0, 1.0, 1.0, false);
    c_beta_g2_idx_ = tune_.add("c_beta.g2", 1.0, 1e-3, 1e3);
    c_beta_walk_idx_ = tune_.add("c_beta.walk", 0.25, 1e-6, 1e2);
    h_idx_.assign(p, {});
    for (int k = 0; k < p; ++k)
      for (std::size_t l = 0; l < m_->variance_effects.size(); ++l)
        h_idx_[k].push_back(tune_.add("alpha[" + std::to_string(k) + "].h[" + std::to_string(l) + "]", 1.0, 1.0, 1e3));
    for (int k = 0; k < p; ++k) {
      double sd = 2.4 * s_.sigma2(k) * std::sqrt(2.0 / n_obs);
      sigma2_idx_.push_back(tune_.add("sigma2[" + std::to_string(k) + "].v2", sd * sd, 1e-12, 1e6));
    }
    for (int k = 0; k < p; ++k) c_alpha_idx_.push_back(tune_.add("c_alpha[" + std::to_string(k) + "].v2", 0.25, 1e-8, 1e4));
    xi_idx_ = tune_.add("xi_psi", 1.0, 1.0, 1.0, false);
    for (int lm = 0; lm < p * p; ++lm)
      c_psi_idx_.push_back(tune_.add("c_psi[" + std::to_string(lm / p) + "," + std::to_string(lm % p) + "].s2", 0.25, 1e-8, 1e4));
    if (m_->has_correlation()) {
      for (int t = 0; t < M; ++t)
        zeta_idx_.push_back(tune_.add("R[" + std::to_string(t) + "].zeta", p + 10.0, p + 2.0, p + config_.zeta_span, true, true));
      nu_idx_ = tune_.add("nu", 1.0, 1.0, 1.0, false);
      omega_h_idx_ = tune_.add("omega.h", 1.0, 1.0, 1e3);
      sigma2_corr_idx_ = tune_.add("sigma2_corr.f2", 0.01, 1e-10, 1e4);
      c_omega_idx_ = tune_.add("c_omega.f2", 0.25, 1e-8, 1e4);
      c_eta_g2_idx_ = tune_.add("c_eta.g2", 1.0, 1e-3, 1e3);
      c_eta_walk_idx_ = tune_.add("c_eta.walk", 0.25, 1e-6, 1e2);
    }
    refresh_all();
  }

  const LongitudinalDataset* data_;
  const ModelDesign* m_;
  ChainConfig config_;
  Rng rng_;
  ParameterState s_;
  TuningState tune_;
  bool after_burn_in_ = false;
  bool adapting_ = true;
  int iteration_ = 0;

  AutoregressiveBlocks ar_;
  Eigen::MatrixXd var_;
  CorrelationFactors corr_;
  std::vector<std::vector<int>> obs_at_time_;

  int gamma_idx_ = -1, c_beta_g2_idx_ = -1, c_beta_walk_idx_ = -1, xi_idx_ = -1, nu_idx_ = -1;
  int omega_h_idx_ = -1, sigma2_corr_idx_ = -1, c_omega_idx_ = -1, c_eta_g2_idx_ = -1, c_eta_walk_idx_ = -1;
  std::vector<std::vector<int>> h_idx_;
  std::vector<int> sigma2_idx_, c_alpha_idx_, c_psi_idx_, zeta_idx_;
};

}  // namespace mvlong

#endif
