#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvlong/mvlong.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace mvlong;
using mvlong::testing::batch_means_se;
using mvlong::testing::ks_two_sample_pvalue;
using mvlong::testing::mean_of;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << x;
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double sample_sd(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1.0));
}

// ------------------------------------------------------------ dense oracles

/// Block-diagonal covariance of all stacked observations (observation-major, response-minor).
Eigen::MatrixXd dense_sigma(const LongitudinalDataset& data, const CovarianceFactors& f) {
  const int p = data.response_dim();
  const int n = data.n_obs() * p;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < data.n_subjects(); ++i) {
    const int at = data.offset(i) * p;
    const int len = data.n_visits(i) * p;
    s.block(at, at, len, len) = subject_sigma(data, f, i);
  }
  return s;
}

Eigen::VectorXd stacked(const Eigen::MatrixXd& y) {
  Eigen::VectorXd out(y.size());
  for (Eigen::Index o = 0; o < y.rows(); ++o) out.segment(o * y.cols(), y.cols()) = y.row(o).transpose();
  return out;
}

/// Kronecker-structured mean design for the selected (response, column) pairs.
Eigen::MatrixXd dense_design(const Eigen::MatrixXd& x, int p, const std::vector<MeanColumn>& cols) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows() * p, static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index o = 0; o < x.rows(); ++o)
    for (std::size_t a = 0; a < cols.size(); ++a) out(o * p + cols[a].response, a) = x(o, cols[a].column);
  return out;
}

double dense_gaussian_logpdf(const Eigen::VectorXd& y, const Eigen::MatrixXd& cov) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  return -0.5 * y.size() * log_two_pi - 0.5 * ldlt.vectorD().array().log().sum() - 0.5 * y.dot(ldlt.solve(y));
}

Eigen::MatrixXd random_correlation(Rng& rng, int p) {
  Eigen::MatrixXd a(p, p + 3);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p + 3; ++j) a(i, j) = rng.normal();
  Eigen::MatrixXd s = a * a.transpose();
  Eigen::VectorXd d = s.diagonal().array().rsqrt();
  Eigen::MatrixXd r = d.asDiagonal() * s * d.asDiagonal();
  r.diagonal().setOnes();
  return r;
}

// ------------------------------------------------------------ criterion 1

Outcome likelihood_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst_route = 0.0, worst_dense_q = 0.0, worst_marginal = 0.0;
  int dense_checked = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int p = 1 + inst % 3;
    const int n = 2 + (inst / 3) % 5;
    std::vector<SubjectRecord> subs;
    for (int i = 0; i < n; ++i) {
      SubjectRecord s;
      s.id = "s" + std::to_string(i);
      const int ni = 1 + static_cast<int>(rng.index(4));
      s.responses.resize(ni, p);
      s.covariates.resize(ni, 1);
      double t = 0.1 * static_cast<double>(rng.index(3));
      for (int j = 0; j < ni; ++j) {
        s.times.push_back(t);
        t += 0.1 * (1 + static_cast<double>(rng.index(3)));
        for (int k = 0; k < p; ++k) s.responses(j, k) = rng.normal();
        s.covariates(j, 0) = rng.normal();
      }
      subs.push_back(s);
    }
    std::vector<std::string> names;
    for (int k = 0; k < p; ++k) names.push_back("y" + std::to_string(k));
    LongitudinalDataset data(subs, names, {"x"});
    Design lag = build_design(data, {{"lag", TermKind::parametric, 0}}, RowDomain::lag_pairs);
    Design mean = build_design(data, {{"x", TermKind::parametric, 0}}, RowDomain::observations);
    Eigen::MatrixXd psi(p * p, lag.n_columns());
    for (Eigen::Index r = 0; r < psi.rows(); ++r)
      for (Eigen::Index c = 0; c < psi.cols(); ++c) psi(r, c) = 0.3 * rng.normal();
    CovarianceFactors f;
    f.ar = autoregressive_from_coefficients(data, lag.matrix, psi);
    f.innovation.variances.resize(data.n_obs(), p);
    for (int o = 0; o < data.n_obs(); ++o)
      for (int k = 0; k < p; ++k) f.innovation.variances(o, k) = std::exp(0.5 * rng.normal());
    for (int t = 0; t < data.n_times(); ++t) f.innovation.correlations.push_back(random_correlation(rng, p));

    Eigen::MatrixXd r = data.responses();
    const double q1 = quadratic_form_prediction(data, f, r);
    const double q2 = quadratic_form_standardized(data, f, r);
    const double q3 = quadratic_form_dynamic(data, f.innovation, r, lag.matrix, psi);
    worst_route = std::max({worst_route, std::abs(q2 - q1) / std::abs(q1), std::abs(q3 - q1) / std::abs(q1)});

    if (data.n_obs() * p > 30) continue;
    ++dense_checked;
    Eigen::MatrixXd sigma = dense_sigma(data, f);
    Eigen::VectorXd y = stacked(r);
    const double q_dense = y.dot(sigma.ldlt().solve(y));
    worst_dense_q = std::max(worst_dense_q, std::abs(q1 - q_dense) / std::abs(q_dense));

    std::vector<std::vector<bool>> gamma(p, std::vector<bool>(mean.n_columns() - 1, false));
    if (data.n_obs() >= 3) gamma[0][0] = true;
    const double c = 0.5 + 4.0 * rng.uniform();
    auto cols = selected_mean_columns(gamma);
    Eigen::MatrixXd X = dense_design(mean.matrix, p, cols);
    Eigen::MatrixXd info = X.transpose() * sigma.ldlt().solve(X);
    if (!is_positive_definite(info)) continue;
    Eigen::MatrixXd cov = sigma + c * X * info.ldlt().solve(X.transpose());
    const double oracle = dense_gaussian_logpdf(y, cov);
    const double got = marginal_loglik_Y(data, f, mean.matrix, gamma, c).loglik;
    worst_marginal = std::max(worst_marginal, std::abs(got - oracle) / std::max(1.0, std::abs(oracle)));
  }
  const double secs = seconds_since(start);
  Outcome out;
  out.pass = worst_route < 1e-8 && worst_dense_q < 1e-8 && worst_marginal < 1e-8 && dense_checked > 0 && secs < 60.0;
  out.detail = "max rel. difference between Q routes " + fmt(worst_route) + ", Q vs dense " + fmt(worst_dense_q) +
               ", marginal vs dense " + fmt(worst_marginal) + " over " + std::to_string(dense_checked) +
               " dense instances, " + fmt(secs, 3) + " s";
  return out;
}

// ------------------------------------------------------------ criterion 2

Outcome conjugate_beta() {
  const auto start = std::chrono::steady_clock::now();
  auto data = gen_study2(30, 0.5, 0.1, 17);
  ModelSpec spec;
  spec.mean_terms = {{"time", TermKind::smooth, 2}};
  spec.ar_terms = {{"lag", TermKind::parametric, 0}};
  spec.variance_terms = {{"time", TermKind::parametric, 0}};
  auto m = build_model_design(data, spec);
  ChainConfig cfg;
  cfg.seed = 23;
  Sampler sampler(data, m, cfg);
  ParameterState st = sampler.state();
  Rng rng(5);
  for (auto& g : st.gamma) std::fill(g.begin(), g.end(), true);
  st.gamma[2].back() = false;
  st.c_beta = 4.0;
  for (Eigen::Index r = 0; r < st.psi.rows(); ++r) st.psi(r, 0) = 0.2 * rng.normal();
  st.alpha.setConstant(0.3);
  for (auto& R : st.R) R = random_correlation(rng, 3);
  sampler.set_state(st);

  auto cols = selected_mean_columns(st.gamma);
  auto f = factors_of(data, m, st);
  Eigen::MatrixXd sigma = dense_sigma(data, f);
  Eigen::MatrixXd X = dense_design(m.mean.matrix, 3, cols);
  Eigen::VectorXd y = stacked(data.responses());
  Eigen::MatrixXd sx = sigma.ldlt().solve(X);
  Eigen::MatrixXd info = X.transpose() * sx;
  Eigen::VectorXd oracle = st.c_beta / (1.0 + st.c_beta) * info.ldlt().solve(sx.transpose() * y);

  const int draws = 10000;
  std::vector<std::vector<double>> chain(cols.size());
  for (int it = 0; it < draws; ++it) {
    sampler.step_beta();
    for (std::size_t a = 0; a < cols.size(); ++a)
      chain[a].push_back(sampler.state().beta(cols[a].response, cols[a].column));
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < cols.size(); ++a) {
    const double se = sample_sd(chain[a]) / std::sqrt(static_cast<double>(draws));
    worst = std::max(worst, std::abs(mean_of(chain[a]) - oracle(a)) / se);
  }
  const double secs = seconds_since(start);
  return {worst < 3.0 && secs < 60.0, "max |chain mean - closed form| / s.e. = " + fmt(worst) + " over " +
                                          std::to_string(cols.size()) + " coefficients, " + fmt(secs, 3) + " s"};
}

// ------------------------------------------------------------ criterion 3

Outcome proposal_moments() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(303);
  const int N = 100000;
  // inverse-Wishart proposal: with no data its mean is E^(u); with a scatter S it is (S + (zeta-p-1)E)/(n+zeta-p-1)
  const int p = 3;
  Eigen::MatrixXd E = innovation_block(Eigen::Vector3d(0.8, 1.3, 0.5), random_correlation(rng, p));
  const double zeta = 14.0;
  const double nt = 6.0;
  Eigen::MatrixXd S = random_correlation(rng, p) * nt;
  double worst_iw = 0.0;
  for (int with_data = 0; with_data < 2; ++with_data) {
    const double df = zeta + (with_data ? nt : 0.0);
    Eigen::MatrixXd psi = (zeta - p - 1.0) * E + (with_data ? S : Eigen::MatrixXd::Zero(p, p));
    Eigen::MatrixXd target = psi / (df - p - 1.0);
    std::vector<std::vector<double>> entries(p * p);
    for (int it = 0; it < N; ++it) {
      Eigen::MatrixXd w = rinv_wishart(rng, df, psi);
      for (int a = 0; a < p * p; ++a) entries[a].push_back(w(a / p, a % p));
    }
    for (int a = 0; a < p * p; ++a) {
      const double se = sample_sd(entries[a]) / std::sqrt(static_cast<double>(N));
      worst_iw = std::max(worst_iw, std::abs(mean_of(entries[a]) - target(a / p, a % p)) / se);
    }
  }

  // stick-breaking weights
  double worst_sum = 0.0;
  for (int it = 0; it < N; ++it) {
    const int K = 2 + it % 9;
    std::vector<int> counts(K);
    for (auto& c : counts) c = static_cast<int>(rng.index(5));
    auto w = stick_breaking(sample_sticks(rng, counts, 0.1 + 5.0 * rng.uniform()));
    double sum = 0.0;
    for (double x : w) sum += x;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }

  // Escobar-West update against direct sampling of the two-Gamma mixture
  const GammaParams prior{2.0, 1.5};
  const double alpha = 1.7;
  const int k = 3, n = 12;
  std::vector<double> update, direct;
  for (int it = 0; it < N; ++it) update.push_back(escobar_west_update(rng, alpha, k, n, prior));
  std::mt19937_64 gen(909);
  auto gamma_draw = [&](double shape, double rate) { return std::gamma_distribution<double>(shape, 1.0 / rate)(gen); };
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int it = 0; it < N; ++it) {
    const double g1 = gamma_draw(alpha + 1.0, 1.0), g2 = gamma_draw(static_cast<double>(n), 1.0);
    const double eta = g1 / (g1 + g2);
    const double rate = prior.b - std::log(eta);
    const double weight = (prior.a + k - 1.0) / (prior.a + k - 1.0 + n * rate);
    direct.push_back(unif(gen) < weight ? gamma_draw(prior.a + k, rate) : gamma_draw(prior.a + k - 1.0, rate));
  }
  const double pvalue = ks_two_sample_pvalue(update, direct);
  const double secs = seconds_since(start);
  Outcome out;
  out.pass = worst_iw < 3.0 && worst_sum < 1e-12 && pvalue > 0.01;
  out.detail = "IW mean max |z| " + fmt(worst_iw) + ", max |sum w - 1| " + fmt(worst_sum) +
               ", Escobar-West KS p = " + fmt(pvalue) + ", " + fmt(secs, 3) + " s";
  return out;
}

// ------------------------------------------------------------ criterion 4

/// Reduced bivariate model on three visit times for the joint-distribution test.
struct GewekeSetup {
  LongitudinalDataset data;
  ModelDesign m;
};

GewekeSetup geweke_setup() {
  Rng rng(404);
  const std::vector<double> times{0.0, 0.4, 1.0};
  std::vector<SubjectRecord> subs;
  for (int i = 0; i < 20; ++i) {
    SubjectRecord s;
    s.id = "g" + std::to_string(i);
    s.times = times;
    s.responses = Eigen::MatrixXd::Zero(3, 2);
    s.covariates.resize(3, 1);
    s.covariates.col(0).setConstant(rng.uniform());
    subs.push_back(s);
  }
  GewekeSetup g{LongitudinalDataset(subs, {"y1", "y2"}, {"x"}), {}};
  ModelSpec spec;
  spec.mean_terms = {{"x", TermKind::parametric, 0}, {"time", TermKind::smooth, 1}};
  spec.ar_terms = {{"lag", TermKind::smooth, 1}};
  spec.variance_terms = {{"time", TermKind::smooth, 1}};
  spec.corr_mean_terms = {{"time", TermKind::smooth, 1}};
  spec.corr_dispersion_terms = {{"time", TermKind::smooth, 1}};
  spec.variant = CorrelationVariant::common;
  spec.tau2 = 0.05;
  auto& h = spec.hyper;
  h.c_beta = {5.0, 4.0};
  h.c_eta = {5.0, 4.0};
  h.c_alpha = ScalePrior::inverse_gamma(5.0, 2.0);
  h.c_omega = ScalePrior::inverse_gamma(5.0, 2.0);
  h.c_psi = ScalePrior::half_normal(0.1);
  h.sigma2_k = ScalePrior::inverse_gamma(6.0, 5.0);
  h.sigma2_corr = ScalePrior::half_normal(0.2);
  g.m = build_model_design(g.data, spec);
  return g;
}

void draw_indicators(Rng& rng, std::vector<bool>& ind, const std::vector<Effect>& effects, int offset,
                     const BetaParams& prior) {
  for (const auto& e : effects) {
    const int q = static_cast<int>(e.columns.size());
    auto v = sample_indicator_block(rng, q, 0, prior, q);
    for (int a = 0; a < q; ++a) ind[e.columns[a] - offset] = v[a];
  }
}

/// Responses drawn from N(X beta, Sigma_i) for every subject of the template.
LongitudinalDataset simulate_responses(const LongitudinalDataset& layout, const ModelDesign& m, const ParameterState& s,
                                       Rng& rng) {
  auto f = factors_of(layout, m, s);
  Eigen::MatrixXd mu = m.mean.matrix * s.beta.transpose();
  auto subs = layout.subjects();
  const int p = m.p;
  for (int i = 0; i < layout.n_subjects(); ++i) {
    const int ni = layout.n_visits(i);
    Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(subject_sigma(layout, f, i)).matrixL();
    Eigen::VectorXd e = chol * rng.normal_vector(ni * p);
    for (int j = 0; j < ni; ++j)
      for (int k = 0; k < p; ++k) subs[i].responses(j, k) = mu(layout.offset(i) + j, k) + e(j * p + k);
  }
  return LongitudinalDataset(subs, layout.response_names(), layout.covariate_names());
}

/// Joint prior draw of every parameter for the common-correlations variant with p = 2.
ParameterState draw_prior(const LongitudinalDataset& layout, const ModelDesign& m, const ParameterState& shape,
                          Rng& rng) {
  const auto& h = m.hyper;
  const int p = m.p;
  ParameterState s = shape;
  // autoregressive and variance models
  for (int lm = 0; lm < p * p; ++lm) {
    draw_indicators(rng, s.xi[lm], m.ar_effects, 0, h.ar_indicators);
    s.c_psi(lm) = sample_variance_prior(rng, h.c_psi);
    for (int c = 0; c < m.ar.n_columns(); ++c) s.psi(lm, c) = s.xi[lm][c] ? std::sqrt(s.c_psi(lm)) * rng.normal() : 0.0;
  }
  for (int k = 0; k < p; ++k) {
    draw_indicators(rng, s.delta[k], m.variance_effects, 0, h.variance_indicators);
    s.c_alpha(k) = sample_variance_prior(rng, h.c_alpha);
    s.sigma2(k) = sample_variance_prior(rng, h.sigma2_k);
    for (int c = 0; c < m.variance.n_columns(); ++c)
      s.alpha(k, c) = s.delta[k][c] ? std::sqrt(s.c_alpha(k)) * rng.normal() : 0.0;
  }
  // correlation model: theta through the centre regression, then R_t through the shadow factor
  const int M = layout.n_times();
  draw_indicators(rng, s.varphi, m.corr_dispersion_effects, 0, h.corr_dispersion_indicators);
  s.c_omega = sample_variance_prior(rng, h.c_omega);
  for (int c = 0; c < m.corr_dispersion.n_columns(); ++c)
    s.omega(c) = s.varphi[c] ? std::sqrt(s.c_omega) * rng.normal() : 0.0;
  s.sigma2_corr = sample_variance_prior(rng, h.sigma2_corr);
  s.c_eta = rng.inv_gamma(h.c_eta.a, h.c_eta.b);
  Eigen::VectorXd logdisp = m.corr_dispersion.base * s.omega;
  std::optional<Eigen::LLT<Eigen::MatrixXd>> gram;
  std::vector<int> sel;
  do {
    draw_indicators(rng, s.nu[0], m.corr_mean_effects, 1, h.corr_mean_indicators);
    sel = Sampler::cluster_columns(s.nu[0]);
    Eigen::MatrixXd Zw(M, sel.size());
    for (int t = 0; t < M; ++t)
      for (std::size_t c = 0; c < sel.size(); ++c) Zw(t, c) = std::exp(-0.5 * logdisp(t)) * m.corr_mean.base(t, sel[c]);
    gram = checked_cholesky(Zw.transpose() * Zw);
  } while (!gram);
  Eigen::VectorXd eta = std::sqrt(s.c_eta * s.sigma2_corr) *
                        gram->matrixU().solve(rng.normal_vector(static_cast<Eigen::Index>(sel.size())));
  s.eta.setZero();
  for (std::size_t c = 0; c < sel.size(); ++c) s.eta(0, sel[c]) = eta(c);
  for (int t = 0; t < M; ++t) {
    const double center = m.corr_mean.base.row(t).dot(s.eta.row(0));
    s.theta(t) = center + std::sqrt(s.sigma2_corr * std::exp(logdisp(t))) * rng.normal();
    const double r = std::tanh(s.theta(t) + std::sqrt(m.tau2) * rng.normal());
    s.R[t] << 1.0, r, r, 1.0;
  }
  // mean model: g-prior given Sigma, with the selection truncated to full-rank designs
  s.c_beta = rng.inv_gamma(h.c_beta.a, h.c_beta.b);
  Eigen::MatrixXd sigma = dense_sigma(layout, factors_of(layout, m, s));
  Eigen::LDLT<Eigen::MatrixXd> sigma_ldlt(sigma);
  std::optional<Eigen::LLT<Eigen::MatrixXd>> info;
  std::vector<MeanColumn> cols;
  do {
    for (int k = 0; k < p; ++k) draw_indicators(rng, s.gamma[k], m.mean_effects, 1, h.mean_indicators);
    cols = selected_mean_columns(s.gamma);
    Eigen::MatrixXd X = dense_design(m.mean.matrix, p, cols);
    info = checked_cholesky(X.transpose() * sigma_ldlt.solve(X));
  } while (!info);
  Eigen::VectorXd beta = std::sqrt(s.c_beta) * info->matrixU().solve(rng.normal_vector(static_cast<Eigen::Index>(cols.size())));
  s.beta.setZero();
  for (std::size_t a = 0; a < cols.size(); ++a) s.beta(cols[a].response, cols[a].column) = beta(a);
  return s;
}

const std::vector<std::string> geweke_names{"beta[y1,intercept]", "beta[y2,time:s0]", "alpha[y1,time]",
                                            "sigma2[y2]",         "psi[0,1,intercept]", "R_1[1,2]",
                                            "theta_0",            "eta[intercept]",     "omega[time]",
                                            "indicators on"};

std::vector<double> geweke_functionals(const ModelDesign& m, const ParameterState& s) {
  int on = 0;
  for (const auto* group : {&s.gamma, &s.xi, &s.delta, &s.nu})
    for (const auto& row : *group)
      for (bool b : row) on += b ? 1 : 0;
  for (bool b : s.varphi) on += b ? 1 : 0;
  return {s.beta(0, 0), s.beta(1, m.mean.n_columns() - 1), s.alpha(0, 0), s.sigma2(1), s.psi(1, 0), s.R[1](0, 1),
          s.theta(0),   s.eta(0, 0),                         s.omega(0),   static_cast<double>(on)};
}

Outcome geweke_test() {
  const auto start = std::chrono::steady_clock::now();
  auto g = geweke_setup();
  const int N = 20000, burn = 2000, F = static_cast<int>(geweke_names.size());
  ChainConfig cfg;
  cfg.seed = 4242;
  cfg.adapt_window = 50;
  Sampler sampler(g.data, g.m, cfg);
  const ParameterState shape = sampler.state();

  // marginal-conditional simulator: independent prior draws
  Rng prior_rng(4343);
  std::vector<std::vector<double>> mc(F);
  for (int it = 0; it < N; ++it) {
    auto f = geweke_functionals(g.m, draw_prior(g.data, g.m, shape, prior_rng));
    for (int a = 0; a < F; ++a) mc[a].push_back(f[a]);
  }

  // successive-conditional simulator: alternate a sampler sweep with fresh responses given the parameters
  Rng data_rng(4444);
  LongitudinalDataset data = simulate_responses(g.data, g.m, draw_prior(g.data, g.m, shape, prior_rng), data_rng);
  sampler.rebind(data);
  sampler.set_state(draw_prior(g.data, g.m, shape, prior_rng));
  data = simulate_responses(g.data, g.m, sampler.state(), data_rng);
  std::vector<std::vector<double>> sc(F);
  for (int it = 0; it < burn + N; ++it) {
    sampler.set_adaptation(it < burn);
    sampler.iterate();
    data = simulate_responses(g.data, g.m, sampler.state(), data_rng);
    if (it < burn) continue;
    auto f = geweke_functionals(g.m, sampler.state());
    for (int a = 0; a < F; ++a) sc[a].push_back(f[a]);
  }

  double worst = 0.0;
  std::string table;
  for (int a = 0; a < F; ++a) {
    const double se1 = sample_sd(mc[a]) / std::sqrt(static_cast<double>(N));
    const double se2 = batch_means_se(sc[a], 50);
    const double z = (mean_of(mc[a]) - mean_of(sc[a])) / std::sqrt(se1 * se1 + se2 * se2);
    worst = std::max(worst, std::abs(z));
    table += (a ? ", " : "") + geweke_names[a] + " " + fmt(z, 3);
  }
  const double secs = seconds_since(start);
  return {worst < 3.0 && secs < 1800.0, "max |z| " + fmt(worst, 3) + " (" + table + "), " + fmt(secs, 4) + " s"};
}

// ------------------------------------------------------------ criteria 5 and 6

ChainConfig desk_chain() {
  ChainConfig chain;
  chain.iterations = 6000;
  chain.burn_in = 2000;
  chain.thin = 2;
  return chain;
}

Outcome study1_direction() {
  const auto start = std::chrono::steady_clock::now();
  auto reps = run_study1(20, 10, desk_chain(), 1, thread_count_from_env());
  const double ir3 = pooled_relative_risk(reps, 3, false);
  const double is3 = pooled_relative_risk(reps, 3, true);
  int dominated = 0;
  for (const auto& r : reps) dominated += r.I_R(3) <= r.I_R(2) ? 1 : 0;
  const double secs = seconds_since(start);
  return {ir3 < 95.0 && is3 < 95.0 && dominated >= 7 && secs < 4 * 3600.0,
          "I_R(2) " + fmt(pooled_relative_risk(reps, 2, false)) + ", I_R(3) " + fmt(ir3) + ", I_Sigma(2) " +
              fmt(pooled_relative_risk(reps, 2, true)) + ", I_Sigma(3) " + fmt(is3) + ", I_R(3) <= I_R(2) in " +
              std::to_string(dominated) + " of 10, " + fmt(secs, 5) + " s"};
}

Outcome study2_direction() {
  const auto start = std::chrono::steady_clock::now();
  const int reps = 10;
  auto cells = run_study2(100, reps, {0.2, 0.8}, {0.0}, {1, 3}, desk_chain(), 2, thread_count_from_env());
  const double spread_02 = pooled_ratio(cells, reps, 0.2, 0.0, 3, 0.0, 1, false);
  const double spread_08 = pooled_ratio(cells, reps, 0.8, 0.0, 3, 0.0, 1, false);
  const double dist_02 = pooled_ratio(cells, reps, 0.2, 0.0, 3, 0.0, 1, true);
  const double dist_08 = pooled_ratio(cells, reps, 0.8, 0.0, 3, 0.0, 1, true);
  int decreasing = 0, dist_decreasing = 0;
  for (int r = 0; r < reps; ++r) {
    auto ratio = [&](double rho, bool distance) {
      const auto& a = find_cell(cells, r, rho, 0.0, 3);
      const auto& b = find_cell(cells, r, rho, 0.0, 1);
      return distance ? a.bv.V / b.bv.V : a.bv.B / b.bv.B;
    };
    decreasing += ratio(0.8, false) < ratio(0.2, false) ? 1 : 0;
    dist_decreasing += ratio(0.8, true) < ratio(0.2, true) ? 1 : 0;
  }
  const double secs = seconds_since(start);
  return {spread_08 < 90.0 && decreasing >= 8 && secs < 4 * 3600.0,
          "spread ratio 100 B3/B1: " + fmt(spread_02) + " at rho2=0.2, " + fmt(spread_08) +
              " at rho2=0.8, decreasing in " + std::to_string(decreasing) +
              " of 10; distance-from-truth ratio 100 V3/V1 (information): " + fmt(dist_02) + " and " + fmt(dist_08) +
              ", decreasing in " + std::to_string(dist_decreasing) + " of 10; " + fmt(secs, 5) + " s"};
}

// ------------------------------------------------------------ criterion 7

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome invariants_and_determinism() {
  const auto start = std::chrono::steady_clock::now();
  auto data = gen_study1(25, 7);
  int checked = 0;
  std::string failure;
  for (int model = 1; model <= 3; ++model) {
    for (auto variant : {CorrelationVariant::common, CorrelationVariant::grouped_correlations,
                         CorrelationVariant::grouped_variables}) {
      if (model < 3 && variant != CorrelationVariant::common) continue;
      ModelSpec spec = study1_spec(model);
      spec.variant = variant;
      spec.clusters = variant == CorrelationVariant::grouped_variables ? 2 : 0;
      auto m = build_model_design(data, spec);
      ChainConfig cfg;
      cfg.iterations = 600;
      cfg.burn_in = 300;
      cfg.thin = 3;
      cfg.seed = chain_seed(70, model);
      cfg.check_invariants = true;
      try {
        auto a = run_chain(data, m, cfg);
        auto b = run_chain(data, m, cfg);
        checked += static_cast<int>(a.size());
        auto dir = fs::temp_directory_path() / "mvlong_acceptance_determinism";
        fs::remove_all(dir);
        write_samples(dir / "a", data, m, {a});
        write_samples(dir / "b", data, m, {b});
        for (const auto& e : fs::directory_iterator(dir / "a"))
          if (slurp(e.path()) != slurp(dir / "b" / e.path().filename()) && failure.empty())
            failure = "rerun differs in " + e.path().filename().string();
        fs::remove_all(dir);
      } catch (const std::exception& ex) {
        if (failure.empty()) failure = ex.what();
      }
    }
  }
  const double secs = seconds_since(start);
  return {failure.empty(), failure.empty() ? std::to_string(checked) +
                                                 " kept states across five model variants passed every invariant; "
                                                 "reruns byte-identical; " +
                                                 fmt(secs, 4) + " s"
                                           : failure};
}

// ------------------------------------------------------------ criterion 8

Outcome cohort_smoke() {
  const auto start = std::chrono::steady_clock::now();
  auto dir = fs::temp_directory_path() / "mvlong_acceptance_cohort";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_csv(gen_cohort(500, 2024), (dir / "cohort.csv").string());
  const std::string cmd = std::string(MVLONG_CLI_PATH) + " fit --config " + MVLONG_CONFIG_DIR + "/cohort.ini --data " +
                          (dir / "cohort.csv").string() + " --out " + (dir / "fit").string() + " > " +
                          (dir / "stdout.txt").string() + " 2> " + (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code != 0) return {false, "fit exited with " + std::to_string(code) + ": " + slurp(dir / "stderr.txt")};
  auto manifest = nlohmann::json::parse(slurp(dir / "fit" / "manifest.json"));
  const auto& c = manifest.at("parameter_counts");
  const int mean = c.at("mean").at("total"), ar = c.at("autoregressive").at("total"),
            var = c.at("variance").at("total"), center = c.at("correlation_center").at("total"),
            disp = c.at("correlation_dispersion").at("total");
  const int iterations = manifest.at("chain").at("iterations");
  const double secs = seconds_since(start);
  return {mean == 92 && ar == 192 && var == 84 && center == 72 && disp == 12 && iterations == 500 && secs < 3600.0,
          "counts " + std::to_string(mean) + " / " + std::to_string(ar) + " / " + std::to_string(var) + " / " +
              std::to_string(center) + "+" + std::to_string(disp) + " after " + std::to_string(iterations) +
              " iterations, " + fmt(secs, 4) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, likelihood_equivalence}, {2, conjugate_beta},    {3, proposal_moments},
      {4, geweke_test},            {5, study1_direction}, {6, study2_direction},
      {7, invariants_and_determinism}, {8, cohort_smoke}};
  bool all = true;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome out;
    try {
      out = run();
    } catch (const std::exception& ex) {
      out = {false, std::string("error: ") + ex.what()};
    }
    all = all && out.pass;
    std::cout << "criterion " << id << ": " << (out.pass ? "PASS" : "FAIL") << " - " << out.detail << std::endl;
  }
  return all ? 0 : 1;
}
