#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvlong/mvlong.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mvlong::config_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

json counts_json(const mvlong::ParameterCounts& c) {
  auto pair = [](int total, int selectable) { return json{{"total", total}, {"selectable", selectable}}; };
  return json{{"mean", pair(c.mean_total, c.mean_selectable)},
              {"autoregressive", pair(c.ar_total, c.ar_selectable)},
              {"variance", pair(c.variance_total, c.variance_selectable)},
              {"correlation_center", pair(c.corr_mean_total, c.corr_mean_selectable)},
              {"correlation_dispersion", pair(c.corr_dispersion_total, c.corr_dispersion_selectable)}};
}

json terms_json(const std::vector<mvlong::TermSpec>& terms) {
  json out = json::array();
  for (const auto& t : terms)
    out.push_back({{"covariate", t.covariate},
                   {"kind", t.kind == mvlong::TermKind::smooth ? "smooth" : "linear"},
                   {"max_knots", t.max_knots}});
  return out;
}

json knots_json(const mvlong::Design& d) {
  json out = json::object();
  for (const auto& t : d.terms)
    if (t.kind == mvlong::TermKind::smooth) out[t.covariate] = t.knots.size();
  return out;
}

// ------------------------------------------------------------------ fit

struct FitOptions {
  std::string config, data, out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int chains = 0;
};

void cmd_fit(const FitOptions& opt) {
  const std::string text = read_text(opt.config);
  std::istringstream in(text);
  auto rc = mvlong::parse_run_config(in);
  if (opt.seed_set) rc.chain.seed = opt.seed;
  if (opt.chains > 0) rc.chains = opt.chains;
  mvlong::validate_against_schema(rc);
  mvlong::LoadReport report;
  auto data = mvlong::load_csv(opt.data, rc.schema, &report);
  auto m = mvlong::build_model_design(data, rc.spec);

  std::vector<mvlong::PosteriorSamples> chains(static_cast<std::size_t>(rc.chains));
  mvlong::parallel_for(rc.chains, mvlong::thread_count_from_env(), [&](int c) {
    mvlong::ChainConfig cfg = rc.chain;
    cfg.seed = mvlong::chain_seed(rc.chain.seed, c);
    chains[c] = mvlong::run_chain(data, m, cfg, c);
  });

  const fs::path out(opt.out);
  fs::create_directories(out);
  mvlong::write_samples(out / "samples", data, m, chains);
  mvlong::write_curves(out / "curves.csv", mvlong::curve_grids(data, m, chains, rc.grid_points));
  for (const auto& prof : rc.profiles)
    mvlong::write_profile_summary(out / ("sigma_" + prof.name + ".csv"), data, m, chains, prof);

  json acceptance = json::array();
  json timing = json::array();
  for (const auto& ch : chains) {
    json steps = json::array();
    for (const auto& s : ch.tuning.scalars)
      steps.push_back({{"name", s.name},
                       {"tuning", s.value},
                       {"rate", s.rate()},
                       {"rate_after_burn_in", s.kept_rate()},
                       {"proposed", s.total_proposed}});
    acceptance.push_back({{"chain", ch.chain},
                          {"seed", ch.seed},
                          {"draws", ch.draws.size()},
                          {"rank_deficient_rejections", ch.tuning.auto_rejected},
                          {"steps", steps}});
    timing.push_back({{"chain", ch.chain}, {"seconds", ch.seconds}});
  }
  json manifest = {
      {"command", "fit"},
      {"config_file", opt.config},
      {"config", text},
      {"data_file", opt.data},
      {"seed", rc.chain.seed},
      {"chains", rc.chains},
      {"chain", {{"iterations", rc.chain.iterations}, {"burn_in", rc.chain.burn_in}, {"thin", rc.chain.thin}}},
      {"data",
       {{"subjects", data.n_subjects()},
        {"observations", data.n_obs()},
        {"responses", data.response_names()},
        {"covariates", data.covariate_names()},
        {"times", data.n_times()},
        {"rows_read", report.rows_read},
        {"rows_dropped", report.dropped_rows}}},
      {"model",
       {{"mean", terms_json(rc.spec.mean_terms)},
        {"autoregressive", terms_json(rc.spec.ar_terms)},
        {"variance", terms_json(rc.spec.variance_terms)},
        {"correlation_center", terms_json(rc.spec.corr_mean_terms)},
        {"correlation_dispersion", terms_json(rc.spec.corr_dispersion_terms)},
        {"variant", mvlong::to_string(m.variant)},
        {"components", m.n_components},
        {"clusters", m.n_clusters},
        {"tau2", m.tau2}}},
      {"knots",
       {{"mean", knots_json(m.mean)},
        {"autoregressive", knots_json(m.ar)},
        {"variance", knots_json(m.variance)},
        {"correlation_center", knots_json(m.corr_mean)},
        {"correlation_dispersion", knots_json(m.corr_dispersion)}}},
      {"parameter_counts", counts_json(m.counts())},
      {"warnings", m.warnings},
      {"acceptance", acceptance}};
  write_json(out / "manifest.json", manifest);
  write_json(out / "timing.json", json{{"chains", timing}});
  std::cout << json{{"status", "ok"}, {"out", opt.out}, {"draws", chains.empty() ? 0 : chains[0].draws.size()}}.dump()
            << '\n';
}

// ------------------------------------------------------------------ simulate

struct SimulateOptions {
  int study = 0;
  int n = 20;
  int replicates = 10;
  std::string out;
  std::uint64_t seed = 1;
  int iterations = 6000, burn_in = 2000, thin = 2;
  std::vector<double> rho2{0.2, 0.4, 0.6, 0.8};
  std::vector<double> missing{0.0};
  std::vector<int> dims{1, 2, 3};
};

void cmd_simulate(const SimulateOptions& opt) {
  if (opt.study != 1 && opt.study != 2) throw usage_error("--study must be 1 or 2");
  if (opt.n < 1 || opt.replicates < 1) throw usage_error("--n and --replicates must be at least 1");
  mvlong::ChainConfig chain;
  chain.iterations = opt.iterations;
  chain.burn_in = opt.burn_in;
  chain.thin = opt.thin;
  chain.validate();
  const fs::path out(opt.out);
  fs::create_directories(out);
  const int threads = mvlong::thread_count_from_env();
  using mvlong::format_double;
  if (opt.study == 1) {
    auto reps = mvlong::run_study1(opt.n, opt.replicates, chain, opt.seed, threads);
    std::ofstream r(out / "study1_replicates.csv");
    r << "replicate,D_R_1,D_R_2,D_R_3,D_Sigma_1,D_Sigma_2,D_Sigma_3,I_R_2,I_R_3,I_Sigma_2,I_Sigma_3\n";
    for (std::size_t i = 0; i < reps.size(); ++i) {
      const auto& x = reps[i];
      r << i;
      for (double v : x.D_R) r << ',' << format_double(v);
      for (double v : x.D_Sigma) r << ',' << format_double(v);
      r << ',' << format_double(x.I_R(2)) << ',' << format_double(x.I_R(3)) << ',' << format_double(x.I_Sigma(2))
        << ',' << format_double(x.I_Sigma(3)) << '\n';
    }
    std::ofstream t(out / "study1_table.csv");
    t << "n,I_R_2,I_R_3,I_Sigma_2,I_Sigma_3\n";
    t << opt.n << ',' << format_double(mvlong::pooled_relative_risk(reps, 2, false)) << ','
      << format_double(mvlong::pooled_relative_risk(reps, 3, false)) << ','
      << format_double(mvlong::pooled_relative_risk(reps, 2, true)) << ','
      << format_double(mvlong::pooled_relative_risk(reps, 3, true)) << '\n';
  } else {
    std::vector<double> missing = opt.missing;
    if (std::find(missing.begin(), missing.end(), 0.0) == missing.end()) missing.insert(missing.begin(), 0.0);
    std::vector<int> dims = opt.dims;
    if (std::find(dims.begin(), dims.end(), 1) == dims.end()) dims.insert(dims.begin(), 1);
    auto cells = mvlong::run_study2(opt.n, opt.replicates, opt.rho2, missing, dims, chain, opt.seed, threads);
    std::ofstream c(out / "study2_cells.csv");
    c << "replicate,rho2,missing,dims,dropped_subjects,snr,B,V\n";
    for (const auto& x : cells)
      c << x.replicate << ',' << format_double(x.rho2) << ',' << format_double(x.missing) << ',' << x.dims << ','
        << x.dropped_subjects << ',' << format_double(x.snr) << ',' << format_double(x.bv.B) << ','
        << format_double(x.bv.V) << '\n';
    std::ofstream t(out / "study2_table.csv");
    t << "rho2,missing,dims,B_ratio,V_ratio\n";
    for (double rho : opt.rho2)
      for (double miss : missing)
        for (int d : dims)
          t << format_double(rho) << ',' << format_double(miss) << ',' << d << ','
            << format_double(mvlong::pooled_ratio(cells, opt.replicates, rho, miss, d, 0.0, 1, false)) << ','
            << format_double(mvlong::pooled_ratio(cells, opt.replicates, rho, miss, d, 0.0, 1, true)) << '\n';
  }
  std::cout << json{{"status", "ok"}, {"out", opt.out}}.dump() << '\n';
}

// ------------------------------------------------------------------ summarize

struct SampleKey {
  std::string family, parameter, index;
  bool operator<(const SampleKey& o) const {
    return std::tie(family, parameter, index) < std::tie(o.family, o.parameter, o.index);
  }
};

void cmd_summarize(const std::string& in_dir, const std::string& out_dir) {
  fs::path in(in_dir);
  if (!fs::is_directory(in)) throw std::runtime_error("'" + in_dir + "' is not a directory");
  fs::path samples = fs::is_directory(in / "samples") ? in / "samples" : in;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(samples))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::map<SampleKey, std::vector<double>> values;
  std::map<SampleKey, std::pair<long, long>> inclusion;  // selected, draws
  std::map<std::string, std::map<std::pair<int, int>, int>> selected_per_draw;
  std::map<std::string, int> family_size;
  std::map<std::string, std::map<std::string, bool>> family_items;
  for (const auto& f : files) {
    std::ifstream is(f);
    std::string line;
    if (!std::getline(is, line) || mvlong::detail::trim(line) != "chain,iteration,parameter,index,selected,value")
      continue;
    const std::string family = f.stem().string();
    int line_no = 1;
    while (std::getline(is, line)) {
      ++line_no;
      if (mvlong::detail::trim(line).empty()) continue;
      auto fields = mvlong::detail::split_csv_line(line);
      double value = 0.0;
      if (fields.size() != 6 || !mvlong::detail::parse_double(fields[5], value))
        throw std::runtime_error(f.string() + ":" + std::to_string(line_no) + ": malformed sample row");
      SampleKey key{family, fields[2], fields[3]};
      values[key].push_back(value);
      if (!fields[4].empty()) {
        auto& inc = inclusion[key];
        const bool sel = fields[4] == "1";
        inc.first += sel ? 1 : 0;
        inc.second += 1;
        family_items[family][fields[2] + "/" + fields[3]] = true;
        selected_per_draw[family][{std::stoi(fields[0]), std::stoi(fields[1])}] += sel ? 1 : 0;
      }
    }
  }
  if (values.empty()) throw std::runtime_error("no posterior samples found in '" + in_dir + "'");
  const fs::path out(out_dir);
  fs::create_directories(out);
  using mvlong::format_double;
  {
    std::ofstream s(out / "summary.csv");
    s << "family,parameter,index,n,mean,sd,q05,q10,q25,q50,q75,q90,q95\n";
    for (const auto& [k, v] : values) {
      auto sm = mvlong::summarize_values(v);
      s << k.family << ',' << k.parameter << ',' << k.index << ',' << sm.n << ',' << format_double(sm.mean) << ','
        << format_double(sm.sd) << ',' << format_double(sm.q05) << ',' << format_double(sm.q10) << ','
        << format_double(sm.q25) << ',' << format_double(sm.q50) << ',' << format_double(sm.q75) << ','
        << format_double(sm.q90) << ',' << format_double(sm.q95) << '\n';
    }
  }
  {
    std::ofstream s(out / "indicators.csv");
    s << "family,parameter,index,inclusion\n";
    for (const auto& [k, inc] : inclusion)
      s << k.family << ',' << k.parameter << ',' << k.index << ','
        << format_double(static_cast<double>(inc.first) / inc.second) << '\n';
    std::ofstream t(out / "selection.csv");
    t << "family,selectable,mean_selected,percent_selected\n";
    for (const auto& [family, draws] : selected_per_draw) {
      double total = 0.0;
      for (const auto& [_, n] : draws) total += n;
      const double mean = total / static_cast<double>(draws.size());
      const double size = static_cast<double>(family_items[family].size());
      t << family << ',' << family_items[family].size() << ',' << format_double(mean) << ','
        << format_double(100.0 * mean / size) << '\n';
    }
  }
  {
    std::ofstream s(out / "acceptance.csv");
    s << "chain,step,tuning,rate,rate_after_burn_in\n";
    if (fs::exists(in / "manifest.json")) {
      std::ifstream m(in / "manifest.json");
      json j = json::parse(m);
      for (const auto& ch : j.at("acceptance"))
        for (const auto& st : ch.at("steps"))
          s << ch.at("chain").get<int>() << ',' << st.at("name").get<std::string>() << ','
            << format_double(st.at("tuning").get<double>()) << ',' << format_double(st.at("rate").get<double>())
            << ',' << format_double(st.at("rate_after_burn_in").get<double>()) << '\n';
    }
  }
  std::cout << json{{"status", "ok"}, {"out", out_dir}, {"parameters", values.size()}}.dump() << '\n';
}

std::string error_type(const std::exception& ex) {
  if (dynamic_cast<const usage_error*>(&ex)) return "usage";
  if (dynamic_cast<const mvlong::config_error*>(&ex)) return "config";
  if (dynamic_cast<const mvlong::data_error*>(&ex)) return "data";
  if (dynamic_cast<const mvlong::numerical_error*>(&ex)) return "numerical";
  if (dynamic_cast<const std::invalid_argument*>(&ex)) return "invalid_argument";
  return "runtime";
}

int report_error(const std::string& type, const std::string& message, int code) {
  std::cerr << json{{"status", "error"}, {"type", type}, {"message", message}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian semiparametric covariance modelling for multivariate longitudinal data"};
  app.require_subcommand(1);

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a CSV dataset");
  fit_cmd->add_option("--config", fit.config, "Model configuration file")->required();
  fit_cmd->add_option("--data", fit.data, "Long-format CSV data")->required();
  fit_cmd->add_option("--out", fit.out, "Output directory")->required();
  auto* seed_opt = fit_cmd->add_option("--seed", fit.seed, "Random seed (overrides the config)");
  fit_cmd->add_option("--chains", fit.chains, "Number of chains (overrides the config)")->check(CLI::PositiveNumber);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a simulation study");
  sim_cmd->add_option("--study", sim.study, "Study id (1 or 2)")->required();
  sim_cmd->add_option("--n", sim.n, "Subjects per dataset");
  sim_cmd->add_option("--replicates", sim.replicates, "Number of replicate datasets");
  sim_cmd->add_option("--out", sim.out, "Output directory")->required();
  sim_cmd->add_option("--seed", sim.seed, "Random seed");
  sim_cmd->add_option("--iterations", sim.iterations, "MCMC iterations per fit");
  sim_cmd->add_option("--burn-in", sim.burn_in, "Burn-in iterations per fit");
  sim_cmd->add_option("--thin", sim.thin, "Thinning interval");
  sim_cmd->add_option("--rho2", sim.rho2, "Study 2 cross-response correlations")->delimiter(',');
  sim_cmd->add_option("--missing", sim.missing, "Study 2 missingness probabilities")->delimiter(',');
  sim_cmd->add_option("--dims", sim.dims, "Study 2 fitted dimensions")->delimiter(',');

  std::string sum_in, sum_out;
  auto* sum_cmd = app.add_subcommand("summarize", "Summarize posterior samples written by fit");
  sum_cmd->add_option("--in", sum_in, "Fit output directory")->required();
  sum_cmd->add_option("--out", sum_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2);
  }

  try {
    if (*fit_cmd) {
      fit.seed_set = seed_opt->count() > 0;
      cmd_fit(fit);
    } else if (*sim_cmd) {
      cmd_simulate(sim);
    } else if (*sum_cmd) {
      cmd_summarize(sum_in, sum_out);
    }
  } catch (const usage_error& ex) {
    return report_error("usage", ex.what(), 2);
  } catch (const std::exception& ex) {
    return report_error(error_type(ex), ex.what(), 1);
  }
  return 0;
}
