#ifndef MVLONG_CONFIG_HPP
#define MVLONG_CONFIG_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "basis.hpp"
#include "data.hpp"
#include "model.hpp"
#include "posterior.hpp"
#include "priors.hpp"
#include "state.hpp"

namespace mvlong {

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sectioned key = value text; '#' and ';' start comments.
struct IniFile {
  struct Entry {
    std::string key;
    std::string value;
    int line = 0;
  };
  std::map<std::string, std::vector<Entry>> sections;
  std::vector<std::string> section_order;
};

inline IniFile parse_ini(std::istream& in) {
  IniFile ini;
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw config_error("line " + std::to_string(line_no) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw config_error("line " + std::to_string(line_no) + ": empty section name");
      if (!ini.sections.count(section)) ini.section_order.push_back(section);
      ini.sections[section];
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw config_error("line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw config_error("line " + std::to_string(line_no) + ": key outside of any section");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw config_error("line " + std::to_string(line_no) + ": empty key");
    for (const auto& e : ini.sections[section])
      if (e.key == key) throw config_error("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    ini.sections[section].push_back({key, value, line_no});
  }
  return ini;
}

/// Everything needed to run a fit: column schema, model, chain settings and output options.
struct RunConfig {
  ColumnSchema schema;
  ModelSpec spec;
  ChainConfig chain;
  int chains = 1;
  int grid_points = 51;
  std::vector<CovariateProfile> profiles;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const IniFile::Entry& e, const std::string& text) {
  double v = 0.0;
  if (!parse_double(trim(text), v))
    throw config_error("line " + std::to_string(e.line) + ": '" + e.key + "' expects a number, got '" + text + "'");
  return v;
}

inline long to_integer(const IniFile::Entry& e) {
  double v = to_double(e, e.value);
  if (v != std::floor(v) || std::abs(v) > 9e15)
    throw config_error("line " + std::to_string(e.line) + ": '" + e.key + "' expects an integer");
  return static_cast<long>(v);
}

inline bool to_bool(const IniFile::Entry& e) {
  std::string v = e.value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  throw config_error("line " + std::to_string(e.line) + ": '" + e.key + "' expects true or false");
}

inline std::vector<double> to_doubles(const IniFile::Entry& e, std::size_t expected) {
  auto items = split_list(e.value);
  if (expected > 0 && items.size() != expected)
    throw config_error("line " + std::to_string(e.line) + ": '" + e.key + "' expects " + std::to_string(expected) +
                       " comma-separated numbers");
  std::vector<double> out;
  for (const auto& it : items) out.push_back(to_double(e, it));
  return out;
}

}  // namespace detail

/// Parse "x1:linear, x3:smooth:10, time:smooth:8"; an empty value or "none" gives no terms.
inline std::vector<TermSpec> parse_terms(const std::string& text, int line = 0) {
  std::vector<TermSpec> out;
  if (detail::trim(text).empty() || detail::trim(text) == "none") return out;
  for (const auto& item : detail::split_list(text)) {
    auto parts = detail::split_list(item, ':');
    auto fail = [&](const std::string& why) {
      return config_error("line " + std::to_string(line) + ": term '" + item + "': " + why);
    };
    if (parts.empty() || parts.size() > 3) throw fail("expected covariate[:linear|:smooth:K]");
    TermSpec t;
    t.covariate = parts[0];
    if (parts.size() == 1 || parts[1] == "linear" || parts[1] == "parametric") {
      if (parts.size() == 3) throw fail("linear terms take no knot count");
      t.kind = TermKind::parametric;
    } else if (parts[1] == "smooth") {
      if (parts.size() != 3) throw fail("smooth terms need a knot count");
      double k = 0.0;
      if (!detail::parse_double(parts[2], k) || k != std::floor(k) || k < 1.0)
        throw fail("knot count must be a positive integer");
      t.kind = TermKind::smooth;
      t.max_knots = static_cast<int>(k);
    } else {
      throw fail("unknown term kind '" + parts[1] + "'");
    }
    out.push_back(t);
  }
  return out;
}

inline ScalePrior parse_scale_prior(const IniFile::Entry& e) {
  std::string v = e.value;
  auto open = v.find('(');
  auto close = v.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw config_error("line " + std::to_string(e.line) + ": '" + e.key + "' expects ig(a, b) or hn(phi2)");
  std::string kind = detail::trim(v.substr(0, open));
  IniFile::Entry inner{e.key, v.substr(open + 1, close - open - 1), e.line};
  if (kind == "ig") {
    auto ab = detail::to_doubles(inner, 2);
    return ScalePrior::inverse_gamma(ab[0], ab[1]);
  }
  if (kind == "hn") {
    auto phi = detail::to_doubles(inner, 1);
    return ScalePrior::half_normal(phi[0]);
  }
  throw config_error("line " + std::to_string(e.line) + ": unknown prior family '" + kind + "'");
}

inline RunConfig run_config_from_ini(const IniFile& ini) {
  RunConfig rc;
  static const std::vector<std::string> known = {"data",    "mean",   "autoregressive", "variance", "correlation",
                                                 "priors",  "chain",  "summary"};
  for (const auto& name : ini.section_order)
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw config_error("unknown section [" + name + "]");
  auto section = [&](const std::string& name) -> const std::vector<IniFile::Entry>& {
    static const std::vector<IniFile::Entry> empty;
    auto it = ini.sections.find(name);
    return it == ini.sections.end() ? empty : it->second;
  };
  auto unknown = [](const std::string& sec, const IniFile::Entry& e) {
    return config_error("line " + std::to_string(e.line) + ": unknown key '" + e.key + "' in [" + sec + "]");
  };

  for (const auto& e : section("data")) {
    if (e.key == "subject") rc.schema.subject = e.value;
    else if (e.key == "time") rc.schema.time = e.value;
    else if (e.key == "responses") rc.schema.responses = detail::split_list(e.value);
    else if (e.key == "covariates") rc.schema.covariates = detail::split_list(e.value);
    else throw unknown("data", e);
  }
  if (rc.schema.responses.empty()) throw config_error("[data] must list at least one response");

  auto terms_section = [&](const std::string& sec, std::vector<TermSpec>& dest) {
    for (const auto& e : section(sec)) {
      if (e.key == "terms") dest = parse_terms(e.value, e.line);
      else throw unknown(sec, e);
    }
  };
  terms_section("mean", rc.spec.mean_terms);
  terms_section("autoregressive", rc.spec.ar_terms);
  terms_section("variance", rc.spec.variance_terms);
  for (const auto& e : section("correlation")) {
    if (e.key == "variant") {
      try {
        rc.spec.variant = parse_variant(e.value);
      } catch (const std::invalid_argument& ex) {
        throw config_error("line " + std::to_string(e.line) + ": " + ex.what());
      }
    } else if (e.key == "clusters") {
      long v = detail::to_integer(e);
      if (v < 0) throw config_error("line " + std::to_string(e.line) + ": clusters must be non-negative");
      rc.spec.clusters = static_cast<int>(v);
    } else if (e.key == "mean_terms") {
      rc.spec.corr_mean_terms = parse_terms(e.value, e.line);
    } else if (e.key == "dispersion_terms") {
      rc.spec.corr_dispersion_terms = parse_terms(e.value, e.line);
    } else if (e.key == "tau2") {
      rc.spec.tau2 = detail::to_double(e, e.value);
    } else {
      throw unknown("correlation", e);
    }
  }

  auto& h = rc.spec.hyper;
  for (const auto& e : section("priors")) {
    auto beta_params = [&](BetaParams& b) {
      auto v = detail::to_doubles(e, 2);
      b = {v[0], v[1]};
    };
    auto ig_params = [&](InvGammaParams& p) {
      auto items = detail::split_list(e.value);
      if (items.size() != 2) throw config_error("line " + std::to_string(e.line) + ": '" + e.key + "' expects a, b");
      p.a = detail::to_double(e, items[0]);
      p.b = items[1] == "auto" ? 0.0 : detail::to_double(e, items[1]);
    };
    if (e.key == "c_beta") ig_params(h.c_beta);
    else if (e.key == "c_eta") ig_params(h.c_eta);
    else if (e.key == "mean_indicators") beta_params(h.mean_indicators);
    else if (e.key == "ar_indicators") beta_params(h.ar_indicators);
    else if (e.key == "variance_indicators") beta_params(h.variance_indicators);
    else if (e.key == "corr_mean_indicators") beta_params(h.corr_mean_indicators);
    else if (e.key == "corr_dispersion_indicators") beta_params(h.corr_dispersion_indicators);
    else if (e.key == "c_alpha") h.c_alpha = parse_scale_prior(e);
    else if (e.key == "c_omega") h.c_omega = parse_scale_prior(e);
    else if (e.key == "c_psi") h.c_psi = parse_scale_prior(e);
    else if (e.key == "sigma2") h.sigma2_k = parse_scale_prior(e);
    else if (e.key == "sigma2_corr") h.sigma2_corr = parse_scale_prior(e);
    else if (e.key == "concentration") {
      auto v = detail::to_doubles(e, 2);
      h.concentration = {v[0], v[1]};
    } else throw unknown("priors", e);
  }

  for (const auto& e : section("chain")) {
    if (e.key == "iterations") rc.chain.iterations = static_cast<int>(detail::to_integer(e));
    else if (e.key == "burn_in") rc.chain.burn_in = static_cast<int>(detail::to_integer(e));
    else if (e.key == "thin") rc.chain.thin = static_cast<int>(detail::to_integer(e));
    else if (e.key == "seed") rc.chain.seed = static_cast<std::uint64_t>(detail::to_integer(e));
    else if (e.key == "adapt_window") rc.chain.adapt_window = static_cast<int>(detail::to_integer(e));
    else if (e.key == "adapt") rc.chain.adapt = detail::to_bool(e);
    else if (e.key == "check_invariants") rc.chain.check_invariants = detail::to_bool(e);
    else if (e.key == "zeta_span") rc.chain.zeta_span = detail::to_double(e, e.value);
    else if (e.key == "chains") rc.chains = static_cast<int>(detail::to_integer(e));
    else throw unknown("chain", e);
  }
  try {
    rc.chain.validate();
  } catch (const std::invalid_argument& ex) {
    throw config_error(std::string("[chain]: ") + ex.what());
  }
  if (rc.chains < 1) throw config_error("[chain]: chains must be at least 1");

  std::map<std::string, CovariateProfile> profiles;
  std::vector<std::string> profile_order;
  for (const auto& e : section("summary")) {
    if (e.key == "grid_points") {
      rc.grid_points = static_cast<int>(detail::to_integer(e));
      if (rc.grid_points < 2) throw config_error("line " + std::to_string(e.line) + ": grid_points must be at least 2");
      continue;
    }
    auto parts = detail::split_list(e.key, '.');
    if (parts.size() != 3 || parts[0] != "profile") throw unknown("summary", e);
    auto& prof = profiles[parts[1]];
    if (prof.name.empty()) {
      prof.name = parts[1];
      profile_order.push_back(parts[1]);
    }
    if (parts[2] == "times") {
      prof.times = detail::to_doubles(e, 0);
    } else if (parts[2] == "covariates") {
      for (const auto& kv : detail::split_list(e.value)) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw config_error("line " + std::to_string(e.line) + ": profile covariates expect name=value pairs");
        prof.covariates[detail::trim(kv.substr(0, eq))] = detail::to_double(e, kv.substr(eq + 1));
      }
    } else {
      throw unknown("summary", e);
    }
  }
  for (const auto& name : profile_order) {
    if (profiles[name].times.empty()) throw config_error("profile '" + name + "' needs times");
    rc.profiles.push_back(profiles[name]);
  }
  return rc;
}

inline RunConfig parse_run_config(std::istream& in) { return run_config_from_ini(parse_ini(in)); }

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  return parse_run_config(in);
}

/// Every term must name a schema covariate, or the reserved "time" / "lag" where those are allowed.
inline void validate_against_schema(const RunConfig& rc) {
  auto check = [&](const std::vector<TermSpec>& terms, const std::string& where, bool allow_covariates,
                   const std::string& reserved) {
    for (const auto& t : terms) {
      bool ok = t.covariate == reserved ||
                (allow_covariates && std::find(rc.schema.covariates.begin(), rc.schema.covariates.end(),
                                               t.covariate) != rc.schema.covariates.end());
      if (!ok) throw config_error("[" + where + "] references unknown covariate '" + t.covariate + "'");
    }
  };
  check(rc.spec.mean_terms, "mean", true, "time");
  check(rc.spec.variance_terms, "variance", true, "time");
  check(rc.spec.ar_terms, "autoregressive", false, "lag");
  check(rc.spec.corr_mean_terms, "correlation", false, "time");
  check(rc.spec.corr_dispersion_terms, "correlation", false, "time");
}

}  // namespace mvlong

#endif
