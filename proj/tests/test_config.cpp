#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "mvlong/config.hpp"

using namespace mvlong;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const config_error& ex) {
    return ex.what();
  }
  return "";
}

const char* minimal = "[data]\nresponses = a, b\n";

}  // namespace

TEST(Terms, ParsesLinearAndSmoothTerms) {
  auto t = parse_terms("x1:linear, x3:smooth:10, time:smooth:8, x2");
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[0].covariate, "x1");
  EXPECT_EQ(t[0].kind, TermKind::parametric);
  EXPECT_EQ(t[1].kind, TermKind::smooth);
  EXPECT_EQ(t[1].max_knots, 10);
  EXPECT_EQ(t[2].covariate, "time");
  EXPECT_EQ(t[2].max_knots, 8);
  EXPECT_EQ(t[3].kind, TermKind::parametric);
  EXPECT_TRUE(parse_terms("none").empty());
  EXPECT_TRUE(parse_terms("  ").empty());
}

TEST(Terms, RejectsMalformedTerms) {
  EXPECT_THROW(parse_terms("x:smooth"), config_error);
  EXPECT_THROW(parse_terms("x:smooth:0"), config_error);
  EXPECT_THROW(parse_terms("x:smooth:2.5"), config_error);
  EXPECT_THROW(parse_terms("x:linear:3"), config_error);
  EXPECT_THROW(parse_terms("x:cubic:3"), config_error);
}

TEST(RunConfigParse, ReadsEverySection) {
  auto rc = parse(R"([data]
subject = id
time = t
responses = y1, y2, y3
covariates = age, sex
[mean]
terms = age:smooth:4, sex
[autoregressive]
terms = lag:smooth:5
[variance]
terms = t:linear
[correlation]
variant = grouped_variables
clusters = 2
mean_terms = time:smooth:3
dispersion_terms = time:linear
tau2 = 0.01
[priors]
c_beta = 0.5, auto
c_eta = 0.5, 7
mean_indicators = 2, 3
c_psi = hn(4)
c_alpha = ig(2, 1.5)
concentration = 1, 2
[chain]
iterations = 100
burn_in = 40
thin = 3
seed = 99
adapt = false
check_invariants = true
zeta_span = 200
chains = 2
[summary]
grid_points = 7
profile.old.times = 0, 1, 2
profile.old.covariates = age=80, sex=1
)");
  EXPECT_EQ(rc.schema.subject, "id");
  EXPECT_EQ(rc.schema.time, "t");
  EXPECT_EQ(rc.schema.responses, (std::vector<std::string>{"y1", "y2", "y3"}));
  EXPECT_EQ(rc.schema.covariates, (std::vector<std::string>{"age", "sex"}));
  EXPECT_EQ(rc.spec.mean_terms.size(), 2u);
  EXPECT_EQ(rc.spec.ar_terms[0].max_knots, 5);
  EXPECT_EQ(rc.spec.variant, CorrelationVariant::grouped_variables);
  EXPECT_EQ(rc.spec.clusters, 2);
  EXPECT_EQ(rc.spec.corr_mean_terms.size(), 1u);
  EXPECT_EQ(rc.spec.corr_dispersion_terms.size(), 1u);
  EXPECT_DOUBLE_EQ(rc.spec.tau2, 0.01);
  EXPECT_DOUBLE_EQ(rc.spec.hyper.c_beta.b, 0.0);
  EXPECT_DOUBLE_EQ(rc.spec.hyper.c_eta.b, 7.0);
  EXPECT_DOUBLE_EQ(rc.spec.hyper.mean_indicators.c, 2.0);
  EXPECT_DOUBLE_EQ(rc.spec.hyper.mean_indicators.d, 3.0);
  EXPECT_EQ(rc.spec.hyper.c_psi.kind, ScalePrior::Kind::half_normal);
  EXPECT_DOUBLE_EQ(rc.spec.hyper.c_psi.phi2, 4.0);
  EXPECT_EQ(rc.spec.hyper.c_alpha.kind, ScalePrior::Kind::inverse_gamma);
  EXPECT_DOUBLE_EQ(rc.spec.hyper.c_alpha.b, 1.5);
  EXPECT_EQ(rc.chain.iterations, 100);
  EXPECT_EQ(rc.chain.burn_in, 40);
  EXPECT_EQ(rc.chain.thin, 3);
  EXPECT_EQ(rc.chain.seed, 99u);
  EXPECT_FALSE(rc.chain.adapt);
  EXPECT_TRUE(rc.chain.check_invariants);
  EXPECT_DOUBLE_EQ(rc.chain.zeta_span, 200.0);
  EXPECT_EQ(rc.chains, 2);
  EXPECT_EQ(rc.grid_points, 7);
  ASSERT_EQ(rc.profiles.size(), 1u);
  EXPECT_EQ(rc.profiles[0].name, "old");
  EXPECT_EQ(rc.profiles[0].times, (std::vector<double>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(rc.profiles[0].covariates.at("age"), 80.0);
}

TEST(RunConfigParse, CommentsAndDefaults) {
  auto rc = parse("# leading comment\n[data] ; trailing\nresponses = a ; only one\n");
  EXPECT_EQ(rc.schema.responses, (std::vector<std::string>{"a"}));
  EXPECT_EQ(rc.schema.subject, "subject");
  EXPECT_EQ(rc.spec.variant, CorrelationVariant::common);
  EXPECT_EQ(rc.chains, 1);
  EXPECT_EQ(rc.chain.thin, ChainConfig{}.thin);
}

TEST(RunConfigParse, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of("[data]\nresponses = a\n[mean]\nterms = x:smooth\n").find("line 4"), std::string::npos);
  EXPECT_NE(error_of("[data]\nresponses = a\nbogus line\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of("[data]\nresponses = a\n[chain]\nthin = two\n").find("line 4"), std::string::npos);
  EXPECT_NE(error_of("[data\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("key = 1\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("[data]\nresponses = a\nresponses = b\n").find("duplicate"), std::string::npos);
}

TEST(RunConfigParse, RejectsUnknownNames) {
  EXPECT_NE(error_of(std::string(minimal) + "[extras]\nx = 1\n").find("unknown section"), std::string::npos);
  EXPECT_NE(error_of(std::string(minimal) + "[chain]\nspeed = 3\n").find("unknown key 'speed'"), std::string::npos);
  EXPECT_NE(error_of(std::string(minimal) + "[correlation]\nvariant = clustered\n").find("variant"),
            std::string::npos);
  EXPECT_NE(error_of(std::string(minimal) + "[priors]\nc_psi = lognormal(1)\n").find("unknown prior family"),
            std::string::npos);
  EXPECT_NE(error_of("[data]\nsubject = id\n").find("at least one response"), std::string::npos);
}

TEST(RunConfigParse, ChainSettingsAreValidated) {
  EXPECT_THROW(parse(std::string(minimal) + "[chain]\niterations = 10\nburn_in = 20\n"), config_error);
  EXPECT_THROW(parse(std::string(minimal) + "[chain]\nthin = 0\n"), config_error);
  EXPECT_THROW(parse(std::string(minimal) + "[chain]\nchains = 0\n"), config_error);
  EXPECT_THROW(parse(std::string(minimal) + "[chain]\nadapt = maybe\n"), config_error);
  EXPECT_THROW(parse(std::string(minimal) + "[summary]\ngrid_points = 1\n"), config_error);
  EXPECT_THROW(parse(std::string(minimal) + "[summary]\nprofile.a.covariates = x=1\n"), config_error);
}

TEST(Schema, UnknownCovariatesAreRejected) {
  auto rc = parse("[data]\nresponses = a\ncovariates = x\n[mean]\nterms = x, time:smooth:3\n");
  EXPECT_NO_THROW(validate_against_schema(rc));
  rc.spec.mean_terms.push_back({"z", TermKind::parametric, 0});
  EXPECT_THROW(validate_against_schema(rc), config_error);
  auto ar = parse("[data]\nresponses = a\ncovariates = x\n[autoregressive]\nterms = x\n");
  EXPECT_THROW(validate_against_schema(ar), config_error);
  auto corr = parse("[data]\nresponses = a, b\ncovariates = x\n[correlation]\nmean_terms = x\n");
  EXPECT_THROW(validate_against_schema(corr), config_error);
  auto lag = parse("[data]\nresponses = a\n[mean]\nterms = lag\n");
  EXPECT_THROW(validate_against_schema(lag), config_error);
}

TEST(SampleConfigs, LoadAndValidate) {
  for (const char* name : {"toy.ini", "study1.ini", "cohort.ini"}) {
    auto rc = load_run_config(std::string(MVLONG_CONFIG_DIR) + "/" + name);
    EXPECT_NO_THROW(validate_against_schema(rc)) << name;
  }
  auto cohort = load_run_config(std::string(MVLONG_CONFIG_DIR) + "/cohort.ini");
  EXPECT_EQ(cohort.schema.responses.size(), 4u);
  EXPECT_EQ(cohort.spec.variant, CorrelationVariant::grouped_correlations);
  EXPECT_EQ(cohort.chain.iterations, 500);
  EXPECT_THROW(load_run_config("/nonexistent/mvlong.ini"), config_error);
}
