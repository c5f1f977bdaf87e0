#include "netfx/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "netfx/errors.hpp"
#include "netfx/parallel.hpp"
#include "netfx/rng.hpp"

namespace netfx {

namespace {

double expit(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

FeatureSpec true_propensity_features() { return FeatureSpec{std::vector<std::size_t>{kColW1, kColW2},
                                                            std::vector<std::size_t>{kColW1, kColW2}}; }

DesignSpec true_outcome_design() {
  DesignSpec d;
  d.peer_treatment = true;
  d.interactions = {kColC};
  d.own = std::vector<std::size_t>{kColC, kColW1, kColW2};
  d.peer = std::vector<std::size_t>{kColW1, kColW2};
  return d;
}

struct Kahan {
  double sum = 0.0;
  double comp = 0.0;
  void add(double v) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

void check_unit_interval(double v, const char* what) {
  if (!(v > 0.0 && v < 1.0)) throw DomainError(std::string(what) + " must lie in (0,1)");
}

}  // namespace

GlmmScenario GlmmScenario::standard() {
  GlmmScenario sc;
  sc.beta_e[1] = vec({-1.25, 2.0, 0.3, 0.2, 0.1});
  sc.beta_e[2] = vec({-1.0, 1.25, 0.2, 0.15, 0.1});
  sc.beta_g[1] = vec({2.0, 3.0, 0.8, 1.0, 0.5, 0.8, -1.0, 0.5, -0.3, 0.15});
  sc.beta_g[2] = vec({1.0, 2.0, 0.4, 0.5, 0.3, 0.6, -0.8, 0.4, -0.2, 0.1});
  return sc;
}

Dataset simulate_glmm(const GlmmScenario& sc, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("sample size must be positive");
  check_unit_interval(sc.p1, "type probability");
  const FeatureSpec fe = true_propensity_features();
  const DesignSpec dg = true_outcome_design();
  const CounterRng root(seed);
  std::vector<ClusterObservation> clusters(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng = root.split(i);
    ClusterObservation& c = clusters[i];
    c.id = std::to_string(i + 1);
    c.type = rng.uniform() < sc.p1 ? 1 : 2;
    const std::size_t m = sc.sizes.at(c.type);
    const auto mi = static_cast<Eigen::Index>(m);
    c.x.resize(mi, 3);
    const double cval = rng.normal();
    for (Eigen::Index j = 0; j < mi; ++j) {
      c.x(j, 0) = cval;
      c.x(j, 1) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      c.x(j, 2) = rng.normal();
    }
    const double b = rng.normal(0.0, std::sqrt(sc.intercept_var));
    const Eigen::VectorXd lin = fe.build(c.x) * sc.beta_e.at(c.type);
    std::vector<std::uint8_t> bits(m);
    for (std::size_t j = 0; j < m; ++j) bits[j] = rng.bernoulli(expit(lin(static_cast<Eigen::Index>(j)) + b)) ? 1 : 0;
    c.a = TreatmentVector(bits);
    const double xi = rng.normal(0.0, std::sqrt(sc.xi_var));
    c.y = dg.build(c.a, c.x) * sc.beta_g.at(c.type);
    for (Eigen::Index j = 0; j < mi; ++j) c.y(j) += xi + rng.normal(0.0, std::sqrt(sc.eps_var));
  }
  return Dataset(std::move(clusters), {"C", "W1", "W2"});
}

double glmm_truth_de(const GlmmScenario& sc, double alpha) {
  check_unit_interval(alpha, "alpha");
  double out = 0.0;
  for (const auto& [k, beta] : sc.beta_g) out += sc.p(k) * beta(1);
  return out;
}

double glmm_truth_ie(const GlmmScenario& sc, double alpha, double alpha_prime) {
  check_unit_interval(alpha, "alpha");
  check_unit_interval(alpha_prime, "alpha_prime");
  double out = 0.0;
  for (const auto& [k, beta] : sc.beta_g) {
    out += sc.p(k) * static_cast<double>(sc.sizes.at(k) - 1) * (alpha - alpha_prime) * beta(2);
  }
  return out;
}

// ---------------------------------------------------------------------------

GlmmSpecification GlmmSpecification::parse(const std::string& text) {
  GlmmSpecification s;
  bool seen_o = false, seen_p = false, seen_t = false;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](char ch) { return ch == ' ' || ch == '(' || ch == ')'; }),
              tok.end());
    if (tok == "CO" || tok == "MO") {
      s.correct_outcome = tok == "CO";
      seen_o = true;
    } else if (tok == "CP" || tok == "MP") {
      s.correct_propensity = tok == "CP";
      seen_p = true;
    } else if (tok == "CT" || tok == "MT" || tok == "OT") {
      s.typing = tok == "CT" ? TypeSpec::Correct : tok == "MT" ? TypeSpec::Pooled : TypeSpec::Over;
      seen_t = true;
    } else {
      throw ConfigError("unknown specification token '" + tok + "' (expected CO/MO, CP/MP, CT/MT/OT)");
    }
  }
  if (!seen_o || !seen_p || !seen_t) throw ConfigError("specification must name outcome, propensity and typing: " + text);
  return s;
}

std::string GlmmSpecification::label() const {
  std::string t = typing == TypeSpec::Correct ? "CT" : typing == TypeSpec::Pooled ? "MT" : "OT";
  return std::string(correct_outcome ? "CO" : "MO") + "," + (correct_propensity ? "CP" : "MP") + "," + t;
}

LogisticFitOptions glmm_propensity_options(const GlmmSpecification& spec) {
  LogisticFitOptions o;
  if (spec.correct_propensity) {
    o.features = true_propensity_features();
  } else {
    // W2 is omitted; C enters only as an own covariate since its peer sum is
    // a multiple of it within a type
    o.features = FeatureSpec{std::vector<std::size_t>{kColC, kColW1}, std::vector<std::size_t>{kColW1}};
  }
  o.pool_types = spec.typing == TypeSpec::Pooled;
  return o;
}

LinearFitOptions glmm_outcome_options(const GlmmSpecification& spec) {
  LinearFitOptions o;
  if (spec.correct_outcome) {
    o.design = true_outcome_design();
  } else {
    o.design.peer_treatment = true;
    o.design.own = std::vector<std::size_t>{kColC, kColW1};
    o.design.peer = std::vector<std::size_t>{kColW1};
  }
  o.pool_types = spec.typing == TypeSpec::Pooled;
  return o;
}

std::vector<int> over_split_types(const Dataset& data) {
  std::vector<std::pair<std::size_t, int>> keys;
  for (const auto& c : data.clusters()) keys.emplace_back(c.size(), c.x.rows() > 0 && c.x(0, kColC) < 1.5 ? 0 : 1);
  std::vector<std::pair<std::size_t, int>> distinct = keys;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<int> labels;
  labels.reserve(keys.size());
  for (const auto& key : keys) {
    labels.push_back(static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), key) - distinct.begin()) + 1);
  }
  return labels;
}

// ---------------------------------------------------------------------------

Dataset simulate_noint(double p_a, std::size_t n, std::uint64_t seed) {
  check_unit_interval(p_a, "treatment probability");
  if (n == 0) throw DomainError("sample size must be positive");
  const CounterRng root(seed);
  std::vector<ClusterObservation> clusters(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng = root.split(i);
    ClusterObservation& c = clusters[i];
    c.id = std::to_string(i + 1);
    c.type = 1;
    c.x.resize(2, 1);
    c.x(0, 0) = rng.normal();
    c.x(1, 0) = rng.normal();
    c.a = TreatmentVector({rng.bernoulli(p_a) ? 1 : 0, rng.bernoulli(p_a) ? 1 : 0});
    c.y.resize(2);
    for (Eigen::Index j = 0; j < 2; ++j) {
      c.y(j) = 1.0 + kNointAte * c.a[static_cast<std::size_t>(j)] + 2.0 * c.x(j, 0) + 0.5 * c.x(1 - j, 0) +
               rng.normal();
    }
  }
  return Dataset(std::move(clusters), {"X"});
}

double theoretical_de_variance(double alpha, double p_a) {
  check_unit_interval(alpha, "alpha");
  check_unit_interval(p_a, "treatment probability");
  const double q = 1.0 - p_a;
  return 0.5 * ((1.0 - alpha) * (1.0 - alpha) / (q * q) +
                (alpha * alpha + (1.0 - alpha) * (1.0 - alpha)) / (p_a * q) + alpha * alpha / (p_a * p_a));
}

double seb_ate(double p_a) {
  check_unit_interval(p_a, "treatment probability");
  return 1.0 / (2.0 * p_a * (1.0 - p_a));
}

// ---------------------------------------------------------------------------

namespace {
constexpr double kKernelNoiseSd = 0.5;
}

double kernel_mean(const TreatmentVector& a, const Eigen::MatrixXd& x, std::size_t j) {
  const auto ji = static_cast<Eigen::Index>(j);
  const double xj = x(ji, 0);
  double peer_x2 = 0.0;
  for (Eigen::Index l = 0; l < x.rows(); ++l) {
    if (l != ji) peer_x2 += x(l, 0) * x(l, 0);
  }
  return std::sin(1.5 * xj) + a[j] * (1.0 + 0.5 * std::cos(xj)) + 0.5 * a.peers_treated(j) + 0.25 * peer_x2;
}

double kernel_truth_de(double alpha) {
  check_unit_interval(alpha, "alpha");
  // E cos(X) = sin(2)/2 for X ~ U(-2, 2)
  return 1.0 + 0.25 * std::sin(2.0);
}

Dataset simulate_kernel(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("sample size must be positive");
  const CounterRng root(seed);
  std::vector<ClusterObservation> clusters(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng = root.split(i);
    ClusterObservation& c = clusters[i];
    c.id = std::to_string(i + 1);
    c.type = 1;
    c.x.resize(2, 1);
    c.x(0, 0) = -2.0 + 4.0 * rng.uniform();
    c.x(1, 0) = -2.0 + 4.0 * rng.uniform();
    c.a = TreatmentVector({rng.bernoulli(0.5) ? 1 : 0, rng.bernoulli(0.5) ? 1 : 0});
    c.y.resize(2);
    for (std::size_t j = 0; j < 2; ++j) {
      c.y(static_cast<Eigen::Index>(j)) = kernel_mean(c.a, c.x, j) + kKernelNoiseSd * rng.normal();
    }
  }
  return Dataset(std::move(clusters), {"X"});
}

// ---------------------------------------------------------------------------

MCResult run_mc(const McPlan& plan, std::size_t reps, std::size_t n, std::uint64_t seed, unsigned threads) {
  if (reps == 0) throw DomainError("at least one replicate is required");
  if (plan.estimands.size() != plan.truths.size()) throw ConfigError("plan needs one truth per estimand");
  const std::size_t ne = plan.estimands.size();
  std::vector<std::vector<EstimateResult>> results(reps);
  std::vector<std::string> errors(reps);
  const CounterRng master(seed);
  parallel_for(reps, threads, [&](std::size_t r) {
    CounterRng rng = master.split(r);
    const std::uint64_t data_seed = rng.next_u64();
    const std::uint64_t est_seed = rng.next_u64();
    try {
      const Dataset data = plan.generate(n, data_seed);
      auto res = plan.estimate(data, est_seed);
      if (res.size() != ne) throw EstimationError("plan returned the wrong number of estimates");
      for (const auto& e : res) {
        if (!e.variance_available) throw EstimationError("variance unavailable");
      }
      results[r] = std::move(res);
    } catch (const std::exception& ex) {
      errors[r] = "replicate " + std::to_string(r) + ": " + ex.what();
      results[r].clear();
    }
  });

  MCResult out;
  for (const auto& e : errors) {
    if (!e.empty()) out.errors.push_back(e);
  }
  for (std::size_t q = 0; q < ne; ++q) {
    McRow row;
    row.scenario = plan.scenario;
    row.spec = plan.spec;
    row.estimand = plan.estimands[q];
    row.truth = plan.truths[q];
    Kahan est_sum, se_sum, cover;
    for (std::size_t r = 0; r < reps; ++r) {
      if (results[r].empty()) {
        ++row.failures;
        continue;
      }
      const auto& e = results[r][q];
      row.estimates.push_back(e.tau_hat);
      row.ses.push_back(e.se);
      est_sum.add(e.tau_hat);
      se_sum.add(e.se);
      cover.add(e.ci.first <= row.truth && row.truth <= e.ci.second ? 1.0 : 0.0);
    }
    row.reps = row.estimates.size();
    if (row.reps > 0) {
      const double k = static_cast<double>(row.reps);
      const double mean = est_sum.sum / k;
      row.bias = mean - row.truth;
      row.mean_se = se_sum.sum / k;
      row.coverage = cover.sum / k;
      Kahan ss;
      for (double v : row.estimates) ss.add((v - mean) * (v - mean));
      row.emp_se = row.reps > 1 ? std::sqrt(ss.sum / (k - 1.0)) : 0.0;
    } else {
      row.bias = row.mean_se = row.coverage = row.emp_se = std::nan("");
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

McPlan glmm_plan(const GlmmScenario& sc, const GlmmSpecification& spec, double alpha_de, double alpha_ie,
                 double alpha_ie_prime, double level) {
  McPlan plan;
  plan.scenario = "glmm";
  plan.spec = spec.label();
  plan.generate = [sc](std::size_t n, std::uint64_t seed) { return simulate_glmm(sc, n, seed); };
  const auto popts = glmm_propensity_options(spec);
  const auto oopts = glmm_outcome_options(spec);
  const EstimandSpec de = de_spec(PolicyAllocation::uniform(alpha_de));
  const EstimandSpec ie = ie_spec(PolicyAllocation::uniform(alpha_ie, alpha_ie_prime));
  plan.estimate = [spec, popts, oopts, de, ie, level](const Dataset& raw, std::uint64_t) {
    const Dataset data = spec.typing == TypeSpec::Over ? raw.retyped(over_split_types(raw)) : raw;
    const LogisticMixedModel e = fit_logistic_mixed(data, popts);
    const LinearMixedModel g = fit_linear_mixed(data, oopts);
    const auto evals = evaluate_nuisances(data, e, g);
    const TypeProportions p = data.proportions();
    return std::vector<EstimateResult>{estimate_from_evaluations(data, evals, de, p, level, "aipw"),
                                       estimate_from_evaluations(data, evals, ie, p, level, "aipw")};
  };
  std::ostringstream de_name, ie_name;
  de_name << "DE(" << alpha_de << ")";
  ie_name << "IE(" << alpha_ie << "," << alpha_ie_prime << ")";
  plan.estimands = {de_name.str(), ie_name.str()};
  plan.truths = {glmm_truth_de(sc, alpha_de), glmm_truth_ie(sc, alpha_ie, alpha_ie_prime)};
  return plan;
}

McPlan noint_plan(double p_a, const std::vector<double>& alphas, double level) {
  check_unit_interval(p_a, "treatment probability");
  McPlan plan;
  plan.scenario = "noint";
  std::ostringstream spec;
  spec << "p=" << p_a;
  plan.spec = spec.str();
  plan.generate = [p_a](std::size_t n, std::uint64_t seed) { return simulate_noint(p_a, n, seed); };
  std::vector<EstimandSpec> specs;
  for (double a : alphas) {
    specs.push_back(de_spec(PolicyAllocation::uniform(a)));
    std::ostringstream name;
    name << "DE(" << a << ")";
    plan.estimands.push_back(name.str());
    plan.truths.push_back(kNointAte);
  }
  plan.estimate = [p_a, specs, level](const Dataset& data, std::uint64_t) {
    LinearFitOptions o;
    o.design.peer_treatment = false;
    const LinearMixedModel g = fit_linear_mixed(data, o);
    const KnownRandomization e = KnownRandomization::constant(p_a);
    const auto evals = evaluate_nuisances(data, e, g);
    const TypeProportions p = data.proportions();
    std::vector<EstimateResult> out;
    out.reserve(specs.size());
    for (const auto& s : specs) out.push_back(estimate_from_evaluations(data, evals, s, p, level, "aipw"));
    return out;
  };
  return plan;
}

McPlan kernel_plan(double alpha, double level, const KernelOptions& kopts) {
  McPlan plan;
  plan.scenario = "kernel";
  plan.spec = "crossfit,known-e,kernel-g";
  plan.generate = [](std::size_t n, std::uint64_t seed) { return simulate_kernel(n, seed); };
  const EstimandSpec de = de_spec(PolicyAllocation::uniform(alpha));
  plan.estimate = [de, level, kopts](const Dataset& data, std::uint64_t seed) {
    NuisanceFitters fitters;
    fitters.fit_e = [](const Dataset&) { return std::make_shared<KnownRandomization>(KnownRandomization::constant(0.5)); };
    fitters.fit_g = [kopts](const Dataset& train) { return std::make_shared<KernelModel>(fit_nw(train, kopts)); };
    return std::vector<EstimateResult>{crossfit_estimate(data, fitters, de, data.proportions(), level, seed)};
  };
  std::ostringstream name;
  name << "DE(" << alpha << ")";
  plan.estimands = {name.str()};
  plan.truths = {kernel_truth_de(alpha)};
  return plan;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ':')) parts.push_back(tok);
  if (parts.size() != 3) throw ConfigError("grid must have the form start:stop:count, got '" + text + "'");
  double start = 0.0, stop = 0.0;
  long count = 0;
  try {
    std::size_t pos = 0;
    start = std::stod(parts[0], &pos);
    if (pos != parts[0].size()) throw std::invalid_argument("start");
    stop = std::stod(parts[1], &pos);
    if (pos != parts[1].size()) throw std::invalid_argument("stop");
    count = std::stol(parts[2], &pos);
    if (pos != parts[2].size()) throw std::invalid_argument("count");
  } catch (const std::exception&) {
    throw ConfigError("grid must have the form start:stop:count, got '" + text + "'");
  }
  if (count < 1) throw ConfigError("grid count must be at least 1");
  std::vector<double> out;
  for (long i = 0; i < count; ++i) {
    const double v =
        count == 1 ? start : start + (stop - start) * static_cast<double>(i) / static_cast<double>(count - 1);
    // snap to 12 decimals so 0.05:0.95:19 yields 0.4 rather than 0.39999...
    out.push_back(std::round(v * 1e12) / 1e12);
  }
  return out;
}

}  // namespace netfx
