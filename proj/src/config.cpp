#include "netfx/config.hpp"

#include <fstream>
#include <set>

#include "netfx/errors.hpp"

namespace netfx {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

int parse_type_key(const std::string& key, const std::string& where) {
  try {
    std::size_t pos = 0;
    const int k = std::stoi(key, &pos);
    if (pos != key.size()) throw std::invalid_argument(key);
    return k;
  } catch (const std::exception&) {
    throw ConfigError("type key '" + key + "' in " + where + " is not an integer");
  }
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + " must be a number");
  return j.get<double>();
}

// Either a scalar broadcast to every type or an object keyed by type.
void parse_per_type(const json& j, std::map<int, double>& per_type, std::optional<double>& fallback,
                    const std::string& where) {
  if (j.is_number()) {
    fallback = j.get<double>();
  } else if (j.is_object()) {
    for (const auto& [key, value] : j.items()) per_type[parse_type_key(key, where)] = number(value, where);
  } else {
    throw ConfigError(where + " must be a number or an object keyed by type");
  }
}

std::optional<std::vector<std::size_t>> resolve_columns(const json& j, const std::vector<std::string>& names,
                                                        const std::string& where) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array()) throw ConfigError(where + " must be an array of column names or indices");
  std::vector<std::size_t> out;
  for (const auto& item : j) {
    if (item.is_string()) {
      const auto name = item.get<std::string>();
      auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw ConfigError(where + " names unknown covariate '" + name + "'");
      out.push_back(static_cast<std::size_t>(it - names.begin()));
    } else if (item.is_number_integer() && item.get<long>() >= 0) {
      const auto c = item.get<std::size_t>();
      if (c >= names.size()) throw ConfigError(where + " column index " + std::to_string(c) + " out of range");
      out.push_back(c);
    } else {
      throw ConfigError(where + " entries must be names or non-negative indices");
    }
  }
  return out;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

PolicyAllocation parse_allocation(const json& alpha, const json& alpha_prime) {
  PolicyAllocation alloc;
  if (alpha.is_null()) throw ConfigError("estimand.alpha is required");
  parse_per_type(alpha, alloc.alpha, alloc.alpha_default, "estimand.alpha");
  if (!alpha_prime.is_null()) {
    std::map<int, double> ap;
    parse_per_type(alpha_prime, ap, alloc.alpha_prime_default, "estimand.alpha_prime");
    if (!ap.empty()) alloc.alpha_prime = ap;
  }
  auto check = [](double v, const std::string& what) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError(what + " must lie in (0,1)");
  };
  for (const auto& [k, v] : alloc.alpha) check(v, "alpha for type " + std::to_string(k));
  if (alloc.alpha_default) check(*alloc.alpha_default, "alpha");
  if (alloc.alpha_prime) {
    for (const auto& [k, v] : *alloc.alpha_prime) check(v, "alpha_prime for type " + std::to_string(k));
  }
  if (alloc.alpha_prime_default) check(*alloc.alpha_prime_default, "alpha_prime");
  return alloc;
}

RunConfig parse_config(const json& j) {
  check_keys(j, {"estimand", "propensity", "outcome", "estimator", "level", "propensity_floor", "output"}, "config");
  RunConfig cfg;
  try {
    if (!j.contains("estimand")) throw ConfigError("config needs an estimand block");
    const json& e = j.at("estimand");
    check_keys(e, {"kind", "alpha", "alpha_prime", "weights"}, "estimand");
    cfg.estimand.kind = get_or<std::string>(e, "kind", "DE");
    if (cfg.estimand.kind == "generic") {
      if (!e.contains("weights")) throw ConfigError("generic estimand needs a weights table");
      cfg.estimand.weights = e.at("weights");
    } else if (cfg.estimand.kind == "DE" || cfg.estimand.kind == "IE") {
      cfg.estimand.alloc = parse_allocation(e.value("alpha", json()), e.value("alpha_prime", json()));
      if (cfg.estimand.kind == "IE" && !cfg.estimand.alloc.has_alpha_prime()) {
        throw ConfigError("IE estimand needs alpha_prime");
      }
    } else {
      throw ConfigError("estimand.kind must be DE, IE or generic");
    }

    if (j.contains("propensity")) {
      const json& p = j.at("propensity");
      check_keys(p, {"kind", "prob", "quad_nodes", "adaptive", "pool_types", "own", "peer"}, "propensity");
      auto& pc = cfg.propensity;
      pc.kind = get_or<std::string>(p, "kind", "known");
      if (pc.kind == "known") {
        if (!p.contains("prob")) throw ConfigError("known propensity needs prob");
        parse_per_type(p.at("prob"), pc.prob, pc.prob_default, "propensity.prob");
        for (const auto& [k, v] : pc.prob) {
          if (!(v > 0.0 && v < 1.0)) throw ConfigError("propensity.prob for type " + std::to_string(k) + " must lie in (0,1)");
        }
        if (pc.prob_default && !(*pc.prob_default > 0.0 && *pc.prob_default < 1.0)) {
          throw ConfigError("propensity.prob must lie in (0,1)");
        }
      } else if (pc.kind == "logistic_mixed") {
        pc.quad_nodes = get_or<std::size_t>(p, "quad_nodes", 30);
        if (pc.quad_nodes == 0) throw ConfigError("quad_nodes must be positive");
        pc.adaptive = get_or<bool>(p, "adaptive", true);
        pc.pool_types = get_or<bool>(p, "pool_types", false);
        pc.own = p.value("own", json());
        pc.peer = p.value("peer", json());
      } else {
        throw ConfigError("propensity.kind must be known or logistic_mixed");
      }
    }

    if (j.contains("outcome")) {
      const json& o = j.at("outcome");
      check_keys(o, {"kind", "bandwidth_scale", "symmetrize_peers", "continuous", "h_c", "h_d", "peer_treatment",
                     "interactions", "own", "peer", "pool_types"},
                 "outcome");
      auto& oc = cfg.outcome;
      oc.kind = get_or<std::string>(o, "kind", "linear_mixed");
      if (oc.kind != "linear_mixed" && oc.kind != "kernel" && oc.kind != "zero") {
        throw ConfigError("outcome.kind must be linear_mixed, kernel or zero");
      }
      oc.bandwidth_scale = get_or<double>(o, "bandwidth_scale", 1.0);
      if (!(oc.bandwidth_scale > 0.0)) throw ConfigError("bandwidth_scale must be positive");
      oc.symmetrize_peers = get_or<bool>(o, "symmetrize_peers", false);
      oc.continuous = o.value("continuous", json());
      if (o.contains("h_c")) oc.h_c = number(o.at("h_c"), "outcome.h_c");
      if (o.contains("h_d")) oc.h_d = number(o.at("h_d"), "outcome.h_d");
      oc.peer_treatment = get_or<bool>(o, "peer_treatment", true);
      oc.interactions = o.value("interactions", json());
      oc.own = o.value("own", json());
      oc.peer = o.value("peer", json());
      oc.pool_types = get_or<bool>(o, "pool_types", false);
    }

    if (j.contains("estimator")) {
      const json& s = j.at("estimator");
      check_keys(s, {"kind", "seed", "p_known", "p"}, "estimator");
      auto& ec = cfg.estimator;
      ec.kind = get_or<std::string>(s, "kind", "aipw");
      if (ec.kind != "aipw" && ec.kind != "crossfit" && ec.kind != "ipw") {
        throw ConfigError("estimator.kind must be aipw, crossfit or ipw");
      }
      ec.seed = get_or<std::uint64_t>(s, "seed", 1);
      ec.p_known = get_or<bool>(s, "p_known", false);
      if (s.contains("p")) {
        std::optional<double> unused;
        parse_per_type(s.at("p"), ec.p, unused, "estimator.p");
        if (unused) throw ConfigError("estimator.p must be keyed by type");
      }
      if (ec.p_known && ec.p.empty()) throw ConfigError("estimator.p_known needs estimator.p");
    }

    cfg.level = get_or<double>(j, "level", 0.05);
    if (!(cfg.level > 0.0 && cfg.level <= 1.0)) throw ConfigError("level must lie in (0,1]");
    cfg.propensity_floor = get_or<double>(j, "propensity_floor", kDefaultPropensityFloor);
    if (!(cfg.propensity_floor >= 0.0 && cfg.propensity_floor < 0.5)) {
      throw ConfigError("propensity_floor must lie in [0, 0.5)");
    }
    cfg.output = get_or<std::string>(j, "output", "");
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed config: ") + ex.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw ConfigError("config " + path + " is not valid JSON: " + ex.what());
  }
  return parse_config(j);
}

void RunConfig::validate_for(const Dataset& data) const {
  auto need = [&](int k, const std::string& where) {
    if (!data.has_type(k)) {
      throw ConfigError(where + " refers to type " + std::to_string(k) + ", which is absent from the data");
    }
  };
  for (const auto& [k, v] : estimand.alloc.alpha) need(k, "estimand.alpha");
  if (estimand.alloc.alpha_prime) {
    for (const auto& [k, v] : *estimand.alloc.alpha_prime) need(k, "estimand.alpha_prime");
  }
  if (estimand.kind == "generic" && estimand.weights.is_object()) {
    for (const auto& [key, v] : estimand.weights.items()) need(parse_type_key(key, "estimand.weights"), "estimand.weights");
  }
  for (const auto& [k, v] : propensity.prob) need(k, "propensity.prob");
  for (const auto& [k, v] : estimator.p) need(k, "estimator.p");
  for (const auto& [k, info] : data.types()) {
    if (estimand.kind != "generic") {
      estimand.alloc.alpha_for(k);
      if (estimand.kind == "IE") estimand.alloc.alpha_prime_for(k);
    }
    if (propensity.kind == "known" && !propensity.prob.count(k) && !propensity.prob_default) {
      throw ConfigError("propensity.prob has no entry for type " + std::to_string(k));
    }
    if (estimator.p_known && !estimator.p.count(k)) {
      throw ConfigError("estimator.p has no entry for type " + std::to_string(k));
    }
  }
}

EstimandSpec make_estimand(const EstimandConfig& cfg) {
  if (cfg.kind == "DE") return de_spec(cfg.alloc);
  if (cfg.kind == "IE") return ie_spec(cfg.alloc);
  if (!cfg.weights.is_object()) throw ConfigError("estimand.weights must be an object keyed by type");
  WeightTable table;
  for (const auto& [tkey, entries] : cfg.weights.items()) {
    const int k = parse_type_key(tkey, "estimand.weights");
    if (!entries.is_object()) throw ConfigError("estimand.weights." + tkey + " must map assignments to weights");
    for (const auto& [bits, w] : entries.items()) {
      std::vector<std::uint8_t> b;
      for (char ch : bits) {
        if (ch != '0' && ch != '1') throw ConfigError("assignment key '" + bits + "' must be a 0/1 string");
        b.push_back(ch == '1');
      }
      if (!w.is_array() || w.size() != b.size()) {
        throw ConfigError("weights for assignment '" + bits + "' must list one value per unit");
      }
      Eigen::VectorXd wv(static_cast<Eigen::Index>(b.size()));
      for (std::size_t i = 0; i < b.size(); ++i) wv(static_cast<Eigen::Index>(i)) = number(w[i], "weight");
      table[{k, TreatmentVector(b).code()}] = [wv](const Eigen::MatrixXd&) { return wv; };
    }
  }
  return generic_spec(std::move(table), identity_v(), unit_v_prime());
}

TypeProportions make_proportions(const RunConfig& cfg, const Dataset& data) {
  if (!cfg.estimator.p_known) return data.proportions();
  TypeProportions p;
  p.known = true;
  double total = 0.0;
  for (const auto& [k, info] : data.types()) {
    const double v = cfg.estimator.p.at(k);
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("known type proportion must lie in (0,1]");
    p.p_hat[k] = v;
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("known type proportions must sum to one");
  return p;
}

NuisanceFitters make_fitters(const RunConfig& cfg) {
  NuisanceFitters f;
  const PropensityConfig pc = cfg.propensity;
  if (pc.kind == "known") {
    f.fit_e = [pc](const Dataset&) -> std::shared_ptr<const PropensityModel> {
      if (pc.prob_default && pc.prob.empty()) {
        return std::make_shared<KnownRandomization>(KnownRandomization::constant(*pc.prob_default));
      }
      std::map<int, double> probs = pc.prob;
      return std::make_shared<KnownRandomization>(
          [probs, fallback = pc.prob_default](std::size_t, const Eigen::MatrixXd&, int k) {
            auto it = probs.find(k);
            if (it != probs.end()) return it->second;
            if (fallback) return *fallback;
            throw ConfigError("no randomization probability for type " + std::to_string(k));
          },
          "per-type");
    };
  } else {
    f.fit_e = [pc](const Dataset& d) -> std::shared_ptr<const PropensityModel> {
      LogisticFitOptions o;
      o.quad_nodes = pc.quad_nodes;
      o.adaptive = pc.adaptive;
      o.pool_types = pc.pool_types;
      o.features.own = resolve_columns(pc.own, d.covariate_names(), "propensity.own");
      o.features.peer = resolve_columns(pc.peer, d.covariate_names(), "propensity.peer");
      return std::make_shared<LogisticMixedModel>(fit_logistic_mixed(d, o));
    };
  }
  const OutcomeConfig oc = cfg.outcome;
  const std::string kind = cfg.estimator.kind == "ipw" ? "zero" : oc.kind;
  if (kind == "zero") {
    f.fit_g = [](const Dataset&) -> std::shared_ptr<const OutcomeModel> { return std::make_shared<ZeroOutcomeModel>(); };
  } else if (kind == "kernel") {
    f.fit_g = [oc](const Dataset& d) -> std::shared_ptr<const OutcomeModel> {
      KernelOptions o;
      o.bandwidth_scale = oc.bandwidth_scale;
      o.symmetrize_peers = oc.symmetrize_peers;
      o.continuous = resolve_columns(oc.continuous, d.covariate_names(), "outcome.continuous");
      o.h_c = oc.h_c;
      o.h_d = oc.h_d;
      return std::make_shared<KernelModel>(fit_nw(d, o));
    };
  } else {
    f.fit_g = [oc](const Dataset& d) -> std::shared_ptr<const OutcomeModel> {
      LinearFitOptions o;
      o.pool_types = oc.pool_types;
      o.design.peer_treatment = oc.peer_treatment;
      o.design.interactions =
          resolve_columns(oc.interactions, d.covariate_names(), "outcome.interactions").value_or(std::vector<std::size_t>{});
      o.design.own = resolve_columns(oc.own, d.covariate_names(), "outcome.own");
      o.design.peer = resolve_columns(oc.peer, d.covariate_names(), "outcome.peer");
      return std::make_shared<LinearMixedModel>(fit_linear_mixed(d, o));
    };
  }
  return f;
}

PreparedRun prepare_run(const RunConfig& cfg, const Dataset& data, unsigned threads) {
  cfg.validate_for(data);
  PreparedRun run;
  run.level = cfg.level;
  run.p = make_proportions(cfg, data);
  const NuisanceFitters fitters = make_fitters(cfg);
  EvalOptions eo;
  eo.propensity_floor = cfg.propensity_floor;
  eo.threads = threads;
  if (cfg.estimator.kind == "crossfit") {
    CrossfitEvaluation cf = crossfit_evaluate(data, fitters, cfg.estimator.seed, eo);
    run.method = "crossfit";
    run.evals = std::move(cf.evals);
    run.nuisance = std::move(cf.nuisance);
    run.outcome_fallbacks = cf.outcome_fallbacks;
    const auto f1 = cf.folds.members(1).size();
    run.folds = {{"seed", cf.folds.seed}, {"sizes", {f1, data.size() - f1}}};
  } else {
    const auto e = fitters.fit_e(data);
    const auto g = fitters.fit_g(data);
    run.method = cfg.estimator.kind;
    run.evals = evaluate_nuisances(data, *e, *g, eo);
    run.nuisance = {{"propensity", e->summary()}, {"outcome", g->summary()}};
    if (const auto* km = dynamic_cast<const KernelModel*>(g.get())) run.outcome_fallbacks = km->fallbacks();
  }
  return run;
}

EstimateResult estimate_prepared(const PreparedRun& run, const Dataset& data, const EstimandSpec& spec) {
  EstimateResult r = estimate_from_evaluations(data, run.evals, spec, run.p, run.level, run.method);
  r.diagnostics.nuisance = run.nuisance;
  r.diagnostics.folds = run.folds;
  r.diagnostics.outcome_fallbacks = run.outcome_fallbacks;
  return r;
}

EstimateResult run_estimate(const RunConfig& cfg, const Dataset& data, unsigned threads) {
  const PreparedRun run = prepare_run(cfg, data, threads);
  return estimate_prepared(run, data, make_estimand(cfg.estimand));
}

}  // namespace netfx
