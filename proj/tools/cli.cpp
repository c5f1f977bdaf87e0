#include "cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "netfx/config.hpp"
#include "netfx/errors.hpp"
#include "netfx/parallel.hpp"
#include "netfx/simulation.hpp"

namespace netfx {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

unsigned thread_count(unsigned flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("NETFX_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("NETFX_THREADS must be a positive integer, got '") + env + "'");
  }
  return resolve_threads(0);
}

// Writes to the file when a path is given, otherwise to out.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& out) {
    if (path.empty() || path == "-") {
      stream_ = &out;
    } else {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw ConfigError("cannot open output file " + path);
      stream_ = file_.get();
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_;
};

struct Common {
  std::string data;
  std::string config;
  std::string out;
  std::string type_column = "type";
  std::size_t cap = kDefaultEnumerationCap;
  unsigned threads = 0;
};

void add_data_options(CLI::App* cmd, Common& c, bool need_config) {
  cmd->add_option("--data", c.data, "Input CSV (cluster_id,unit_id,y,a,covariates...[,type])")->required();
  auto* cfg = cmd->add_option("--config", c.config, "JSON run configuration");
  if (need_config) cfg->required();
  cmd->add_option("--type-column", c.type_column, "Column holding explicit type labels")->capture_default_str();
  cmd->add_option("--cap", c.cap, "Largest cluster size allowed (2^size assignments are enumerated)")
      ->capture_default_str();
}

Dataset load(const Common& c) {
  IngestSchema schema;
  schema.type_column = c.type_column;
  schema.enumeration_cap = c.cap;
  return load_dataset(c.data, schema);
}

int cmd_estimate(const Common& c, std::ostream& out) {
  const Dataset data = load(c);
  const RunConfig cfg = load_config(c.config);
  const EstimateResult r = run_estimate(cfg, data, thread_count(c.threads));
  const std::string path = c.out.empty() ? cfg.output : c.out;
  Sink sink(path, out);
  *sink << r.to_json().dump(2) << "\n";
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<std::string>& grids, std::ostream& out) {
  const Dataset data = load(c);
  RunConfig cfg = load_config(c.config);
  if (cfg.estimand.kind == "generic") throw ConfigError("sweep needs a DE or IE estimand");
  std::vector<int> types;
  for (const auto& [k, info] : data.types()) types.push_back(k);
  if (grids.size() != 1 && grids.size() != types.size()) {
    throw ConfigError("give one --grid per type (" + std::to_string(types.size()) + ") or a single grid for all");
  }
  std::vector<std::vector<double>> axes;
  for (std::size_t t = 0; t < types.size(); ++t) {
    auto g = parse_grid(grids[grids.size() == 1 ? 0 : t]);
    for (double v : g) {
      if (!(v > 0.0 && v < 1.0)) throw ConfigError("grid value " + num(v) + " lies outside (0,1)");
    }
    axes.push_back(std::move(g));
  }
  // alpha entries are replaced per grid point, so only the rest must validate
  for (int k : types) cfg.estimand.alloc.alpha[k] = 0.5;
  const PreparedRun run = prepare_run(cfg, data, thread_count(c.threads));

  Sink sink(c.out, out);
  std::ostream& os = *sink;
  for (std::size_t t = 0; t < types.size(); ++t) os << "alpha_" << types[t] << ",";
  os << "tau,se,ci_lo,ci_hi,significant\n";
  std::vector<std::size_t> idx(types.size(), 0);
  for (;;) {
    PolicyAllocation alloc = cfg.estimand.alloc;
    for (std::size_t t = 0; t < types.size(); ++t) alloc.alpha[types[t]] = axes[t][idx[t]];
    const EstimandSpec spec = cfg.estimand.kind == "DE" ? de_spec(alloc) : ie_spec(alloc);
    const EstimateResult r = estimate_prepared(run, data, spec);
    for (std::size_t t = 0; t < types.size(); ++t) os << num(axes[t][idx[t]]) << ",";
    const bool sig = r.variance_available && (r.ci.first > 0.0 || r.ci.second < 0.0);
    os << num(r.tau_hat) << "," << num(r.se) << "," << num(r.ci.first) << "," << num(r.ci.second) << ","
       << (sig ? 1 : 0) << "\n";
    std::size_t t = types.size();
    while (t > 0) {
      --t;
      if (++idx[t] < axes[t].size()) break;
      idx[t] = 0;
      if (t == 0) return 0;
    }
    if (types.empty()) return 0;
  }
}

struct SimArgs {
  std::string scenario = "glmm";
  std::size_t n = 2000;
  std::uint64_t seed = 1;
  double p = 0.5;
  std::string out;
};

int cmd_simulate(const SimArgs& a, std::ostream& out) {
  Dataset data;
  if (a.scenario == "glmm") {
    data = simulate_glmm(GlmmScenario::standard(), a.n, a.seed);
  } else if (a.scenario == "noint") {
    data = simulate_noint(a.p, a.n, a.seed);
  } else if (a.scenario == "kernel") {
    data = simulate_kernel(a.n, a.seed);
  } else {
    throw ConfigError("unknown scenario '" + a.scenario + "' (expected glmm, noint or kernel)");
  }
  Sink sink(a.out, out);
  write_dataset(*sink, data, true);
  return 0;
}

struct McArgs {
  std::string scenario = "glmm";
  std::vector<std::string> specs{"CO,CP,CT"};
  std::size_t reps = 200;
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  double p = 0.5;
  std::string alpha_grid = "0.05:0.95:19";
  double alpha = 0.5;
  std::string out;
  unsigned threads = 0;
};

std::string csv_quote(const std::string& s) {
  return s.find_first_of(",\"") == std::string::npos ? s : "\"" + s + "\"";
}

int cmd_mc_study(const McArgs& a, std::ostream& out, std::ostream& err) {
  const unsigned threads = thread_count(a.threads);
  if (a.scenario == "noint") {
    const auto alphas = parse_grid(a.alpha_grid);
    for (double v : alphas) {
      if (!(v > 0.0 && v < 1.0)) throw ConfigError("alpha grid value " + num(v) + " lies outside (0,1)");
    }
    const MCResult res = run_mc(noint_plan(a.p, alphas), a.reps, a.n, a.seed, threads);
    for (const auto& e : res.errors) err << e << "\n";
    Sink sink(a.out, out);
    std::ostream& os = *sink;
    os << "alpha,mean_tau,emp_var,theory_var,ratio,mean_se,coverage,reps,failures\n";
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      const McRow& row = res.rows[i];
      const double emp_var = row.emp_se * row.emp_se;
      const double theory = theoretical_de_variance(alphas[i], a.p) / static_cast<double>(a.n);
      os << num(alphas[i]) << "," << num(row.truth + row.bias) << "," << num(emp_var) << "," << num(theory) << ","
         << num(emp_var / theory) << "," << num(row.mean_se) << "," << num(row.coverage) << "," << row.reps << ","
         << row.failures << "\n";
    }
    return 0;
  }
  std::vector<McPlan> plans;
  if (a.scenario == "glmm") {
    for (const auto& s : a.specs) plans.push_back(glmm_plan(GlmmScenario::standard(), GlmmSpecification::parse(s)));
  } else if (a.scenario == "kernel") {
    plans.push_back(kernel_plan(a.alpha));
  } else {
    throw ConfigError("unknown scenario '" + a.scenario + "' (expected glmm, noint or kernel)");
  }
  Sink sink(a.out, out);
  std::ostream& os = *sink;
  os << "scenario,estimand,spec,bias,emp_se,mean_se,coverage,reps,failures\n";
  for (const auto& plan : plans) {
    const MCResult res = run_mc(plan, a.reps, a.n, a.seed, threads);
    for (const auto& e : res.errors) err << e << "\n";
    for (const auto& row : res.rows) {
      os << row.scenario << "," << csv_quote(row.estimand) << "," << csv_quote(row.spec) << "," << num(row.bias)
         << "," << num(row.emp_se) << "," << num(row.mean_se) << "," << num(row.coverage) << "," << row.reps << ","
         << row.failures << "\n";
    }
  }
  return 0;
}

int cmd_validate(const Common& c, std::ostream& out) {
  const Dataset data = load(c);
  nlohmann::json types = nlohmann::json::object();
  for (const auto& [k, info] : data.types()) {
    types[std::to_string(k)] = {{"size", info.size}, {"count", info.count}, {"covariate_dim", info.covariate_dim}};
  }
  nlohmann::json report{{"clusters", data.size()}, {"covariates", data.covariate_names()}, {"types", types}};
  if (!c.config.empty()) {
    const RunConfig cfg = load_config(c.config);
    cfg.validate_for(data);
    make_estimand(cfg.estimand).validate_for(data);
    report["config"] = "ok";
  }
  out << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Direct and spillover effect estimation for clustered data under partial interference", "netfx"};
  app.require_subcommand(1);
  app.allow_extras(false);

  Common est;
  auto* estimate = app.add_subcommand("estimate", "Estimate one effect and write the result as JSON");
  add_data_options(estimate, est, true);
  estimate->add_option("--out", est.out, "Output path (default: stdout or the config's output)");
  estimate->add_option("--threads", est.threads, "Worker threads (default: NETFX_THREADS or all cores)");

  Common sw;
  std::vector<std::string> grids;
  auto* sweep = app.add_subcommand("sweep", "Estimate over a grid of treatment allocations and write CSV");
  add_data_options(sweep, sw, true);
  sweep->add_option("--grid", grids, "start:stop:count, once per type or once for all types")->required();
  sweep->add_option("--out", sw.out, "Output CSV path (default: stdout)");
  sweep->add_option("--threads", sw.threads, "Worker threads (default: NETFX_THREADS or all cores)");

  SimArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Draw a dataset from a built-in scenario");
  simulate->add_option("--scenario", sim.scenario, "glmm, noint or kernel")->capture_default_str();
  simulate->add_option("--n", sim.n, "Number of clusters")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  simulate->add_option("--p", sim.p, "Treatment probability (noint)")->capture_default_str();
  simulate->add_option("--out", sim.out, "Output CSV path (default: stdout)");

  McArgs mc;
  auto* mcs = app.add_subcommand("mc-study", "Monte Carlo study of bias, standard error and coverage");
  mcs->add_option("--scenario", mc.scenario, "glmm, noint or kernel")->capture_default_str();
  mcs->add_option("--spec", mc.specs, "Nuisance specification such as CO,CP,CT (repeatable)")
      ->delimiter(';')
      ->capture_default_str();
  mcs->add_option("--reps", mc.reps, "Replicates")->capture_default_str();
  mcs->add_option("--n", mc.n, "Clusters per replicate")->capture_default_str();
  mcs->add_option("--seed", mc.seed, "Master seed")->capture_default_str();
  mcs->add_option("--p", mc.p, "Treatment probability (noint)")->capture_default_str();
  mcs->add_option("--alpha-grid", mc.alpha_grid, "Allocation grid start:stop:count (noint)")->capture_default_str();
  mcs->add_option("--alpha", mc.alpha, "Allocation for the direct effect (kernel)")->capture_default_str();
  mcs->add_option("--out", mc.out, "Output CSV path (default: stdout)");
  mcs->add_option("--threads", mc.threads, "Worker threads (default: NETFX_THREADS or all cores)");

  Common val;
  auto* validate = app.add_subcommand("validate", "Check a dataset (and optionally a config against it)");
  add_data_options(validate, val, false);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*estimate) return cmd_estimate(est, out);
    if (*sweep) return cmd_sweep(sw, grids, out);
    if (*simulate) return cmd_simulate(sim, out);
    if (*mcs) return cmd_mc_study(mc, out, err);
    if (*validate) return cmd_validate(val, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const CapacityError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace netfx
