#include <set>

#include "doctest.h"
#include "netfx/errors.hpp"
#include "netfx/estimators.hpp"
#include "netfx/simulation.hpp"
#include "support.hpp"

using namespace netfx;

namespace {

// Outcome model whose predictions ignore peers' treatments.
class OwnOnlyOutcome final : public OutcomeModel {
 public:
  Eigen::VectorXd predict(const TreatmentVector& a, const Eigen::MatrixXd& x, int) const override {
    Eigen::VectorXd out(static_cast<Eigen::Index>(a.size()));
    for (std::size_t j = 0; j < a.size(); ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      out(ji) = 0.7 + 2.0 * a[j] + 1.3 * x(ji, 0) - 0.4 * x(ji, 0) * a[j];
    }
    return out;
  }
  std::string kind() const override { return "own-only"; }
  nlohmann::json summary() const override { return {{"kind", kind()}}; }
};

// Replace every outcome by the model's prediction at the observed assignment.
Dataset noiseless(const Dataset& d, const OutcomeModel& g) {
  std::vector<ClusterObservation> cl = d.clusters();
  for (auto& c : cl) c.y = g.predict(c.a, c.x, c.type);
  return Dataset(cl, d.covariate_names());
}

NuisanceFitters fixed_fitters(std::shared_ptr<const PropensityModel> e, std::shared_ptr<const OutcomeModel> g) {
  NuisanceFitters f;
  f.fit_e = [e](const Dataset&) { return e; };
  f.fit_g = [g](const Dataset&) { return g; };
  return f;
}

NuisanceFitters lmm_fitters(double p, LinearFitOptions opts = {}) {
  NuisanceFitters f;
  f.fit_e = [p](const Dataset&) { return std::make_shared<KnownRandomization>(KnownRandomization::constant(p)); };
  f.fit_g = [opts](const Dataset& train) { return std::make_shared<LinearMixedModel>(fit_linear_mixed(train, opts)); };
  return f;
}

double mean_sq_dev(const Eigen::VectorXd& d) {
  const double m = d.mean();
  return (d.array() - m).square().mean();
}

}  // namespace

TEST_CASE("phi with zero residual equals the plug-in sum") {
  const auto data = testing::random_dataset(1, 10);
  const OwnOnlyOutcome g;
  const auto clean = noiseless(data, g);
  const auto e = KnownRandomization::constant(0.4);
  const auto spec = de_spec(PolicyAllocation::uniform(0.3));
  for (const auto& c : clean.clusters()) {
    double plug = 0.0;
    for (const auto& a : enumerate_assignments(c.size())) plug += spec.weights(a, c.x, c.type).dot(g.predict(a, c.x, c.type));
    CHECK(std::abs(phi_k(c, e, g, spec) - plug) < 1e-12);
  }
}

TEST_CASE("direct effect of a constant outcome is zero") {
  const auto data = testing::random_dataset(2, 12);
  std::vector<ClusterObservation> cl = data.clusters();
  for (auto& c : cl) c.y.setConstant(3.5);
  const Dataset flat(cl, data.covariate_names());
  std::map<int, LinearTypeParams> params;
  for (int k : {1, 2}) {
    params[k].beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(DesignSpec{}.width(2)));
    params[k].beta(0) = 3.5;
  }
  const LinearMixedModel g(params, DesignSpec{});
  const auto e = KnownRandomization::constant(0.5);
  const auto spec = de_spec(PolicyAllocation::uniform(0.6));
  for (const auto& c : flat.clusters()) CHECK(std::abs(phi_k(c, e, g, spec)) < 1e-12);
}

TEST_CASE("exact outcome model and known design recover the closed-form effect") {
  const auto data = testing::random_dataset(3, 60);
  const OwnOnlyOutcome g;
  const auto clean = noiseless(data, g);
  const auto e = KnownRandomization::constant(0.5);
  const auto spec = de_spec(PolicyAllocation::uniform(0.25));
  const auto r = aipw_estimate(clean, e, g, spec, clean.proportions());
  // per cluster effect is the mean over units of 2 - 0.4 x_j
  double expected = 0.0;
  for (const auto& c : clean.clusters()) expected += (2.0 - 0.4 * c.x.col(0).array()).mean();
  expected /= static_cast<double>(clean.size());
  CHECK(std::abs(r.tau_hat - expected) < 1e-12);
}

TEST_CASE("discrete instance: phi is unbiased at the truth") {
  const auto w = testing::make_world(101);
  const testing::TablePropensity e(w);
  const testing::TableOutcome g(w);
  for (const auto& spec : {de_spec(PolicyAllocation::uniform(0.3)), ie_spec(PolicyAllocation::uniform(0.7, 0.2))}) {
    for (int k : {1, 2}) CHECK(std::abs(testing::world_phi_mean(w, e, g, spec, k) - testing::world_theta(w, spec, k)) < 1e-12);
  }
}

TEST_CASE("double robustness by exhaustive enumeration") {
  const auto w = testing::make_world(202);
  const auto wg = testing::perturbed_outcomes(w, 5);
  const auto we = testing::perturbed_propensity(w, 6);
  const testing::TablePropensity e_true(w), e_wrong(we);
  const testing::TableOutcome g_true(w), g_wrong(wg);
  for (const auto& spec : {de_spec(PolicyAllocation::uniform(0.45)), ie_spec(PolicyAllocation::uniform(0.8, 0.2))}) {
    const double tau = testing::world_tau(w, spec);
    CHECK(std::abs(testing::world_tau_mean(w, e_true, g_wrong, spec) - tau) < 1e-12);
    CHECK(std::abs(testing::world_tau_mean(w, e_wrong, g_true, spec) - tau) < 1e-12);
    // both wrong is not protected
    CHECK(std::abs(testing::world_tau_mean(w, e_wrong, g_wrong, spec) - tau) > 1e-6);
    // inverse weighting alone is unbiased with the true design
    const ZeroOutcomeModel zero;
    CHECK(std::abs(testing::world_tau_mean(w, e_true, zero, spec) - tau) < 1e-12);
  }
}

TEST_CASE("influence function has mean zero") {
  const auto w = testing::make_world(303);
  const testing::TablePropensity e(w);
  const testing::TableOutcome g(w);
  CHECK(std::abs(testing::world_influence_mean(w, e, g, de_spec(PolicyAllocation::uniform(0.5)))) < 1e-12);
  CHECK(std::abs(testing::world_influence_mean(w, e, g, ie_spec(PolicyAllocation::uniform(0.9, 0.1)))) < 1e-12);
}

TEST_CASE("direct effect is allocation free without interference") {
  const auto data = testing::random_dataset(4, 80);
  const OwnOnlyOutcome g;
  const auto clean = noiseless(data, g);
  const auto e = KnownRandomization::constant(0.35);
  const auto p = clean.proportions();
  const double ref = aipw_estimate(clean, e, g, de_spec(PolicyAllocation::uniform(0.5)), p).tau_hat;
  for (double alpha : {0.05, 0.2, 0.62, 0.97}) {
    CHECK(std::abs(aipw_estimate(clean, e, g, de_spec(PolicyAllocation::uniform(alpha)), p).tau_hat - ref) < 1e-12);
    CHECK(std::abs(aipw_estimate(clean, e, g, ie_spec(PolicyAllocation::uniform(alpha, 0.5)), p).tau_hat) < 1e-12);
  }
}

TEST_CASE("equal allocations give a zero indirect effect") {
  const auto data = testing::random_dataset(5, 40);
  const auto e = KnownRandomization::constant(0.5);
  const LinearMixedModel g = fit_linear_mixed(data);
  const auto r = aipw_estimate(data, e, g, ie_spec(PolicyAllocation::uniform(0.37, 0.37)), data.proportions());
  CHECK(r.tau_hat == 0.0);
  CHECK(r.variance == 0.0);
}

TEST_CASE("knowing the type proportions does not increase variance") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto data = testing::random_dataset(40 + s, 50);
    const auto e = KnownRandomization::constant(0.5);
    const LinearMixedModel g = fit_linear_mixed(data);
    const auto spec = de_spec(PolicyAllocation::uniform(0.4));
    auto p = data.proportions();
    const auto est = aipw_estimate(data, e, g, spec, p);
    p.known = true;
    const auto known = aipw_estimate(data, e, g, spec, p);
    CHECK(known.tau_hat == doctest::Approx(est.tau_hat).epsilon(1e-14));
    CHECK(known.variance <= est.variance + 1e-12);
  }
}

TEST_CASE("a single-cluster type suppresses the standard error") {
  std::vector<ClusterObservation> cl = testing::random_dataset(6, 10, {{1, 2}}).clusters();
  ClusterObservation lone = testing::random_dataset(7, 1, {{2, 3}}).clusters()[0];
  lone.id = "lone";
  cl.push_back(lone);
  const Dataset data(cl, {"x1", "x2"});
  const auto r = aipw_estimate(data, KnownRandomization::constant(0.5), ZeroOutcomeModel{},
                               de_spec(PolicyAllocation::uniform(0.5)), data.proportions());
  CHECK(std::isfinite(r.tau_hat));
  CHECK_FALSE(r.variance_available);
  CHECK_FALSE(r.diagnostics.warnings.empty());
  CHECK_THROWS_AS(confidence_interval(r, 0.05), EstimationError);
}

TEST_CASE("cross-fit fold sizes") {
  const auto data = testing::random_dataset(8, 16, {{1, 2}, {2, 3}});
  std::vector<ClusterObservation> cl = data.clusters();
  // ten clusters of type 1 and six of type 2
  for (std::size_t i = 0; i < cl.size(); ++i) {
    if (i < 10 && cl[i].type != 1) cl[i] = testing::random_dataset(100 + i, 1, {{1, 2}}).clusters()[0];
    if (i >= 10 && cl[i].type != 2) cl[i] = testing::random_dataset(100 + i, 1, {{2, 3}}).clusters()[0];
    cl[i].id = "c" + std::to_string(i);
  }
  const Dataset d(cl, data.covariate_names());
  REQUIRE(d.type(1).count == 10);
  REQUIRE(d.type(2).count == 6);
  const auto fa = cross_fit_split(d, 42);
  std::map<std::pair<int, int>, int> counts;
  for (std::size_t i = 0; i < d.size(); ++i) ++counts[{d[i].type, fa.fold[i]}];
  CHECK(counts[{1, 1}] == 5);
  CHECK(counts[{1, 2}] == 5);
  CHECK(counts[{2, 1}] == 3);
  CHECK(counts[{2, 2}] == 3);
  const auto f1 = fa.members(1), f2 = fa.members(2);
  std::set<std::size_t> all(f1.begin(), f1.end());
  for (auto i : f2) CHECK(all.insert(i).second);
  CHECK(all.size() == d.size());
  CHECK(fa.by_id.at("c3") == fa.fold[3]);
}

TEST_CASE("cross-fit split of an odd type is deterministic per seed") {
  const auto d = testing::random_dataset(9, 7, {{1, 2}});
  const auto a = cross_fit_split(d, 1);
  CHECK(a.members(1).size() == 4);
  CHECK(a.members(2).size() == 3);
  CHECK(cross_fit_split(d, 1).fold == a.fold);
  bool differs = false;
  for (std::uint64_t s = 2; s < 12 && !differs; ++s) differs = cross_fit_split(d, s).fold != a.fold;
  CHECK(differs);
}

TEST_CASE("cross-fitting with shared nuisances equals the full-sample estimate") {
  const auto data = testing::random_dataset(10, 90);
  auto e = std::make_shared<KnownRandomization>(KnownRandomization::constant(0.5));
  auto g = std::make_shared<LinearMixedModel>(fit_linear_mixed(data));
  for (const auto& spec : {de_spec(PolicyAllocation::uniform(0.3)), ie_spec(PolicyAllocation::uniform(0.6, 0.2))}) {
    const auto full = aipw_estimate(data, *e, *g, spec, data.proportions());
    const auto cf = crossfit_estimate(data, fixed_fitters(e, g), spec, data.proportions(), 0.05, 17);
    CHECK(std::abs(cf.tau_hat - full.tau_hat) < 1e-12);
    CHECK(std::abs(cf.variance - full.variance) < 1e-12);
    CHECK(cf.method == "crossfit");
  }
}

TEST_CASE("general variance equals the mean squared deviation form") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto data = simulate_glmm(GlmmScenario::standard(), 120, 500 + s);
    const auto cf = crossfit_evaluate(data, lmm_fitters(0.5, glmm_outcome_options(GlmmSpecification::parse("CO,CP,CT"))), s);
    const auto alloc = PolicyAllocation::uniform(0.4, 0.7);
    const auto p = data.proportions();
    const auto de = estimate_from_crossfit(data, cf, de_spec(alloc), p, 0.05);
    const auto ie = estimate_from_crossfit(data, cf, ie_spec(alloc), p, 0.05);
    Eigen::VectorXd dd(static_cast<Eigen::Index>(data.size())), di(dd.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      dd(ii) = psi_k(data[i], cf.evals[i], 1, 0.4) - psi_k(data[i], cf.evals[i], 0, 0.4);
      di(ii) = psi_k(data[i], cf.evals[i], 0, 0.4) - psi_k(data[i], cf.evals[i], 0, 0.7);
    }
    CHECK(std::abs(de.variance - mean_sq_dev(dd)) < 1e-10);
    CHECK(std::abs(ie.variance - mean_sq_dev(di)) < 1e-10);
    CHECK(std::abs(msd_variance_de(data, cf.evals, alloc) - de.variance) < 1e-10);
    CHECK(std::abs(msd_variance_ie(data, cf.evals, alloc) - ie.variance) < 1e-10);
  }
}

TEST_CASE("cross-fitting reports which fold and model failed") {
  const auto data = testing::random_dataset(11, 20);
  NuisanceFitters f = lmm_fitters(0.5);
  f.fit_g = [](const Dataset&) -> std::shared_ptr<const OutcomeModel> { throw FitError("boom"); };
  try {
    (void)crossfit_estimate(data, f, de_spec(PolicyAllocation::uniform(0.5)), data.proportions(), 0.05, 1);
    FAIL("expected an estimation error");
  } catch (const EstimationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("fold 1") != std::string::npos);
    CHECK(msg.find("outcome") != std::string::npos);
  }
}

TEST_CASE("normal quantile") {
  CHECK(std::abs(normal_quantile(0.975) - 1.959963984540054) < 1e-9);
  CHECK(std::abs(normal_quantile(0.5)) < 1e-12);
  CHECK(std::abs(normal_quantile(0.001) + 3.090232306167813) < 1e-9);
  CHECK(std::abs(normal_quantile(1e-10) + 6.361340902404056) < 1e-8);
  for (double p : {0.01, 0.2, 0.6, 0.93}) {
    const double z = normal_quantile(p);
    CHECK(std::abs(0.5 * std::erfc(-z / std::sqrt(2.0)) - p) < 1e-12);
  }
}

TEST_CASE("confidence interval examples") {
  EstimateResult r;
  r.tau_hat = 0.0;
  r.variance = 1.0;
  r.n = 100;
  r.se = std::sqrt(r.variance / 100.0);
  auto ci = confidence_interval(r, 0.05);
  CHECK(ci.first == doctest::Approx(-0.196).epsilon(1e-3));
  CHECK(ci.second == doctest::Approx(0.196).epsilon(1e-3));
  ci = confidence_interval(r, 1.0);
  CHECK(ci.first == 0.0);
  CHECK(ci.second == 0.0);
  CHECK_THROWS_AS(confidence_interval(r, 0.0), DomainError);
}

TEST_CASE("estimate result json") {
  const auto data = testing::random_dataset(12, 30);
  const auto r = aipw_estimate(data, KnownRandomization::constant(0.5), ZeroOutcomeModel{},
                               de_spec(PolicyAllocation::uniform(0.5)), data.proportions());
  const auto j = r.to_json();
  CHECK(j.at("tau").get<double>() == r.tau_hat);
  CHECK(j.at("se").get<double>() == r.se);
  CHECK(j.at("ci").size() == 2);
  CHECK(j.at("theta_by_type").contains("1"));
  CHECK(j.at("p_by_type").contains("2"));
  CHECK(j.contains("diagnostics"));
  CHECK(std::abs(r.se - std::sqrt(r.variance / 30.0)) < 1e-15);
}

TEST_CASE("parallel evaluation matches serial evaluation") {
  const auto data = simulate_glmm(GlmmScenario::standard(), 150, 3);
  const auto e = fit_logistic_mixed(data, glmm_propensity_options(GlmmSpecification::parse("CO,CP,CT")));
  const auto g = fit_linear_mixed(data, glmm_outcome_options(GlmmSpecification::parse("CO,CP,CT")));
  const auto spec = de_spec(PolicyAllocation::uniform(0.4));
  const auto serial = aipw_estimate(data, e, g, spec, data.proportions(), 0.05, {kDefaultPropensityFloor, 1});
  const auto threaded = aipw_estimate(data, e, g, spec, data.proportions(), 0.05, {kDefaultPropensityFloor, 4});
  CHECK(serial.tau_hat == threaded.tau_hat);
  CHECK(serial.variance == threaded.variance);
}
