#include <sstream>

#include "doctest.h"
#include "netfx/errors.hpp"
#include "netfx/rng.hpp"
#include "netfx/simulation.hpp"
#include "support.hpp"

using namespace netfx;

TEST_CASE("counter generator is reproducible and splits into distinct streams") {
  CounterRng a(7), b(7), c(8);
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
  const CounterRng root(99);
  CHECK(root.split(0).key() != root.split(1).key());
  CHECK(root.split(3).key() == CounterRng(99).split(3).key());
  CounterRng u(5);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("glmm truths") {
  const auto sc = GlmmScenario::standard();
  CHECK(std::abs(glmm_truth_de(sc, 0.4) - 2.75) < 1e-12);
  CHECK(std::abs(glmm_truth_ie(sc, 0.8, 0.2) - 0.9) < 1e-12);
  CHECK(std::abs(glmm_truth_ie(sc, 0.2, 0.8) + 0.9) < 1e-12);
  CHECK(glmm_truth_ie(sc, 0.3, 0.3) == 0.0);
}

namespace {

// Potential-outcome Monte Carlo of the direct and indirect effects: draw
// clusters from the generator, then average the estimand's unit means with
// peers assigned by the policy.
std::pair<double, double> potential_outcome_mc(const GlmmScenario& sc, std::size_t n, double a_de, double a_ie,
                                               double a_ie_prime, double* se_de, double* se_ie) {
  const auto data = simulate_glmm(sc, n, 1234);
  const auto design = glmm_outcome_options(GlmmSpecification::parse("CO,CP,CT")).design;
  CounterRng rng(555);
  double sd = 0.0, sd2 = 0.0, si = 0.0, si2 = 0.0;
  auto draw_peers = [&](std::size_t m, std::size_t j, int own, double alpha) {
    std::vector<std::uint8_t> bits(m);
    for (std::size_t l = 0; l < m; ++l) bits[l] = l == j ? own : (rng.bernoulli(alpha) ? 1 : 0);
    return TreatmentVector(bits);
  };
  for (const auto& c : data.clusters()) {
    const auto& beta = sc.beta_g.at(c.type);
    const std::size_t m = c.size();
    double de = 0.0, ie = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      const double y1 = design.build(draw_peers(m, j, 1, a_de), c.x).row(ji).dot(beta);
      const double y0 = design.build(draw_peers(m, j, 0, a_de), c.x).row(ji).dot(beta);
      const double ya = design.build(draw_peers(m, j, 0, a_ie), c.x).row(ji).dot(beta);
      const double yb = design.build(draw_peers(m, j, 0, a_ie_prime), c.x).row(ji).dot(beta);
      de += (y1 - y0) / static_cast<double>(m);
      ie += (ya - yb) / static_cast<double>(m);
    }
    sd += de;
    sd2 += de * de;
    si += ie;
    si2 += ie * ie;
  }
  const double nn = static_cast<double>(n);
  *se_de = std::sqrt((sd2 / nn - std::pow(sd / nn, 2)) / nn);
  *se_ie = std::sqrt((si2 / nn - std::pow(si / nn, 2)) / nn);
  return {sd / nn, si / nn};
}

}  // namespace

TEST_CASE("closed-form glmm truths agree with potential-outcome simulation") {
  const auto sc = GlmmScenario::standard();
  double se_de = 0.0, se_ie = 0.0;
  const auto [de, ie] = potential_outcome_mc(sc, 100000, 0.4, 0.8, 0.2, &se_de, &se_ie);
  CHECK(std::abs(de - 2.75) < 3.0 * se_de);
  CHECK(std::abs(ie - 0.9) < 3.0 * se_ie);
}

TEST_CASE("glmm type frequency matches the type probability") {
  const auto sc = GlmmScenario::standard();
  const std::size_t n = 100000;
  const auto data = simulate_glmm(sc, n, 3);
  const double freq = static_cast<double>(data.type(1).count) / static_cast<double>(n);
  CHECK(std::abs(freq - 0.75) < 3.0 * std::sqrt(0.75 * 0.25 / static_cast<double>(n)));
  CHECK(data.type(1).size == 3);
  CHECK(data.type(2).size == 4);
  CHECK(data.covariate_names() == std::vector<std::string>{"C", "W1", "W2"});
}

TEST_CASE("generators are bit-reproducible") {
  auto text = [](const Dataset& d) {
    std::ostringstream out;
    write_dataset(out, d);
    return out.str();
  };
  const auto sc = GlmmScenario::standard();
  CHECK(text(simulate_glmm(sc, 50, 9)) == text(simulate_glmm(sc, 50, 9)));
  CHECK(text(simulate_glmm(sc, 50, 9)) != text(simulate_glmm(sc, 50, 10)));
  CHECK(text(simulate_noint(0.3, 40, 2)) == text(simulate_noint(0.3, 40, 2)));
  CHECK(text(simulate_kernel(40, 4)) == text(simulate_kernel(40, 4)));
}

TEST_CASE("misspecified propensity drops the second covariate and the interactions") {
  const auto wrong = glmm_propensity_options(GlmmSpecification::parse("CO,MP,CT"));
  const auto right = glmm_propensity_options(GlmmSpecification::parse("CO,CP,CT"));
  CHECK(right.features.own_columns(3) == std::vector<std::size_t>{kColW1, kColW2});
  const auto own = wrong.features.own_columns(3);
  const auto peer = wrong.features.peer_columns(3);
  CHECK(std::find(own.begin(), own.end(), kColW2) == own.end());
  CHECK(std::find(peer.begin(), peer.end(), kColW2) == peer.end());
  const auto mo = glmm_outcome_options(GlmmSpecification::parse("MO,CP,CT"));
  CHECK(mo.design.interactions.empty());
  CHECK(glmm_outcome_options(GlmmSpecification::parse("CO,CP,MT")).pool_types);
  CHECK(GlmmSpecification::parse("(MO, MP, OT)").label() == "MO,MP,OT");
  CHECK_THROWS_AS(GlmmSpecification::parse("CO,CP"), ConfigError);
  CHECK_THROWS_AS(GlmmSpecification::parse("CO,XP,CT"), ConfigError);
}

TEST_CASE("over-split typing uses size and the covariate threshold") {
  const auto data = simulate_glmm(GlmmScenario::standard(), 400, 8);
  const auto labels = over_split_types(data);
  const auto re = data.retyped(labels);
  CHECK(re.types().size() == 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool low = data[i].x(0, kColC) < 1.5;
    const int expected = (data[i].size() == 3 ? 1 : 3) + (low ? 0 : 1);
    CHECK(labels[i] == expected);
  }
}

TEST_CASE("no-interference scenario") {
  CHECK(kNointAte == 3.0);
  const std::size_t n = 20000;
  const auto data = simulate_noint(0.3, n, 6);
  double treated = 0.0;
  for (const auto& c : data.clusters()) treated += c.a.treated_count();
  const double frac = treated / (2.0 * static_cast<double>(n));
  CHECK(std::abs(frac - 0.3) < 3.0 * std::sqrt(0.21 / (2.0 * static_cast<double>(n))));
}

TEST_CASE("variance curve formulas") {
  CHECK(theoretical_de_variance(0.5, 0.5) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(seb_ate(0.5) == 2.0);
  CHECK(seb_ate(0.3) == doctest::Approx(1.0 / 0.42).epsilon(1e-14));
  for (double p : {0.1, 0.3, 0.55, 0.8}) {
    CHECK(seb_ate(p) == doctest::Approx(seb_ate(1.0 - p)).epsilon(1e-14));
    CHECK(theoretical_de_variance(p, p) == doctest::Approx(1.0 / (2.0 * p * (1.0 - p))).epsilon(1e-13));
    for (double a = 0.05; a < 0.96; a += 0.05) CHECK(theoretical_de_variance(a, p) >= theoretical_de_variance(p, p) - 1e-12);
  }
  CHECK_THROWS_AS(theoretical_de_variance(0.0, 0.5), DomainError);
  CHECK_THROWS_AS(seb_ate(1.0), DomainError);
}

TEST_CASE("theoretical variance at an extreme allocation agrees with simulation") {
  const double alpha = 0.99, p = 0.3;
  const auto plan = noint_plan(p, {alpha});
  const auto res = run_mc(plan, 300, 2000, 4242);
  REQUIRE(res.rows.size() == 1);
  const double emp = res.rows[0].emp_se * res.rows[0].emp_se * 2000.0;
  CHECK(std::abs(emp / theoretical_de_variance(alpha, p) - 1.0) < 0.15);
}

TEST_CASE("kernel scenario truth by simulation") {
  CounterRng rng(3);
  double s = 0.0, s2 = 0.0;
  const int n = 400000;
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd x(2, 1);
    x << -2.0 + 4.0 * rng.uniform(), -2.0 + 4.0 * rng.uniform();
    const TreatmentVector peer1 = rng.bernoulli(0.5) ? TreatmentVector{1, 1} : TreatmentVector{1, 0};
    TreatmentVector peer0 = TreatmentVector{0, peer1[1]};
    const double d = kernel_mean(peer1, x, 0) - kernel_mean(peer0, x, 0);
    s += d;
    s2 += d * d;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - kernel_truth_de(0.5)) < 3.0 * se + 1e-12);
}

TEST_CASE("single replicate study") {
  const auto plan = glmm_plan(GlmmScenario::standard(), GlmmSpecification::parse("CO,CP,CT"));
  const auto res = run_mc(plan, 1, 300, 77);
  REQUIRE(res.rows.size() == 2);
  for (const auto& row : res.rows) {
    CHECK(row.reps == 1);
    CHECK(row.failures == 0);
    CHECK(row.bias == doctest::Approx(row.estimates[0] - row.truth).epsilon(1e-14));
    CHECK((row.coverage == 0.0 || row.coverage == 1.0));
  }
  CHECK(res.rows[0].estimand == "DE(0.4)");
  CHECK(res.rows[1].estimand == "IE(0.8,0.2)");
}

TEST_CASE("study results do not depend on the thread count") {
  const auto plan = noint_plan(0.5, {0.3, 0.7});
  const auto a = run_mc(plan, 8, 200, 11, 1);
  const auto b = run_mc(plan, 8, 200, 11, 3);
  for (std::size_t q = 0; q < a.rows.size(); ++q) {
    CHECK(a.rows[q].estimates == b.rows[q].estimates);
    CHECK(a.rows[q].bias == b.rows[q].bias);
    CHECK(a.rows[q].emp_se == b.rows[q].emp_se);
  }
}

TEST_CASE("failed replicates are counted and excluded") {
  McPlan plan = noint_plan(0.5, {0.5});
  auto inner = plan.estimate;
  plan.estimate = [inner](const Dataset& d, std::uint64_t seed) {
    if (seed % 2 == 0) throw FitError("synthetic failure");
    return inner(d, seed);
  };
  const auto res = run_mc(plan, 20, 100, 3);
  CHECK(res.rows[0].failures == res.errors.size());
  CHECK(res.rows[0].reps + res.rows[0].failures == 20);
  CHECK(res.rows[0].failures > 0);
}

TEST_CASE("grid parsing") {
  const auto g = parse_grid("0.1:0.9:9");
  REQUIRE(g.size() == 9);
  CHECK(g.front() == 0.1);
  CHECK(std::abs(g.back() - 0.9) < 1e-15);
  CHECK(parse_grid("0.5:0.5:1") == std::vector<double>{0.5});
  CHECK_THROWS_AS(parse_grid("0.1:0.9"), ConfigError);
  CHECK_THROWS_AS(parse_grid("a:b:c"), ConfigError);
}
