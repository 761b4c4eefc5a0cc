#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numbers>

#include "hs/errors.hpp"
#include "support.hpp"

using namespace hs;

namespace {

const BoxSpec kBox = test::unit_box(0.1);

std::shared_ptr<InitialMeasure> measure(int N, double lambda = 0.3) {
  static std::map<std::pair<int, double>, std::shared_ptr<InitialMeasure>> cache;
  auto& m = cache[{N, lambda}];
  if (!m) m = test::calibrated(lambda == 0.0 ? test::equilibrium(N) : test::perturbed(N, lambda), kBox, 100000);
  return m;
}

Configuration reversed_momenta(Configuration z) {
  for (auto& s : z) s.p = -s.p;
  return z;
}

}  // namespace

TEST_CASE("identical specs give identical values for any chunking") {
  ExperimentSpec s = test::experiment(measure(3), test::random_point(kBox, 1, 1, 0), 1.0, 30000);
  const Estimate a = rho_series(s);
  const Estimate b = rho_series(s);
  CHECK(a.value == b.value);
  CHECK(a.std_error == b.std_error);
  s.chunks = 1;
  const Estimate c = rho_series(s);
  s.chunks = 7;
  s.threads = 3;
  const Estimate d = rho_series(s);
  CHECK(c.value == a.value);
  CHECK(d.value == a.value);
  CHECK(d.std_error == a.std_error);
  s.seed = 6;
  CHECK(rho_series(s).value != a.value);
}

TEST_CASE("trees beyond N are structural zeros") {
  const ExperimentSpec s = test::experiment(measure(2), test::random_point(kBox, 1, 1, 1), 1.0, 1000);
  const Estimate e = tree_value(Tree{1, {1, 1}}, s);
  CHECK(e.value == 0.0);
  CHECK(e.n_samples == 0);
  const Estimate series = rho_series(s);
  CHECK(series.breakdown.size() == 2);
}

TEST_CASE("n = N reduces to the evolved initial density") {
  const auto m = measure(2);
  const Configuration z = test::random_point(kBox, 2, 2, 0);
  const ExperimentSpec s = test::experiment(m, z, 0.8, 5000);
  const FlowResult b = backward(kBox, z, 0.8, s.tol());
  REQUIRE(b.ok());
  const double expected = 2.0 * m->density_f0(b.state);
  const Estimate series = rho_series(s);
  CHECK(series.value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(series.std_error == 0.0);
  CHECK(series.breakdown.size() == 1);
  const Estimate direct = rho_direct(s);
  CHECK(direct.value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(direct.std_error == 0.0);
}

TEST_CASE("tree values vanish at t = 0 except m = 0") {
  const ExperimentSpec s = test::experiment(measure(3), test::random_point(kBox, 1, 1, 2), 0.0, 20000);
  CHECK(tree_value(Tree{1, {1}}, s).value == 0.0);
  const Estimate d = rho_direct(s);
  const Estimate o = rho0_oracle(*s.measure, s.z, 20000, 99);
  CHECK(z_score(d, o) < 3.0);
}

TEST_CASE("series and direct agree for N = 2") {
  const ExperimentSpec s = test::experiment(measure(2), test::random_point(kBox, 1, 4, 0), 1.0, 100000);
  const Estimate a = rho_series(s);
  const Estimate b = rho_direct(s);
  CHECK(z_score(a, b) < 3.0);
  CHECK(a.envelope_violations == 0);
  double var = 0.0;
  for (const auto& r : a.breakdown) var += r.std_error * r.std_error;
  CHECK(a.std_error == doctest::Approx(std::sqrt(var)).epsilon(1e-14));
}

TEST_CASE("equilibrium is stationary under the direct estimator") {
  const auto m = measure(3, 0.0);
  const Configuration z = test::random_point(kBox, 1, 5, 0);
  const Estimate now = rho_direct(test::experiment(m, z, 1.5, 50000, 1));
  const Estimate start = rho_direct(test::experiment(m, z, 0.0, 50000, 2));
  CHECK(z_score(now, start) < 3.0);
}

TEST_CASE("integration step term structure") {
  const ExperimentSpec s = test::experiment(measure(3), test::random_point(kBox, 1, 6, 0), 0.7, 20000);
  const StepCheck c = verify_integration_step(Tree{2, {}}, s);
  CHECK(c.terms.size() == 2);  // one discard plus n attachments
  const ExperimentSpec s2 = test::experiment(measure(3), test::random_point(kBox, 1, 6, 1), 0.7, 20000);
  CHECK(verify_integration_step(Tree{2, {1}}, s2).terms.size() == 4);  // 1 discard + (1 + 2) attachments
  CHECK(verify_integration_step(Tree{2, {2}}, s2).terms.size() == 1);
  CHECK_THROWS_AS(verify_integration_step(Tree{1, {}}, s), InvalidTree);

  MeasureSpec gc;
  gc.kind = MeasureKind::GrandCanonical;
  auto gcm = test::calibrated(gc, kBox, 10000);
  CHECK_THROWS_AS(verify_integration_step(Tree{2, {}}, test::experiment(gcm, s.z, 0.7, 100)), ConfigError);
}

TEST_CASE("integration step for two particles") {
  const ExperimentSpec s = test::experiment(measure(2), test::random_point(kBox, 1, 7, 0), 1.0, 100000);
  const StepCheck c = verify_integration_step(Tree{2, {}}, s);
  CHECK(c.z() < 3.0);
}

TEST_CASE("collision operator structure") {
  const auto m = measure(2);
  CHECK(collision_operator(test::experiment(m, test::random_point(kBox, 2, 8, 0), 0.5, 100), InnerEstimator::Series)
            .value == 0.0);
  // At t = 0, reversing every momentum flips the sign.
  const Configuration z = test::random_point(kBox, 1, 8, 1);
  const Estimate q = collision_operator(test::experiment(m, z, 0.0, 200000, 1), InnerEstimator::Direct);
  const Estimate r =
      collision_operator(test::experiment(m, reversed_momenta(z), 0.0, 200000, 2), InnerEstimator::Direct);
  Estimate neg = r;
  neg.value = -r.value;
  CHECK(z_score(q, neg) < 3.0);
}

TEST_CASE("collision operator: direct and series inner estimators agree") {
  const auto m = measure(3);
  const Configuration z = test::random_point(kBox, 1, 9, 0, 0.25);
  const ExperimentSpec s = test::experiment(m, z, 0.5, 100000);
  CHECK(z_score(collision_operator(s, InnerEstimator::Direct), collision_operator(s, InnerEstimator::Series)) < 3.0);
}

TEST_CASE("cancellation pairs on a small run") {
  const ExperimentSpec s = test::experiment(measure(3), test::random_point(kBox, 2, 10, 0), 1.5, 30000);
  const CancellationReport r = verify_cancellation(Tree{2, {1}}, 1, s, 200);
  CHECK(r.r_minus == 200);
  CHECK(r.antisymmetry_ok + r.tolerance_rejections >= 200);
  CHECK(r.antisymmetry_ok >= 199);
  CHECK(r.round_trip_ok >= 199);
  CHECK(r.shared_final_ok >= 199);
  CHECK(r.partner_in_r_plus >= 199);
  CHECK(std::abs(r.sum.value) <= 3.5 * r.sum.std_error);
}

TEST_CASE("bbgky residual is exactly zero at t = 0") {
  const ExperimentSpec s = test::experiment(measure(2), test::random_point(kBox, 1, 11, 0), 0.0, 1000);
  const BbgkyReport r = bbgky_residual(s, {0.0});
  REQUIRE(r.points.size() == 1);
  CHECK(r.points[0].residual == 0.0);
  CHECK(r.pass());
  CHECK_THROWS_AS(bbgky_residual(s, {0.1, 0.2}), ConfigError);
}

TEST_CASE("helpers") {
  const double tau = mean_free_time(kBox, 3, 1.0);
  const double expected = 1.0 / (std::numbers::sqrt2 * std::numbers::pi * 0.01 * 3.0 * std::sqrt(8.0 / std::numbers::pi));
  CHECK(tau == doctest::Approx(expected));
  const Configuration still{{{0.5, 0.5, 0.5}, {0.1, 0, 0}}};
  CHECK(trajectory_clearance(kBox, still, 1.0, Tolerances{}) == doctest::Approx(0.35));
  CHECK(trajectory_clearance(kBox, still, 10.0, Tolerances{}) == doctest::Approx(0.0).epsilon(1e-12));
  Rng rng(1);
  double lw = 0;
  const NodeVars nv = draw_node_vars(3, 2.0, GaussianEnvelope{1.0}, rng, lw);
  CHECK(nv.times[0] > nv.times[1]);
  CHECK(nv.times[1] > nv.times[2]);
  double expect_lw = 3 * std::log(2.0) - std::log(6.0) + 3 * std::log(4 * std::numbers::pi);
  for (const auto& p : nv.momenta) expect_lw -= GaussianEnvelope{1.0}.log_value(p);
  CHECK(lw == doctest::Approx(expect_lw));
  ExperimentSpec bad = test::experiment(measure(2), {{{0.01, 0.5, 0.5}, {}}}, 1.0, 10);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
