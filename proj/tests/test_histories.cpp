#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <numbers>
#include <sstream>

#include "hs/errors.hpp"
#include "hs/histories.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace hs;

namespace {

BoxSpec big_box() {
  BoxSpec b;
  b.lengths = {10.0, 10.0, 10.0};
  b.diameter = 1.0;
  return b;
}

NodeVars one_node(double t1, Vec3 omega, Vec3 p) { return NodeVars{{t1}, {omega}, {p}}; }

// Two roots at rest on the x axis, four units apart.
Configuration resting_pair() { return {{{3, 5, 5}, {0, 0, 0}}, {{7, 5, 5}, {0, 0, 0}}}; }

// Incoming creation from root 1 that runs into root 2 at s = 1.
History aimed_history() {
  return build_history(resting_pair(), 4.0, Tree{2, {1}}, one_node(3.0, {1, 0, 0}, {-1, 0, 0}), Tolerances{},
                       big_box());
}

double b_recomputed(const History& h, int k) {
  const int j = h.tree.js[k - 1];
  const double tk = h.nodes.times[k - 1];
  const ParticleState prog = h.state_at(j, tk);
  return dot(h.nodes.omegas[k - 1], h.nodes.momenta[k - 1] - prog.p);
}

Eigen::Matrix<double, 6, 1> node_coords(double t, const Vec3& w, const Vec3& p) {
  Eigen::Matrix<double, 6, 1> x;
  x << t, std::acos(std::clamp(w.z, -1.0, 1.0)), std::atan2(w.y, w.x), p.x, p.y, p.z;
  return x;
}

Vec3 from_angles(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

}  // namespace

TEST_CASE("m = 0 history is the backward flow") {
  const BoxSpec box = test::unit_box();
  const Configuration z = test::random_point(box, 2, 1, 0);
  const History h = build_history(z, 1.3, Tree{2, {}}, NodeVars{}, Tolerances::defaults(1.3, 1), box);
  REQUIRE(h.valid());
  CHECK(h.b_factors.empty());
  CHECK(weight(h) == 1.0);
  const FlowResult b = backward(box, z, 1.3, Tolerances::defaults(1.3, 1));
  REQUIRE(b.ok());
  for (int i = 0; i < 2; ++i) {
    CHECK(norm(final_configuration(h)[i].q - b.state[i].q) < 1e-12);
    CHECK(norm(final_configuration(h)[i].p - b.state[i].p) < 1e-12);
  }
}

TEST_CASE("single free particle") {
  const BoxSpec box = big_box();
  const Configuration z{{{5, 5, 5}, {0.3, -0.2, 0.1}}};
  const History h = build_history(z, 2.0, Tree{1, {}}, NodeVars{}, Tolerances{}, box);
  REQUIRE(h.valid());
  CHECK(norm(h.final_state[0].q - Vec3{4.4, 5.4, 4.8}) < 1e-12);
}

TEST_CASE("creation failures") {
  const BoxSpec box = big_box();
  Configuration close{{{4, 5, 5}, {}}, {{5.5, 5, 5}, {}}};
  const History overlap = build_history(close, 1.0, Tree{2, {1}}, one_node(0.5, {1, 0, 0}, {1, 0, 0}), Tolerances{}, box);
  CHECK(overlap.status == HistoryStatus::OverlapAtCreation);
  CHECK(overlap.failed_node == 1);

  Configuration near_wall{{{1.2, 5, 5}, {}}};
  const History wall = build_history(near_wall, 1.0, Tree{1, {1}}, one_node(0.5, {-1, 0, 0}, {1, 0, 0}), Tolerances{}, box);
  CHECK(wall.status == HistoryStatus::WallViolationAtCreation);

  Configuration one{{{5, 5, 5}, {}}};
  const History graze = build_history(one, 1.0, Tree{1, {1}}, one_node(0.5, {1, 0, 0}, {0, 1, 0}), Tolerances{}, box);
  CHECK(graze.status == HistoryStatus::GrazeAtCreation);
  CHECK(is_singular(graze.status));

  const History bad = build_history(one, 1.0, Tree{1, {1}}, one_node(1.5, {1, 0, 0}, {1, 0, 0}), Tolerances{}, box);
  CHECK(bad.status == HistoryStatus::BadNodeTimes);
}

TEST_CASE("outgoing creation from a particle at rest") {
  const BoxSpec box = big_box();
  Configuration one{{{5, 5, 5}, {}}};
  const Vec3 w{0, 0.6, 0.8};
  const History h = build_history(one, 2.0, Tree{1, {1}}, one_node(1.0, w, {0.5, 1.0, 0.2}), Tolerances{}, box);
  REQUIRE(h.valid());
  CHECK(h.b_factors[0] == doctest::Approx(dot(w, Vec3{0.5, 1.0, 0.2})));
  CHECK(h.b_factors[0] > 0.0);
  CHECK(classify_creation(h, 1) == CreationKind::Outgoing);
  CHECK(weight(h) == h.b_factors[0]);
}

TEST_CASE("weight of two nodes is the product of B factors") {
  const BoxSpec box = big_box();
  Configuration one{{{5, 5, 5}, {}}};
  NodeVars nv{{1.5, 0.5}, {{1, 0, 0}, {0, 1, 0}}, {{2, 0, 0}, {0, -1, 0}}};
  const History h = build_history(one, 2.0, Tree{1, {1, 1}}, nv, Tolerances{}, box);
  REQUIRE(h.valid());
  CHECK(h.b_factors[0] == doctest::Approx(2.0));
  CHECK(h.b_factors[1] == doctest::Approx(-1.0));
  CHECK(weight(h) == doctest::Approx(-2.0));
}

TEST_CASE("random histories: B recomputation, contact gaps, continuity, energy") {
  const BoxSpec box = test::unit_box(0.1);
  const GaussianEnvelope h{1.0};
  const double a = box.diameter;
  int valid = 0;
  for (std::uint64_t s = 0; s < 3000; ++s) {
    Rng rng = block_rng(21, 1, s);
    const int n = 1 + static_cast<int>(s % 3);
    const auto trees = enumerate_trees(n, 1 + static_cast<int>(s % 3));
    const Tree tree = trees[s % trees.size()];
    const Configuration z = test::random_point(box, n, 21, s);
    const double t = 1.5;
    double lw = 0;
    const NodeVars nv = draw_node_vars(tree.m(), t, h, rng, lw);
    const History hist = build_history(z, t, tree, nv, Tolerances::defaults(t, 1), box);
    if (!hist.valid()) continue;
    ++valid;
    double prod = 1.0;
    for (int k = 1; k <= tree.m(); ++k) {
      const double bk = a * a * b_recomputed(hist, k);
      CHECK(hist.b_factors[k - 1] == doctest::Approx(bk).epsilon(1e-12));
      CHECK((classify_creation(hist, k) == CreationKind::Outgoing) == (hist.b_factors[k - 1] > 0));
      prod *= hist.b_factors[k - 1];
      const double tk = hist.nodes.times[k - 1];
      const Vec3 gap = hist.state_at(n + k, tk).q - hist.state_at(tree.js[k - 1], tk).q;
      CHECK(std::abs(norm(gap) - a) <= 1e-10 * a);
    }
    CHECK(weight(hist) == doctest::Approx(prod).epsilon(1e-12));
    CHECK((weight(hist) > 0) == (std::count_if(hist.b_factors.begin(), hist.b_factors.end(),
                                                [](double b) { return b < 0; }) % 2 == 0));
    for (const auto& segs : hist.segments)
      for (std::size_t r = 1; r < segs.size(); ++r) {
        CHECK(segs[r].s_lo == segs[r - 1].s_hi);
        CHECK(norm(segs[r].position(segs[r].s_lo) - segs[r - 1].q_hi) <= 1e-12);
      }
    double e = kinetic_energy(z);
    for (const Vec3& p : nv.momenta) e += 0.5 * norm2(p);
    CHECK(kinetic_energy(hist.final_state) == doctest::Approx(e).epsilon(1e-12));
    CHECK(is_admissible(box, hist.final_state, 1e-9 * a));
  }
  CHECK(valid > 1000);
}

TEST_CASE("recollision detection on hand-built geometries") {
  const BoxSpec box = big_box();
  const History aimed = aimed_history();
  REQUIRE(aimed.valid());
  CHECK(classify_creation(aimed, 1) == CreationKind::Incoming);
  const RecollisionScan back = detect_recollision(aimed, 1, box, Tolerances{});
  REQUIRE(back.record);
  CHECK_FALSE(back.tie);
  CHECK(back.record->partner == 2);
  CHECK(back.record->direction == RecollisionRecord::Direction::Backward);
  CHECK(back.record->time == doctest::Approx(1.0));
  CHECK(norm(back.record->omega - Vec3{-1, 0, 0}) < 1e-12);

  const History fwd = build_history(resting_pair(), 4.0, Tree{2, {1}}, one_node(1.0, {1, 0, 0}, {1, 0, 0}),
                                    Tolerances{}, box);
  REQUIRE(fwd.valid());
  CHECK(classify_creation(fwd, 1) == CreationKind::Outgoing);
  const RecollisionScan ahead = detect_recollision(fwd, 1, box, Tolerances{});
  REQUIRE(ahead.record);
  CHECK(ahead.record->partner == 2);
  CHECK(ahead.record->direction == RecollisionRecord::Direction::Forward);
  CHECK(ahead.record->time == doctest::Approx(3.0));

  const History free = build_history(resting_pair(), 2.0, Tree{2, {1}}, one_node(1.0, {-1, 0, 0}, {-1, 0, 0}),
                                     Tolerances{}, box);
  REQUIRE(free.valid());
  CHECK_FALSE(detect_recollision(free, 1, box, Tolerances{}).record);
}

TEST_CASE("partner of the hand-built recollision") {
  const BoxSpec box = big_box();
  const History h = aimed_history();
  const RecollisionScan scan = detect_recollision(h, 1, box, Tolerances{});
  REQUIRE(scan.record);
  const Partner p = cancellation_partner(h, *scan.record, box, Tolerances{});
  REQUIRE(p.history.valid());
  CHECK(p.slot == 1);
  CHECK(p.history.tree == Tree{2, {2}});
  CHECK(p.history.tree == attach(detach(h.tree, 1).source, 1, 2));
  CHECK(p.history.nodes.times[0] == doctest::Approx(1.0));
  CHECK(classify_creation(p.history, 1) == CreationKind::Outgoing);
  for (std::size_t x = 0; x < h.final_state.size(); ++x) {
    const auto& q = p.history.final_state[p.label_map[x] - 1];
    CHECK(norm(q.q - h.final_state[x].q) < 1e-12);
    CHECK(norm(q.p - h.final_state[x].p) < 1e-12);
  }
  const double bk = h.b_factors[0], bn = p.history.b_factors[0];
  CHECK(weight(h) + weight(p.history) * std::abs(bk) / std::abs(bn) == doctest::Approx(0.0));

  const RecollisionScan ahead = detect_recollision(p.history, 1, box, Tolerances{});
  REQUIRE(ahead.record);
  CHECK(ahead.record->partner == 1);
  CHECK(ahead.record->time == doctest::Approx(3.0));
  const Partner back = inverse_partner(p.history, *ahead.record, box, Tolerances{});
  REQUIRE(back.history.valid());
  CHECK(back.history.tree == h.tree);
  CHECK(back.history.nodes.times[0] == doctest::Approx(3.0));
  CHECK(norm(back.history.nodes.omegas[0] - h.nodes.omegas[0]) < 1e-12);
  CHECK(norm(back.history.nodes.momenta[0] - h.nodes.momenta[0]) < 1e-12);
}

TEST_CASE("partner map Jacobian matches the B ratio") {
  // |d(s, w_-, p_-)/d(t_k, w_k, p_k)| = |B_k| / |B_new| on random R- histories.
  const BoxSpec box = test::unit_box(0.1);
  const GaussianEnvelope env{1.0};
  const Tree tree{2, {1}};
  const double t = 2.0;
  const Tolerances tol = Tolerances::defaults(t, 1.0);
  int checked = 0;
  for (std::uint64_t s = 0; s < 200000 && checked < 25; ++s) {
    Rng rng = block_rng(77, 2, s);
    const Configuration z = test::random_point(box, 2, 77, s);
    double lw = 0;
    const NodeVars nv = draw_node_vars(1, t, env, rng, lw);
    const History h = build_history(z, t, tree, nv, tol, box);
    if (!h.valid() || classify_creation(h, 1) != CreationKind::Incoming) continue;
    const RecollisionScan sc = detect_recollision(h, 1, box, tol);
    if (!sc.record || sc.tie) continue;
    const Partner p = cancellation_partner(h, *sc.record, box, tol);
    if (!p.history.valid()) continue;

    auto image = [&](const Eigen::Matrix<double, 6, 1>& x) -> std::optional<Eigen::Matrix<double, 6, 1>> {
      NodeVars v{{x(0)}, {from_angles(x(1), x(2))}, {{x(3), x(4), x(5)}}};
      const History hh = build_history(z, t, tree, v, tol, box);
      if (!hh.valid()) return std::nullopt;
      const RecollisionScan ss = detect_recollision(hh, 1, box, tol);
      if (!ss.record || ss.tie || ss.record->partner != sc.record->partner) return std::nullopt;
      const Partner pp = cancellation_partner(hh, *ss.record, box, tol);
      if (!pp.history.valid() || pp.slot != p.slot) return std::nullopt;
      const int k = pp.slot - 1;
      return node_coords(pp.history.nodes.times[k], pp.history.nodes.omegas[k], pp.history.nodes.momenta[k]);
    };
    const auto x0 = node_coords(nv.times[0], nv.omegas[0], nv.momenta[0]);
    if (std::sin(x0(1)) < 0.2) continue;
    Eigen::Matrix<double, 6, 6> J;
    bool ok = true;
    const double d = 1e-7;
    for (int c = 0; c < 6 && ok; ++c) {
      auto xp = x0, xm = x0;
      xp(c) += d;
      xm(c) -= d;
      const auto yp = image(xp), ym = image(xm);
      if (!yp || !ym) {
        ok = false;
        break;
      }
      J.col(c) = (*yp - *ym) / (2 * d);
    }
    if (!ok) continue;
    const auto y0 = *image(x0);
    if (std::sin(y0(1)) < 0.2) continue;
    // Sphere area elements sin(theta) dtheta dphi on both sides.
    const double det = std::abs(J.determinant()) * std::sin(y0(1)) / std::sin(x0(1));
    const double ratio = std::abs(h.b_factors[0]) / std::abs(p.history.b_factors[0]);
    CHECK(det == doctest::Approx(ratio).epsilon(1e-4));
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("history json dump") {
  const History h = aimed_history();
  std::ostringstream os;
  write_history_json(os, h);
  const auto j = nlohmann::json::parse(os.str());
  CHECK(j["tree"] == "2:[1]");
  CHECK(j["status"] == "valid");
  CHECK(j["b_factors"].size() == 1);
  CHECK(j.contains("segments"));
  CHECK(j.contains("final_state"));
}
