#include "hs/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hs/errors.hpp"

namespace hs {

namespace {

constexpr double kFourPi = 4.0 * std::numbers::pi;
constexpr double kContactSlack = 1e-9;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Vec3 uniform_direction(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double z = 2.0 * u(rng) - 1.0;
  const double phi = 2.0 * std::numbers::pi * u(rng);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

Estimate exact_zero(std::uint64_t seed) {
  Estimate e;
  e.seed = seed;
  return e;
}

SamplingPlan plan_for(const ExperimentSpec& spec, std::uint64_t samples, std::uint64_t stream) {
  return {samples, spec.seed, stream, spec.threads, spec.chunks};
}

BreakdownEntry entry(std::string label, const Estimate& e) {
  return {std::move(label), e.value, e.std_error, e.n_samples, e.n_rejected};
}

bool admissible_point(const BoxSpec& box, const Configuration& z) {
  return is_admissible(box, z, kContactSlack * box.diameter);
}

double rel_diff(const Vec3& a, const Vec3& b, double scale) { return norm(a - b) / scale; }

}  // namespace

Tolerances ExperimentSpec::tol() const {
  if (tolerances) return *tolerances;
  const double beta = measure ? measure->spec().beta : 1.0;
  return Tolerances::defaults(t > 0.0 ? t : 1.0, 1.0 / std::sqrt(beta));
}

void ExperimentSpec::validate() const {
  box.validate();
  if (!measure) throw ConfigError("experiment has no initial measure");
  if (z.empty()) throw ConfigError("evaluation point is empty");
  if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError("time must be finite and non-negative");
  if (!admissible_point(box, z)) throw ConfigError("evaluation point is not admissible");
  if (threads < 1) throw ConfigError("threads must be positive");
  tol().validate();
}

ExperimentSpec ExperimentSpec::at(const Configuration& point, double time, std::uint64_t salt) const {
  ExperimentSpec s = *this;
  s.z = point;
  s.t = time;
  s.stream_salt = mix(stream_salt ^ mix(salt));
  return s;
}

double mean_free_time(const BoxSpec& box, int N, double beta) {
  const double density = N / box.volume();
  const double mean_speed = std::sqrt(8.0 / (std::numbers::pi * beta));
  return 1.0 / (std::numbers::sqrt2 * std::numbers::pi * box.diameter * box.diameter * density *
                mean_speed);
}

Configuration sample_evaluation_point(const BoxSpec& box, int n, double beta, double margin, Rng& rng) {
  const GaussianEnvelope h{beta};
  for (int attempt = 0; attempt < 1000000; ++attempt) {
    Configuration z;
    for (int i = 0; i < n; ++i) {
      Vec3 q;
      for (int d = 0; d < 3; ++d) {
        std::uniform_real_distribution<double> u(box.lower(d) + margin, box.upper(d) - margin);
        q[d] = u(rng);
      }
      z.push_back({q, h.sample(rng)});
    }
    if (is_admissible(box, z)) return z;
  }
  throw PackingTooTight("could not place the evaluation point");
}

double trajectory_clearance(const BoxSpec& box, const Configuration& z, double duration,
                            const Tolerances& tol) {
  auto clearance = [&](const Configuration& c) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& s : c)
      for (int a = 0; a < 3; ++a) d = std::min({d, s.q[a] - box.lower(a), box.upper(a) - s.q[a]});
    return d;
  };
  // Between events the motion is straight, so extremes sit at event instants.
  double best = clearance(z);
  const FlowResult fr = advance(box, z, duration, tol, [&](const Event&, const Configuration& c) {
    best = std::min(best, clearance(c));
  });
  if (!fr.ok()) return -1.0;
  return std::min(best, clearance(fr.state));
}

NodeVars draw_node_vars(int m, double t, const GaussianEnvelope& h, Rng& rng, double& log_weight) {
  NodeVars nv;
  std::uniform_real_distribution<double> u(0.0, t);
  nv.times.resize(m);
  for (auto& s : nv.times) s = u(rng);
  std::sort(nv.times.begin(), nv.times.end(), std::greater<>());
  log_weight = m > 0 ? m * (std::log(t) + std::log(kFourPi)) - std::lgamma(m + 1.0) : 0.0;
  for (int k = 0; k < m; ++k) {
    nv.omegas.push_back(uniform_direction(rng));
    nv.momenta.push_back(h.sample(rng));
    log_weight -= h.log_value(nv.momenta.back());
  }
  return nv;
}

TreeDraw draw_tree_sample(const Tree& tree, const Configuration& z, double t,
                          const InitialMeasure& measure, const Tolerances& tol, Rng& rng,
                          double log_extra) {
  TreeDraw d;
  const GaussianEnvelope h = measure.envelope();
  const NodeVars nv = draw_node_vars(tree.m(), t, h, rng, d.log_weight);
  d.log_weight += log_extra;
  const int count = tree.n + tree.m();
  d.completion.resize(std::max(0, measure.max_particles() - count));
  for (auto& q : d.completion) q = measure.uniform_position(rng);

  d.history = build_history(z, t, tree, nv, tol, measure.box());
  if (!d.history.valid()) {
    d.outcome.rejected = is_singular(d.history.status);
    return d;
  }
  const Rho0Sample r = measure.rho0_given(d.history.final_state, d.completion);
  if (r.spatial == 0.0) return d;
  d.outcome.value = weight(d.history) * r.spatial * std::exp(d.log_weight + r.log_kinetic);

  const double e0 = kinetic_energy(z);
  double e_created = 0.0;
  for (const Vec3& p : nv.momenta) e_created += 0.5 * norm2(p);
  const double e_final = kinetic_energy(d.history.final_state);
  const bool energy_ok = std::abs(e_final - e0 - e_created) <= 1e-9 * (e_final + 1.0);
  const bool spatial_ok = r.spatial <= measure.rho0_spatial_bound(count) * (1.0 + 1e-12);
  d.outcome.envelope_violation = !(energy_ok && spatial_ok);
  return d;
}

SampleOutcome draw_direct_sample(const Configuration& z, double t, const InitialMeasure& measure,
                                 const Tolerances& tol, Rng& rng, double log_extra) {
  SampleOutcome out;
  const int n = static_cast<int>(z.size());
  const int max = measure.max_particles();
  if (n > max) return out;
  const BoxSpec& box = measure.box();
  const GaussianEnvelope h = measure.envelope();
  const double log_vol = std::log(box.accessible_volume());
  const int k_max = max - n;
  Configuration full = z;
  double log_h_sum = 0.0;
  std::vector<double> log_h_prefix{0.0};
  for (int i = 0; i < k_max; ++i) {
    const Vec3 q = measure.uniform_position(rng);
    const Vec3 p = h.sample(rng);
    full.push_back({q, p});
    log_h_sum += h.log_value(p);
    log_h_prefix.push_back(log_h_sum);
  }

  auto evaluate = [&](int k, double& value) {
    Configuration prefix(full.begin(), full.begin() + n + k);
    if (!admissible_point(box, prefix)) return false;
    const FlowResult fr = backward(box, prefix, t, tol);
    if (!fr.ok()) {
      out.rejected = true;
      return false;
    }
    const double lf = measure.log_density_f0(fr.state);
    if (std::isinf(lf)) return true;
    value = std::exp(log_extra + k * log_vol - log_h_prefix[k] + lf);
    return true;
  };

  if (!measure.grand_canonical()) {
    double v = 0.0;
    if (!evaluate(k_max, v)) return out;
    const double log_pref = std::lgamma(max + 1.0) - std::lgamma(k_max + 1.0);
    out.value = v * std::exp(log_pref);
    return out;
  }
  double total = 0.0;
  for (int k = 0; k <= k_max; ++k) {
    double v = 0.0;
    if (!evaluate(k, v)) {
      if (out.rejected) return out;
      break;
    }
    total += v * std::exp(-std::lgamma(k + 1.0));
  }
  out.value = total;
  return out;
}

Estimate rho_direct(const ExperimentSpec& spec) {
  spec.validate();
  const InitialMeasure& measure = *spec.measure;
  if (spec.n() > measure.max_particles()) return exact_zero(spec.seed);
  const bool deterministic = !measure.grand_canonical() && spec.n() == measure.max_particles();
  const Tolerances tol = spec.tol();
  Estimate e = run_samples(plan_for(spec, deterministic ? 1 : spec.samples,
                                    stream_id("rho_direct", spec.stream_salt)),
                           [&](Rng& rng) { return draw_direct_sample(spec.z, spec.t, measure, tol, rng); })
                   .finish(spec.seed);
  if (deterministic) e.std_error = 0.0;
  e.norm_rel_error = measure.normalization_rel_error();
  return e;
}

Estimate tree_value(const Tree& tree, const ExperimentSpec& spec) {
  spec.validate();
  tree.validate();
  if (tree.n != spec.n()) throw InvalidTree("tree root count does not match the evaluation point");
  const InitialMeasure& measure = *spec.measure;
  const int m = tree.m();
  if (tree.n + m > measure.max_particles()) return exact_zero(spec.seed);
  if (m > 0 && spec.t == 0.0) return exact_zero(spec.seed);
  const bool deterministic = m == 0 && tree.n == measure.max_particles();
  const Tolerances tol = spec.tol();
  Estimate e =
      run_samples(plan_for(spec, deterministic ? 1 : spec.samples,
                           stream_id(format_tree(tree), spec.stream_salt)),
                  [&](Rng& rng) {
                    return draw_tree_sample(tree, spec.z, spec.t, measure, tol, rng).outcome;
                  })
          .finish(spec.seed);
  if (deterministic) e.std_error = 0.0;
  e.norm_rel_error = measure.normalization_rel_error();
  return e;
}

Estimate rho_series(const ExperimentSpec& spec) {
  spec.validate();
  const int n = spec.n();
  const int max = spec.measure->max_particles();
  std::vector<Estimate> parts;
  std::vector<BreakdownEntry> rows;
  for (int m = 0; n + m <= max; ++m) {
    for (const Tree& tree : enumerate_trees(n, m)) {
      parts.push_back(tree_value(tree, spec));
      rows.push_back(entry(format_tree(tree), parts.back()));
    }
  }
  const std::vector<double> ones(parts.size(), 1.0);
  Estimate e = combine(parts, ones);
  e.seed = spec.seed;
  e.breakdown = std::move(rows);
  return e;
}

StepCheck verify_integration_step(const Tree& source, const ExperimentSpec& spec) {
  spec.validate();
  source.validate();
  const InitialMeasure& measure = *spec.measure;
  if (measure.grand_canonical()) throw ConfigError("the integration step applies to canonical measures");
  const int n = spec.n();
  const int m = source.m();
  const int N = measure.max_particles();
  if (source.n != n + 1) throw InvalidTree("source tree needs root count n+1");
  if (n + 1 + m > N) throw ConfigError("integration step needs n+1+m <= N");
  const Tolerances tol = spec.tol();
  const BoxSpec& box = measure.box();
  const GaussianEnvelope h = measure.envelope();
  const double log_vol = std::log(box.accessible_volume());

  StepCheck out;
  out.lhs = run_samples(plan_for(spec, spec.samples, stream_id("step-lhs:" + format_tree(source), spec.stream_salt)),
                        [&](Rng& rng) {
                          Configuration z1 = spec.z;
                          const Vec3 q = measure.uniform_position(rng);
                          const Vec3 p = h.sample(rng);
                          z1.push_back({q, p});
                          if (!admissible_point(box, z1)) {
                            // Keep the random stream aligned with admissible draws.
                            return SampleOutcome{};
                          }
                          return draw_tree_sample(source, z1, spec.t, measure, tol, rng,
                                                  log_vol - h.log_value(p))
                              .outcome;
                        })
                .finish(spec.seed);
  out.lhs.norm_rel_error = measure.normalization_rel_error();

  std::vector<Estimate> parts;
  std::vector<double> coefs;
  const int l = ell(source);
  if (l == m + 1 && N - n - m > 0) {
    const Tree t2 = discard_trivial(source);
    parts.push_back(tree_value(t2, spec.at(spec.z, spec.t, stream_id("discard"))));
    coefs.push_back(static_cast<double>(N - n - m));
    out.terms.push_back(entry(std::to_string(N - n - m) + " x " + format_tree(t2), parts.back()));
  }
  for (int k = 1; k <= l; ++k) {
    for (int i = 1; i <= n + k - 1; ++i) {
      const Tree t1 = attach(source, k, i);
      const std::string tag = "attach k=" + std::to_string(k) + " i=" + std::to_string(i);
      parts.push_back(tree_value(t1, spec.at(spec.z, spec.t, stream_id(tag))));
      coefs.push_back(1.0);
      out.terms.push_back(entry(tag + " " + format_tree(t1), parts.back()));
    }
  }
  out.rhs = combine(parts, coefs);
  out.rhs.seed = spec.seed;
  return out;
}

CancellationReport verify_cancellation(const Tree& tree, int k, const ExperimentSpec& spec,
                                       std::uint64_t pair_samples) {
  spec.validate();
  tree.validate();
  const int n = spec.n();
  if (tree.n != n) throw InvalidTree("tree root count does not match the evaluation point");
  const Detached det = detach(tree, k);
  const Tree& source = det.source;
  const int i = det.i;
  const int l = ell(source);
  const InitialMeasure& measure = *spec.measure;
  const BoxSpec& box = measure.box();
  const Tolerances tol = spec.tol();
  const double t = spec.t;
  CancellationReport rep;

  // Restricted value of the tree on R- at node k.
  rep.minus_part =
      run_samples(plan_for(spec, spec.samples, stream_id("cancel-minus:" + format_tree(tree), spec.stream_salt)),
                  [&](Rng& rng) {
                    TreeDraw d = draw_tree_sample(tree, spec.z, t, measure, tol, rng);
                    if (!d.history.valid() || d.outcome.value == 0.0) return SampleOutcome{0.0, d.outcome.rejected, false};
                    if (classify_creation(d.history, k) != CreationKind::Incoming) return SampleOutcome{};
                    const RecollisionScan sc = detect_recollision(d.history, k, box, tol);
                    if (sc.tie) return SampleOutcome{0.0, true, false};
                    if (!sc.record) return SampleOutcome{};
                    return d.outcome;
                  })
          .finish(spec.seed);

  // Partner trees attach(source, k*, i*) restricted to R+ at node k* with
  // the contact inside slot k and on line i.
  std::vector<Estimate> plus;
  for (int ks = k; ks <= l; ++ks) {
    for (int is = 1; is <= n + ks - 1; ++is) {
      const Tree partner_tree = attach(source, ks, is);
      const std::string tag = "cancel-plus k*=" + std::to_string(ks) + " i*=" + std::to_string(is);
      Estimate e =
          run_samples(plan_for(spec, spec.samples, stream_id(tag, spec.stream_salt)), [&](Rng& rng) {
            TreeDraw d = draw_tree_sample(partner_tree, spec.z, t, measure, tol, rng);
            if (!d.history.valid() || d.outcome.value == 0.0) return SampleOutcome{0.0, d.outcome.rejected, false};
            if (classify_creation(d.history, ks) != CreationKind::Outgoing) return SampleOutcome{};
            const RecollisionScan sc = detect_recollision(d.history, ks, box, tol);
            if (sc.tie) return SampleOutcome{0.0, true, false};
            if (!sc.record || sc.record->partner != i) return SampleOutcome{};
            const double upper = k == 1 ? t : d.history.nodes.times[k - 2];
            const double lower = d.history.nodes.times[k - 1];
            if (!(sc.record->time > lower && sc.record->time < upper)) return SampleOutcome{};
            return d.outcome;
          }).finish(spec.seed);
      rep.plus_part.breakdown.push_back(entry(tag + " " + format_tree(partner_tree), e));
      plus.push_back(e);
    }
  }
  {
    auto rows = std::move(rep.plus_part.breakdown);
    rep.plus_part = combine(plus, std::vector<double>(plus.size(), 1.0));
    rep.plus_part.breakdown = std::move(rows);
  }
  const Estimate both[2] = {rep.minus_part, rep.plus_part};
  const double ones[2] = {1.0, 1.0};
  rep.sum = combine(both, ones);

  // Pairing of individual R- histories with their partners.
  Rng rng = block_rng(spec.seed, stream_id("cancel-pairs:" + format_tree(tree), spec.stream_salt), 0);
  const double speed = 1.0 / std::sqrt(measure.spec().beta);
  const double length = std::max({box.lengths.x, box.lengths.y, box.lengths.z});
  const std::uint64_t max_draws = 1000 * std::max<std::uint64_t>(pair_samples, 1);
  auto note = [&](std::string msg) {
    if (rep.log.size() < 20) rep.log.push_back(std::move(msg));
  };
  while (rep.r_minus < pair_samples && rep.draws < max_draws) {
    ++rep.draws;
    TreeDraw d = draw_tree_sample(tree, spec.z, t, measure, tol, rng);
    if (!d.history.valid()) continue;
    const History& h = d.history;
    if (classify_creation(h, k) != CreationKind::Incoming) continue;
    const RecollisionScan sc = detect_recollision(h, k, box, tol);
    if (sc.tie) {
      ++rep.tolerance_rejections;
      continue;
    }
    if (!sc.record) continue;
    ++rep.r_minus;
    const RecollisionRecord& rec = *sc.record;

    Partner p;
    try {
      p = cancellation_partner(h, rec, box, tol);
    } catch (const PartnerConstructionFailed& ex) {
      note(std::string("partner construction failed: ") + ex.what());
      continue;
    }
    const History& hp = p.history;
    if (!hp.valid()) {
      if (is_singular(hp.status)) ++rep.tolerance_rejections;
      note("partner history " + std::string(to_string(hp.status)) + " at s=" + std::to_string(rec.time));
      continue;
    }
    const int slot = p.slot;
    const int i_star = hp.tree.js[slot - 1];
    if (attach(source, slot, i_star) != hp.tree) {
      note("partner tree " + format_tree(hp.tree) + " differs from the attached tree");
      continue;
    }

    // Shared final configuration up to relabeling.
    bool shared = hp.final_state.size() == h.final_state.size();
    for (std::size_t x = 0; shared && x < h.final_state.size(); ++x) {
      const auto& a = h.final_state[x];
      const auto& b = hp.final_state[p.label_map[x] - 1];
      shared = rel_diff(a.q, b.q, length) <= 1e-9 && rel_diff(a.p, b.p, speed + norm(a.p)) <= 1e-9;
    }
    if (shared) ++rep.shared_final_ok;

    // Per-sample cancellation against the common node-variable measure.
    const double b_k = h.b_factors[k - 1];
    const double b_new = hp.b_factors[slot - 1];
    const double w_h = weight(h) * measure.rho0_given(h.final_state, d.completion).value();
    const double w_p = weight(hp) * (std::abs(b_k) / std::abs(b_new)) *
                       measure.rho0_given(hp.final_state, d.completion).value();
    const double viol = std::abs(w_h + w_p);
    const double rel = w_h != 0.0 ? viol / std::abs(w_h) : (viol == 0.0 ? 0.0 : 1.0);
    rep.max_relative_violation = std::max(rep.max_relative_violation, rel);
    if (rel <= 1e-9) ++rep.antisymmetry_ok;
    else note("antisymmetry violated, relative " + std::to_string(rel));

    // The partner must sit in R+ at its new node and map back.
    const RecollisionScan back_scan = detect_recollision(hp, slot, box, tol);
    if (back_scan.tie || !back_scan.record) {
      note("partner shows no forward recollision at node " + std::to_string(slot));
      continue;
    }
    const RecollisionRecord& fwd = *back_scan.record;
    if (fwd.partner == i && std::abs(fwd.time - h.nodes.times[k - 1]) <= 1e-9 * t) ++rep.partner_in_r_plus;
    try {
      const Partner back = inverse_partner(hp, fwd, box, tol);
      bool same = back.history.tree == h.tree && back.history.nodes.size() == h.nodes.size();
      for (std::size_t r = 0; same && r < h.nodes.size(); ++r) {
        same = std::abs(back.history.nodes.times[r] - h.nodes.times[r]) <= 1e-9 * t &&
               norm(back.history.nodes.omegas[r] - h.nodes.omegas[r]) <= 1e-9 &&
               rel_diff(back.history.nodes.momenta[r], h.nodes.momenta[r], speed + norm(h.nodes.momenta[r])) <= 1e-9;
      }
      if (same) ++rep.round_trip_ok;
      else note("round trip does not reproduce the node data");
    } catch (const PartnerConstructionFailed& ex) {
      note(std::string("inverse partner failed: ") + ex.what());
    }
  }
  return rep;
}

Estimate collision_operator(const ExperimentSpec& spec, InnerEstimator inner) {
  spec.validate();
  const InitialMeasure& measure = *spec.measure;
  const int n = spec.n();
  const int max = measure.max_particles();
  if (n + 1 > max) return exact_zero(spec.seed);
  const BoxSpec& box = measure.box();
  const GaussianEnvelope h = measure.envelope();
  const Tolerances tol = spec.tol();
  const double a = box.diameter;

  std::vector<Tree> trees;
  if (inner == InnerEstimator::Series) {
    for (int m = 0; n + 1 + m <= max; ++m)
      for (const Tree& tr : enumerate_trees(n + 1, m)) trees.push_back(tr);
  }
  const std::uint64_t stream =
      stream_id(inner == InnerEstimator::Direct ? "Q-direct" : "Q-series", spec.stream_salt);
  Estimate e = run_samples(plan_for(spec, spec.samples, stream), [&](Rng& rng) {
                 std::uniform_int_distribution<int> pick(0, n - 1);
                 const int j = pick(rng);
                 const Vec3 omega = uniform_direction(rng);
                 const Vec3 p_hat = h.sample(rng);
                 const Vec3 x = spec.z[j].q + omega * a;
                 SampleOutcome out;
                 for (int d = 0; d < 3; ++d)
                   if (x[d] < box.lower(d) || x[d] > box.upper(d)) return out;
                 for (int r = 0; r < n; ++r)
                   if (r != j && norm2(x - spec.z[r].q) < a * a) return out;
                 const double rel = dot(omega, p_hat - spec.z[j].p);
                 if (std::abs(rel) < tol.eps_graze) {
                   out.rejected = true;
                   return out;
                 }
                 Configuration z1 = spec.z;
                 z1.push_back({x, p_hat});
                 const double log_extra = std::log(n * kFourPi * a * a * std::abs(rel)) - h.log_value(p_hat);
                 const double sign = rel > 0.0 ? 1.0 : -1.0;
                 if (inner == InnerEstimator::Direct) {
                   out = draw_direct_sample(z1, spec.t, measure, tol, rng, log_extra);
                   out.value *= sign;
                   return out;
                 }
                 double total = 0.0;
                 for (const Tree& tr : trees) {
                   if (tr.m() > 0 && spec.t == 0.0) continue;
                   const TreeDraw d = draw_tree_sample(tr, z1, spec.t, measure, tol, rng, log_extra);
                   if (d.outcome.rejected) return SampleOutcome{0.0, true, false};
                   out.envelope_violation = out.envelope_violation || d.outcome.envelope_violation;
                   total += d.outcome.value;
                 }
                 out.value = sign * total;
                 return out;
               }).finish(spec.seed);
  e.norm_rel_error = measure.normalization_rel_error();
  return e;
}

bool BbgkyReport::pass() const {
  return std::all_of(points.begin(), points.end(), [](const BbgkyPoint& p) { return p.pass; });
}

BbgkyReport bbgky_residual(const ExperimentSpec& spec, const std::vector<double>& t_grid, double sigmas) {
  spec.validate();
  if (t_grid.empty() || t_grid.front() != 0.0) throw ConfigError("time grid must start at 0");
  for (std::size_t g = 1; g < t_grid.size(); ++g)
    if (!(t_grid[g] > t_grid[g - 1])) throw ConfigError("time grid must increase");
  const BoxSpec& box = spec.measure->box();
  const Tolerances tol = spec.tol();

  auto flowed = [&](double s) {
    const FlowResult fr = advance(box, spec.z, s, tol);
    if (!fr.ok()) throw SingularSample("forward flow of the evaluation point is singular");
    return fr.state;
  };

  // Q at grid points (even indices) and midpoints (odd indices).
  std::vector<double> q_times;
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    if (g > 0) q_times.push_back(0.5 * (t_grid[g - 1] + t_grid[g]));
    q_times.push_back(t_grid[g]);
  }
  std::vector<Estimate> q;
  for (std::size_t r = 0; r < q_times.size(); ++r)
    q.push_back(collision_operator(spec.at(flowed(q_times[r]), q_times[r], stream_id("Q", r)),
                                   InnerEstimator::Series));

  const Estimate rho_start = rho_series(spec.at(spec.z, 0.0, stream_id("rho-start")));
  BbgkyReport rep;
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    BbgkyPoint pt;
    pt.t = t_grid[g];
    std::vector<double> coarse(q.size(), 0.0);
    std::vector<double> fine(q.size(), 0.0);
    for (std::size_t i = 0; i < g; ++i) {
      const double w = t_grid[i + 1] - t_grid[i];
      coarse[2 * i] += 0.5 * w;
      coarse[2 * i + 2] += 0.5 * w;
      fine[2 * i] += 0.25 * w;
      fine[2 * i + 1] += 0.5 * w;
      fine[2 * i + 2] += 0.25 * w;
    }
    pt.rhs = combine(q, coarse);
    const Estimate refined = combine(q, fine);
    pt.quadrature_bound = std::abs(refined.value - pt.rhs.value);
    if (g == 0) {
      pt.lhs = exact_zero(spec.seed);
    } else {
      const Estimate rho_t = rho_series(spec.at(flowed(pt.t), pt.t, stream_id("rho", g)));
      const Estimate parts[2] = {rho_t, rho_start};
      const double coefs[2] = {1.0, -1.0};
      pt.lhs = combine(parts, coefs);
    }
    pt.residual = pt.lhs.value - pt.rhs.value;
    pt.sigma = std::hypot(pt.lhs.std_error, pt.rhs.std_error);
    pt.pass = std::abs(pt.residual) <= sigmas * (pt.sigma + pt.quadrature_bound);
    rep.points.push_back(pt);
  }
  return rep;
}

}  // namespace hs
