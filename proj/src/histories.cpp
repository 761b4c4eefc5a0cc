#include "hs/histories.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "hs/errors.hpp"
#include "json.hpp"

namespace hs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct OpenSegment {
  double s_hi = 0.0;
  Vec3 q_hi;
  Vec3 p;
};

HistoryStatus from_singularity(Singularity s) {
  return s == Singularity::EventCap ? HistoryStatus::EventCapExceeded
                                    : HistoryStatus::SingularFlow;
}

// First approaching contact at distance a of two straight motions starting
// at relative position dq with relative velocity dv, or +inf.
double first_contact(const Vec3& dq, const Vec3& dv, double diameter) {
  const double b = dot(dq, dv);
  if (b >= 0.0) return kInf;
  const double c = norm2(dq) - diameter * diameter;
  const double disc = b * b - norm2(dv) * c;
  if (disc < 0.0) return kInf;
  return std::max(c / (-b + std::sqrt(disc)), 0.0);
}

struct NodeEntry {
  double time;
  Vec3 omega;
  Vec3 momentum;
  int progenitor;
  bool moved;
};

Partner rebuild(const History& h, std::vector<NodeEntry> entries, std::vector<int> label_map,
                const BoxSpec& box, const Tolerances& tol) {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const NodeEntry& x, const NodeEntry& y) { return x.time > y.time; });
  Partner out;
  out.label_map = std::move(label_map);
  Tree tree{h.n(), {}};
  NodeVars nv;
  for (std::size_t r = 0; r < entries.size(); ++r) {
    tree.js.push_back(entries[r].progenitor);
    nv.times.push_back(entries[r].time);
    nv.omegas.push_back(entries[r].omega);
    nv.momenta.push_back(entries[r].momentum);
    if (entries[r].moved) out.slot = static_cast<int>(r) + 1;
  }
  if (!tree.valid()) throw PartnerConstructionFailed("relabeled tree is invalid: " + format_tree(tree));
  out.history = build_history(h.start, h.t, tree, nv, tol, box);
  return out;
}

}  // namespace

std::string_view to_string(HistoryStatus s) {
  switch (s) {
    case HistoryStatus::Valid:
      return "valid";
    case HistoryStatus::OverlapAtCreation:
      return "overlap_at_creation";
    case HistoryStatus::WallViolationAtCreation:
      return "wall_violation_at_creation";
    case HistoryStatus::GrazeAtCreation:
      return "graze_at_creation";
    case HistoryStatus::SingularFlow:
      return "singular_flow";
    case HistoryStatus::EventCapExceeded:
      return "event_cap_exceeded";
    case HistoryStatus::BadNodeTimes:
      return "bad_node_times";
  }
  return "unknown";
}

bool is_singular(HistoryStatus s) {
  return s == HistoryStatus::GrazeAtCreation || s == HistoryStatus::SingularFlow ||
         s == HistoryStatus::EventCapExceeded;
}

ParticleState History::state_at(int label, double s) const {
  const auto& segs = segments.at(label - 1);
  if (segs.empty()) throw std::out_of_range("label has no trajectory");
  auto it = std::upper_bound(segs.begin(), segs.end(), s,
                             [](double v, const Segment& g) { return v < g.s_hi; });
  if (it == segs.end()) --it;
  return {it->position(s), it->p};
}

History build_history(const Configuration& z_n, double t, const Tree& tree, const NodeVars& nv,
                      const Tolerances& tol, const BoxSpec& box) {
  tree.validate();
  if (static_cast<int>(z_n.size()) != tree.n)
    throw InvalidTree("root count does not match the configuration size");
  if (static_cast<int>(nv.times.size()) != tree.m() || nv.omegas.size() != nv.times.size() ||
      nv.momenta.size() != nv.times.size())
    throw InvalidTree("node variables do not match the tree");

  History h;
  h.tree = tree;
  h.start = z_n;
  h.t = t;
  h.nodes = nv;
  const int n = tree.n;
  const int m = tree.m();

  double prev = t;
  for (int k = 0; k < m; ++k) {
    if (!(nv.times[k] < prev) || !(nv.times[k] > 0.0)) {
      h.status = HistoryStatus::BadNodeTimes;
      return h;
    }
    prev = nv.times[k];
  }

  const double a = box.diameter;
  h.segments.assign(n + m, {});
  std::vector<OpenSegment> open(n + m);
  Configuration cur = z_n;
  for (int i = 0; i < n; ++i) open[i] = {t, cur[i].q, cur[i].p};

  auto close = [&](int idx, double s, const Vec3& q_new, const Vec3& p_new) {
    if (open[idx].s_hi > s) h.segments[idx].push_back({s, open[idx].s_hi, open[idx].q_hi, open[idx].p});
    open[idx] = {s, q_new, p_new};
  };

  double s_top = t;
  for (int k = 1; k <= m + 1; ++k) {
    const double s_bot = k <= m ? nv.times[k - 1] : 0.0;
    const bool outgoing_prev = k >= 2 && h.b_factors[k - 2] > 0.0;
    std::size_t events_in_step = 0;
    auto observer = [&](const Event& ev, const Configuration& st) {
      const double s = s_top - ev.time;
      close(ev.i, s, st[ev.i].q, -st[ev.i].p);
      if (ev.kind == EventKind::PairCollision) {
        close(ev.j, s, st[ev.j].q, -st[ev.j].p);
        PairRecord rec;
        rec.time = s;
        rec.i = ev.i + 1;
        rec.j = ev.j + 1;
        rec.omega = ev.normal;
        rec.upper_i = -ev.p_in_i;
        rec.upper_j = -ev.p_in_j;
        rec.lower_i = -st[ev.i].p;
        rec.lower_j = -st[ev.j].p;
        if (outgoing_prev && events_in_step == 0) {
          const int created = n + k - 1;
          const int prog = tree.js[k - 2];
          rec.at_creation = (rec.i == prog && rec.j == created) || (rec.i == created && rec.j == prog);
        }
        h.collisions.push_back(rec);
      }
      ++events_in_step;
    };
    FlowResult fr = backward(box, cur, s_top - s_bot, tol, observer);
    if (!fr.ok()) {
      h.status = from_singularity(fr.singular);
      return h;
    }
    cur = std::move(fr.state);
    for (std::size_t i = 0; i < cur.size(); ++i) close(static_cast<int>(i), s_bot, cur[i].q, cur[i].p);

    if (k <= m) {
      const int j = tree.js[k - 1];
      const Vec3& omega = nv.omegas[k - 1];
      const Vec3& p_hat = nv.momenta[k - 1];
      const Vec3 x = cur[j - 1].q + omega * a;
      for (int d = 0; d < 3; ++d) {
        if (x[d] < box.lower(d) || x[d] > box.upper(d)) {
          h.status = HistoryStatus::WallViolationAtCreation;
          h.failed_node = k;
          return h;
        }
      }
      for (std::size_t i = 0; i < cur.size(); ++i) {
        if (static_cast<int>(i) == j - 1) continue;
        if (norm2(x - cur[i].q) < a * a) {
          h.status = HistoryStatus::OverlapAtCreation;
          h.failed_node = k;
          return h;
        }
      }
      const double rel = dot(omega, p_hat - cur[j - 1].p);
      if (std::abs(rel) < tol.eps_graze) {
        h.status = HistoryStatus::GrazeAtCreation;
        h.failed_node = k;
        return h;
      }
      h.b_factors.push_back(a * a * rel);
      h.progenitor_momenta.push_back(cur[j - 1].p);
      h.progenitor_positions.push_back(cur[j - 1].q);
      cur.push_back({x, p_hat});
      open[n + k - 1] = {s_bot, x, p_hat};
    }
    s_top = s_bot;
  }
  for (auto& segs : h.segments) std::reverse(segs.begin(), segs.end());
  h.final_state = std::move(cur);
  return h;
}

double weight(const History& h) {
  if (!h.valid()) throw std::logic_error("weight of a rejected history");
  double w = 1.0;
  for (double b : h.b_factors) w *= b;
  return w;
}

const Configuration& final_configuration(const History& h) {
  if (!h.valid()) throw std::logic_error("final configuration of a rejected history");
  return h.final_state;
}

CreationKind classify_creation(const History& h, int k) {
  return h.b_factors.at(k - 1) > 0.0 ? CreationKind::Outgoing : CreationKind::Incoming;
}

RecollisionScan detect_recollision(const History& h, int k, const BoxSpec& box,
                                   const Tolerances& tol) {
  if (!h.valid()) throw std::logic_error("recollision scan of a rejected history");
  RecollisionScan out;
  const int n = h.n();
  const int label = n + k;
  const double t_k = h.nodes.times.at(k - 1);
  auto near_creation = [&](double s, double extra) {
    if (std::abs(s - extra) < tol.eps_time) return true;
    for (double tr : h.nodes.times)
      if (std::abs(s - tr) < tol.eps_time) return true;
    return false;
  };

  if (classify_creation(h, k) == CreationKind::Outgoing) {
    // Ghost copy of the created particle, free-streamed forward with walls only.
    const ParticleState g0{h.progenitor_positions[k - 1] + h.nodes.omegas[k - 1] * box.diameter,
                           h.nodes.momenta[k - 1]};
    std::vector<Segment> ghost;
    double g_lo = t_k;
    ParticleState g_state = g0;
    auto obs = [&](const Event& ev, const Configuration& st) {
      const double s = t_k + ev.time;
      ghost.push_back({g_lo, s, st[0].q, g_state.p});
      g_lo = s;
      g_state = st[0];
    };
    FlowResult fr = advance(box, Configuration{g0}, h.t - t_k, tol, obs);
    if (!fr.ok()) {
      out.tie = true;
      return out;
    }
    ghost.push_back({g_lo, h.t, fr.state[0].q, g_state.p});

    double best = kInf;
    RecollisionRecord rec;
    for (int r = 1; r < label; ++r) {
      for (const Segment& sr : h.segments[r - 1]) {
        for (const Segment& sg : ghost) {
          const double lo = std::max({sr.s_lo, sg.s_lo, t_k});
          const double hi = std::min(sr.s_hi, sg.s_hi);
          if (!(hi > lo) || lo >= best) continue;
          const Vec3 dq = sg.position(lo) - sr.position(lo);
          const double tau = first_contact(dq, sg.p - sr.p, box.diameter);
          const double s = lo + tau;
          if (s <= hi && s < best) {
            best = s;
            rec.partner = r;
            rec.position = sg.position(s);
            rec.omega = (rec.position - sr.position(s)) * (1.0 / box.diameter);
            rec.momentum = sg.p;
            rec.partner_momentum = sr.p;
          }
        }
      }
    }
    if (best < kInf) {
      rec.node = k;
      rec.time = best;
      rec.direction = RecollisionRecord::Direction::Forward;
      if (near_creation(best, h.t)) {
        out.tie = true;
        return out;
      }
      out.record = rec;
    }
    return out;
  }

  double window_end = 0.0;
  for (int r = k + 1; r <= h.m(); ++r) {
    if (h.tree.js[r - 1] == label) {
      window_end = h.nodes.times[r - 1];
      break;
    }
  }
  for (const PairRecord& pr : h.collisions) {
    if (pr.at_creation || pr.time >= t_k) continue;
    if (pr.i != label && pr.j != label) continue;
    if (pr.time <= window_end) break;
    RecollisionRecord rec;
    rec.node = k;
    rec.time = pr.time;
    rec.direction = RecollisionRecord::Direction::Backward;
    const bool first = pr.i == label;
    rec.partner = first ? pr.j : pr.i;
    rec.omega = first ? pr.omega : -pr.omega;
    rec.momentum = first ? pr.upper_i : pr.upper_j;
    rec.partner_momentum = first ? pr.upper_j : pr.upper_i;
    rec.position = h.state_at(label, pr.time).q;
    if (near_creation(pr.time, window_end)) {
      out.tie = true;
      return out;
    }
    out.record = rec;
    return out;
  }
  return out;
}

Partner cancellation_partner(const History& h, const RecollisionRecord& rec, const BoxSpec& box,
                             const Tolerances& tol) {
  if (!h.valid() || rec.direction != RecollisionRecord::Direction::Backward)
    throw PartnerConstructionFailed("partner needs a backward recollision of a valid history");
  const int n = h.n();
  const int m = h.m();
  const int k = rec.node;
  const int label = n + k;
  const int k_star = static_cast<int>(
      std::count_if(h.nodes.times.begin(), h.nodes.times.end(), [&](double s) { return s > rec.time; }));
  if (k_star < k) throw PartnerConstructionFailed("recollision above its creation");
  auto sigma = [&](int x) {
    if (x < label || x > n + k_star) return x;
    if (x == label) return n + k_star;
    return x - 1;
  };
  std::vector<NodeEntry> entries;
  for (int r = 1; r <= m; ++r) {
    if (r == k) continue;
    entries.push_back({h.nodes.times[r - 1], h.nodes.omegas[r - 1], h.nodes.momenta[r - 1],
                       sigma(h.tree.js[r - 1]), false});
  }
  entries.push_back({rec.time, rec.omega, rec.momentum, sigma(rec.partner), true});
  std::vector<int> map(n + m);
  for (int x = 1; x <= n + m; ++x) map[x - 1] = sigma(x);
  Partner p = rebuild(h, std::move(entries), std::move(map), box, tol);
  if (p.slot != k_star) throw PartnerConstructionFailed("moved creation landed in the wrong slot");
  return p;
}

Partner inverse_partner(const History& h, const RecollisionRecord& rec, const BoxSpec& box,
                        const Tolerances& tol) {
  if (!h.valid() || rec.direction != RecollisionRecord::Direction::Forward)
    throw PartnerConstructionFailed("inverse partner needs a forward recollision of a valid history");
  const int n = h.n();
  const int m = h.m();
  const int kk = rec.node;
  int k_new = 1;
  for (int r = 1; r <= m; ++r)
    if (r != kk && h.nodes.times[r - 1] > rec.time) ++k_new;
  if (k_new > kk) throw PartnerConstructionFailed("forward recollision below its creation");
  auto tau = [&](int x) {
    if (x < n + k_new || x > n + kk) return x;
    if (x == n + kk) return n + k_new;
    return x + 1;
  };
  std::vector<NodeEntry> entries;
  for (int r = 1; r <= m; ++r) {
    if (r == kk) continue;
    entries.push_back({h.nodes.times[r - 1], h.nodes.omegas[r - 1], h.nodes.momenta[r - 1],
                       tau(h.tree.js[r - 1]), false});
  }
  entries.push_back({rec.time, rec.omega, rec.momentum, tau(rec.partner), true});
  std::vector<int> map(n + m);
  for (int x = 1; x <= n + m; ++x) map[x - 1] = tau(x);
  Partner p = rebuild(h, std::move(entries), std::move(map), box, tol);
  if (p.slot != k_new) throw PartnerConstructionFailed("moved creation landed in the wrong slot");
  return p;
}

void write_history_json(std::ostream& os, const History& h) {
  using nlohmann::json;
  auto vec = [](const Vec3& v) { return json::array({v.x, v.y, v.z}); };
  json j;
  j["tree"] = format_tree(h.tree);
  j["t"] = h.t;
  j["status"] = std::string(to_string(h.status));
  j["b_factors"] = h.b_factors;
  json nodes = json::array();
  for (std::size_t r = 0; r < h.nodes.size(); ++r) {
    nodes.push_back({{"time", h.nodes.times[r]},
                     {"omega", vec(h.nodes.omegas[r])},
                     {"momentum", vec(h.nodes.momenta[r])}});
  }
  j["nodes"] = nodes;
  json segs = json::array();
  for (std::size_t lab = 0; lab < h.segments.size(); ++lab) {
    json list = json::array();
    for (const Segment& s : h.segments[lab])
      list.push_back({{"s_lo", s.s_lo}, {"s_hi", s.s_hi}, {"q_hi", vec(s.q_hi)}, {"p", vec(s.p)}});
    segs.push_back(list);
  }
  j["segments"] = segs;
  json events = json::array();
  for (const PairRecord& r : h.collisions) {
    events.push_back({{"time", r.time},
                      {"i", r.i},
                      {"j", r.j},
                      {"omega", vec(r.omega)},
                      {"at_creation", r.at_creation}});
  }
  j["events"] = events;
  json fin = json::array();
  for (const auto& s : h.final_state) fin.push_back({{"q", vec(s.q)}, {"p", vec(s.p)}});
  j["final_state"] = fin;
  os << j.dump(2) << '\n';
}

}  // namespace hs
