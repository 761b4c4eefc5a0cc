#include "hs/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "hs/errors.hpp"

namespace hs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec3 face_normal(int face) {
  Vec3 n;
  n[face / 2] = (face % 2 == 0) ? 1.0 : -1.0;
  return n;
}

// Time until spheres i and j touch while approaching, or +inf.
double pair_contact_time(const ParticleState& a, const ParticleState& b, double diameter) {
  const Vec3 dq = a.q - b.q;
  const Vec3 dv = a.p - b.p;
  const double approach = dot(dq, dv);
  if (approach >= 0.0) return kInf;
  const double c = norm2(dq) - diameter * diameter;
  const double v2 = norm2(dv);
  const double disc = approach * approach - v2 * c;
  if (disc < 0.0) return kInf;
  // Smaller root in the cancellation-free form; c <= 0 means already touching.
  const double t = c / (-approach + std::sqrt(disc));
  return std::max(t, 0.0);
}

double wall_contact_time(const BoxSpec& box, const ParticleState& s, int face) {
  const int axis = face / 2;
  const double v = s.p[axis];
  if (face % 2 == 0) {
    if (v >= 0.0) return kInf;
    return std::max((s.q[axis] - box.lower(axis)) / -v, 0.0);
  }
  if (v <= 0.0) return kInf;
  return std::max((box.upper(axis) - s.q[axis]) / v, 0.0);
}

struct Candidate {
  double time = kInf;
  EventKind kind = EventKind::None;
  int i = -1;
  int j = -1;
  int face = -1;
};

struct Detection {
  Candidate first;
  double second_time = kInf;
};

Detection scan(const BoxSpec& box, const Configuration& c) {
  Detection d;
  auto offer = [&](const Candidate& cand) {
    if (cand.time < d.first.time) {
      d.second_time = d.first.time;
      d.first = cand;
    } else if (cand.time < d.second_time) {
      d.second_time = cand.time;
    }
  };
  const int n = static_cast<int>(c.size());
  for (int i = 0; i < n; ++i) {
    for (int f = 0; f < 6; ++f) {
      const double t = wall_contact_time(box, c[i], f);
      if (t < kInf) offer({t, EventKind::WallCollision, i, -1, f});
    }
    for (int j = i + 1; j < n; ++j) {
      const double t = pair_contact_time(c[i], c[j], box.diameter);
      if (t < kInf) offer({t, EventKind::PairCollision, i, j, -1});
    }
  }
  return d;
}

void stream(Configuration& c, double dt) {
  for (auto& s : c) s.q += s.p * dt;
}

// Validates the chosen candidate and applies its collision rule in place.
Singularity resolve(Configuration& c, const Candidate& cand, const Tolerances& tol, Event& ev) {
  ev.kind = cand.kind;
  ev.i = cand.i;
  ev.j = cand.j;
  ev.face = cand.face;
  if (cand.kind == EventKind::PairCollision) {
    ParticleState& a = c[cand.i];
    ParticleState& b = c[cand.j];
    const Vec3 dq = a.q - b.q;
    const Vec3 omega = dq * (1.0 / norm(dq));
    const double normal_speed = dot(omega, a.p - b.p);
    if (std::abs(normal_speed) < tol.eps_graze || normal_speed >= 0.0) return Singularity::Graze;
    ev.normal = omega;
    ev.p_in_i = a.p;
    ev.p_in_j = b.p;
    const Vec3 transfer = omega * normal_speed;
    a.p -= transfer;
    b.p += transfer;
    return Singularity::None;
  }
  ParticleState& s = c[cand.i];
  const Vec3 n = face_normal(cand.face);
  const double vn = dot(n, s.p);
  if (std::abs(vn) < tol.eps_graze * norm(s.p)) return Singularity::Graze;
  ev.normal = n;
  ev.p_in_i = s.p;
  s.p -= n * (2.0 * vn);
  return Singularity::None;
}

}  // namespace

void BoxSpec::validate() const {
  if (!(diameter > 0.0) || !std::isfinite(diameter)) throw ConfigError("diameter must be positive");
  for (int d = 0; d < 3; ++d) {
    if (!(lengths[d] > 0.0) || !std::isfinite(lengths[d]))
      throw ConfigError("box lengths must be positive");
    if (!(diameter < lengths[d])) throw ConfigError("diameter must be smaller than every box length");
  }
}

double BoxSpec::accessible_volume() const {
  return (lengths.x - diameter) * (lengths.y - diameter) * (lengths.z - diameter);
}

Tolerances Tolerances::defaults(double duration, double typical_speed) {
  Tolerances tol;
  tol.eps_graze = 1e-9 * typical_speed;
  tol.eps_time = 1e-12 * std::max(duration, 1e-300);
  return tol;
}

void Tolerances::validate() const {
  if (!(eps_graze > 0.0) || !(eps_time > 0.0) || max_events == 0)
    throw ConfigError("tolerances must be strictly positive");
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::PairCollision:
      return "pair";
    case EventKind::WallCollision:
      return "wall";
    case EventKind::None:
      break;
  }
  return "none";
}

std::string_view to_string(Singularity s) {
  switch (s) {
    case Singularity::Graze:
      return "graze";
    case Singularity::NearMultiple:
      return "near_multiple";
    case Singularity::EventCap:
      return "event_cap";
    case Singularity::None:
      break;
  }
  return "none";
}

std::string_view to_string(ContactClass c) {
  switch (c) {
    case ContactClass::Graze:
      return "graze";
    case ContactClass::NearMultiple:
      return "near_multiple";
    case ContactClass::Ok:
      break;
  }
  return "ok";
}

std::pair<Vec3, Vec3> resolve_pair_collision(const Vec3& p_in_i, const Vec3& p_in_j,
                                             const Vec3& omega) {
  const double normal_speed = dot(omega, p_in_i - p_in_j);
  if (!(normal_speed < 0.0)) throw InvalidCollision("pair is not incoming along omega");
  const Vec3 transfer = omega * normal_speed;
  return {p_in_i - transfer, p_in_j + transfer};
}

Vec3 resolve_wall_collision(const Vec3& p_in, const Vec3& n, double eps_graze) {
  const double vn = dot(n, p_in);
  if (std::abs(vn) < eps_graze * norm(p_in)) throw SingularSample("grazing wall collision");
  if (vn > 0.0) throw InvalidCollision("particle is moving away from the wall");
  return p_in - n * (2.0 * vn);
}

Event next_event(const BoxSpec& box, const Configuration& c, double horizon,
                 const Tolerances& tol) {
  const Detection d = scan(box, c);
  Event ev;
  if (d.first.time > horizon) {
    ev.time = horizon;
    return ev;
  }
  if (d.second_time - d.first.time < tol.eps_time)
    throw SingularSample("near-simultaneous contacts");
  Configuration tmp = c;
  stream(tmp, d.first.time);
  ev.time = d.first.time;
  if (resolve(tmp, d.first, tol, ev) != Singularity::None) throw SingularSample("grazing contact");
  return ev;
}

FlowResult advance(const BoxSpec& box, const Configuration& c, double duration,
                   const Tolerances& tol, const EventObserver& observer) {
  FlowResult out;
  out.state = c;
  double now = 0.0;
  double last_event = -kInf;
  while (true) {
    const double remaining = duration - now;
    const Detection d = scan(box, out.state);
    if (d.first.time > remaining) {
      stream(out.state, remaining);
      return out;
    }
    if (d.second_time - d.first.time < tol.eps_time ||
        now + d.first.time - last_event < tol.eps_time) {
      out.singular = Singularity::NearMultiple;
      return out;
    }
    if (out.log.size() >= tol.max_events) {
      out.singular = Singularity::EventCap;
      return out;
    }
    stream(out.state, d.first.time);
    now += d.first.time;
    Event ev;
    ev.time = now;
    const Singularity s = resolve(out.state, d.first, tol, ev);
    if (s != Singularity::None) {
      out.singular = s;
      return out;
    }
    last_event = now;
    out.log.push_back(ev);
    if (observer) observer(ev, out.state);
  }
}

Configuration reversed(Configuration c) {
  for (auto& s : c) s.p = -s.p;
  return c;
}

FlowResult backward(const BoxSpec& box, const Configuration& c, double duration,
                    const Tolerances& tol, const EventObserver& observer) {
  FlowResult out = advance(box, reversed(c), duration, tol, observer);
  out.state = reversed(std::move(out.state));
  return out;
}

bool is_admissible(const BoxSpec& box, std::span<const ParticleState> states, double slack) {
  const double a2 = (box.diameter - slack) * (box.diameter - slack);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& s = states[i];
    for (int d = 0; d < 3; ++d) {
      if (!std::isfinite(s.q[d]) || !std::isfinite(s.p[d])) return false;
      if (s.q[d] < box.lower(d) - slack || s.q[d] > box.upper(d) + slack) return false;
    }
    for (std::size_t j = i + 1; j < states.size(); ++j) {
      if (norm2(s.q - states[j].q) < a2) return false;
    }
  }
  return true;
}

ContactClass classify_singular(const BoxSpec& box, const Configuration& c,
                               const Tolerances& tol, double contact_slack) {
  int contacts = 0;
  bool graze = false;
  const double reach = box.diameter * (1.0 + contact_slack);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int f = 0; f < 6; ++f) {
      const int axis = f / 2;
      const double gap = (f % 2 == 0) ? c[i].q[axis] - box.lower(axis)
                                      : box.upper(axis) - c[i].q[axis];
      if (gap <= contact_slack * box.diameter) {
        ++contacts;
        if (std::abs(c[i].p[axis]) < tol.eps_graze * norm(c[i].p)) graze = true;
      }
    }
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const Vec3 dq = c[i].q - c[j].q;
      const double dist = norm(dq);
      if (dist <= reach) {
        ++contacts;
        if (std::abs(dot(dq, c[i].p - c[j].p)) / dist < tol.eps_graze) graze = true;
      }
    }
  }
  if (graze) return ContactClass::Graze;
  if (contacts >= 2) return ContactClass::NearMultiple;
  return ContactClass::Ok;
}

double kinetic_energy(std::span<const ParticleState> states) {
  double e = 0.0;
  for (const auto& s : states) e += 0.5 * norm2(s.p);
  return e;
}

Vec3 total_momentum(std::span<const ParticleState> states) {
  Vec3 p;
  for (const auto& s : states) p += s.p;
  return p;
}

void write_event_log_csv(std::ostream& os, const EventLog& log) {
  const auto old_precision = os.precision(17);
  os << "time,kind,i,j,wx,wy,wz\n";
  for (const auto& e : log) {
    os << e.time << ',' << to_string(e.kind) << ',' << e.i << ',' << e.j << ',' << e.normal.x
       << ',' << e.normal.y << ',' << e.normal.z << '\n';
  }
  os.precision(old_precision);
}

}  // namespace hs
