#pragma once

// Event-driven hard-sphere flow in an axis-aligned box with specular walls.
//
// Particles have unit mass, so momentum and velocity coincide. A sphere of
// diameter a is admissible when its centre keeps a distance of at least a/2
// from every face and at least a from every other centre. Collisions are
// instantaneous; at an event instant the stored momenta are the outgoing ones.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "hs/vec3.hpp"

namespace hs {

struct BoxSpec {
  Vec3 lengths{1.0, 1.0, 1.0};
  double diameter = 0.1;

  // Throws ConfigError unless 0 < a < min(L).
  void validate() const;

  double volume() const { return lengths.x * lengths.y * lengths.z; }
  // Volume of the region available to sphere centres, prod(L_d - a).
  double accessible_volume() const;
  double lower(int /*axis*/) const { return 0.5 * diameter; }
  double upper(int axis) const { return lengths[axis] - 0.5 * diameter; }
};

struct ParticleState {
  Vec3 q;
  Vec3 p;

  friend bool operator==(const ParticleState&, const ParticleState&) = default;
};

using Configuration = std::vector<ParticleState>;

struct Tolerances {
  // Minimum |relative normal speed| at a contact.
  double eps_graze = 1e-9;
  // Minimum separation between two distinct events.
  double eps_time = 1e-12;
  std::size_t max_events = 10000;

  static Tolerances defaults(double duration, double typical_speed);
  void validate() const;
};

enum class EventKind { None, PairCollision, WallCollision };

std::string_view to_string(EventKind kind);

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::None;
  int i = -1;
  int j = -1;
  // Pair: unit vector (q_i - q_j)/|q_i - q_j| at contact. Wall: inward face normal.
  Vec3 normal;
  // Wall face index 2*axis + (upper face ? 1 : 0); -1 for pairs.
  int face = -1;
  // Momenta just before the event (p_in_j unused for walls).
  Vec3 p_in_i;
  Vec3 p_in_j;
};

using EventLog = std::vector<Event>;

enum class Singularity { None, Graze, NearMultiple, EventCap };

std::string_view to_string(Singularity s);

struct FlowResult {
  Configuration state;
  EventLog log;
  Singularity singular = Singularity::None;

  bool ok() const { return singular == Singularity::None; }
};

// Called after every resolved event with the post-event configuration.
using EventObserver = std::function<void(const Event&, const Configuration&)>;

// Outgoing momenta of an incoming pair, (p_i - p_j).omega < 0 required.
std::pair<Vec3, Vec3> resolve_pair_collision(const Vec3& p_in_i, const Vec3& p_in_j,
                                             const Vec3& omega);

// Specular reflection off a face with inward unit normal n.
Vec3 resolve_wall_collision(const Vec3& p_in, const Vec3& n, double eps_graze = 1e-9);

// Earliest contact within the horizon, or an Event of kind None. Throws
// SingularSample on grazing or near-simultaneous contacts.
Event next_event(const BoxSpec& box, const Configuration& c, double horizon,
                 const Tolerances& tol);

// The flow T_duration. Singular encounters are reported in the result.
FlowResult advance(const BoxSpec& box, const Configuration& c, double duration,
                   const Tolerances& tol, const EventObserver& observer = {});

// The flow T_{-duration}, as momentum reversal around a forward advance.
// Event times in the log are measured backwards from the starting instant and
// event momenta refer to the reversed frame.
FlowResult backward(const BoxSpec& box, const Configuration& c, double duration,
                    const Tolerances& tol, const EventObserver& observer = {});

// Hard-core and wall admissibility; slack relaxes both constraints.
bool is_admissible(const BoxSpec& box, std::span<const ParticleState> states,
                   double slack = 0.0);

enum class ContactClass { Ok, Graze, NearMultiple };

std::string_view to_string(ContactClass c);

// Classifies contacts present in c (pairs at distance a, spheres touching a face).
ContactClass classify_singular(const BoxSpec& box, const Configuration& c,
                               const Tolerances& tol, double contact_slack = 1e-10);

double kinetic_energy(std::span<const ParticleState> states);
Vec3 total_momentum(std::span<const ParticleState> states);
Configuration reversed(Configuration c);

void write_event_log_csv(std::ostream& os, const EventLog& log);

}  // namespace hs
