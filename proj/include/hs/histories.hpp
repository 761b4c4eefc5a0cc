#pragma once

// Collision histories: the backward evolution of z_n from time t to 0 with a
// particle created at every node time t_k, in contact with its progenitor.
//
// Time s runs over [0, t] in the forward sense. Particle labels are 1-based:
// roots are 1..n and node k creates particle n+k.

#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "hs/dynamics.hpp"
#include "hs/trees.hpp"

namespace hs {

struct NodeVars {
  std::vector<double> times;  // strictly decreasing, inside (0, t)
  std::vector<Vec3> omegas;   // unit vectors
  std::vector<Vec3> momenta;  // created momenta p-hat

  std::size_t size() const { return times.size(); }
};

enum class HistoryStatus {
  Valid,
  OverlapAtCreation,
  WallViolationAtCreation,
  GrazeAtCreation,
  SingularFlow,
  EventCapExceeded,
  BadNodeTimes,
};

std::string_view to_string(HistoryStatus s);

// Rejections caused by the singular set, as opposed to points outside the domain.
bool is_singular(HistoryStatus s);

// Free flight of one particle over [s_lo, s_hi]; q(s) = q_hi - p (s_hi - s).
struct Segment {
  double s_lo = 0.0;
  double s_hi = 0.0;
  Vec3 q_hi;
  Vec3 p;

  Vec3 position(double s) const { return q_hi - p * (s_hi - s); }
};

// Pair collision met by the backward flow. "upper" momenta hold for s just
// above the event, "lower" just below.
struct PairRecord {
  double time = 0.0;
  int i = 0;
  int j = 0;
  Vec3 omega;  // (xi_i - xi_j)/a at contact
  Vec3 upper_i, upper_j;
  Vec3 lower_i, lower_j;
  // Immediate collision of an outgoing creation with its progenitor.
  bool at_creation = false;
};

struct History {
  Tree tree;
  Configuration start;
  double t = 0.0;
  NodeVars nodes;
  HistoryStatus status = HistoryStatus::Valid;
  // Node at which construction stopped, 0 if none or if the flow failed.
  int failed_node = 0;

  std::vector<double> b_factors;
  std::vector<Vec3> progenitor_momenta;  // pi_{j_k}(t_k)
  std::vector<Vec3> progenitor_positions;
  std::vector<std::vector<Segment>> segments;  // per label, increasing s
  std::vector<PairRecord> collisions;          // decreasing time
  Configuration final_state;                   // zeta(0), label order

  int n() const { return tree.n; }
  int m() const { return tree.m(); }
  bool valid() const { return status == HistoryStatus::Valid; }

  // State of a label at time s (s within its lifetime).
  ParticleState state_at(int label, double s) const;
};

History build_history(const Configuration& z_n, double t, const Tree& tree,
                      const NodeVars& nv, const Tolerances& tol, const BoxSpec& box);

// Product of B factors; 1 for m = 0. Requires a Valid history.
double weight(const History& h);

const Configuration& final_configuration(const History& h);

enum class CreationKind { Incoming, Outgoing };

CreationKind classify_creation(const History& h, int k);

struct RecollisionRecord {
  enum class Direction { Forward, Backward };
  int node = 0;
  int partner = 0;  // label
  double time = 0.0;
  Direction direction = Direction::Backward;
  // (x - xi_partner)/a where x is particle n+k (backward) or its ghost (forward).
  Vec3 omega;
  Vec3 position;  // x at contact
  Vec3 momentum;  // of n+k above the contact (backward) or the ghost before it (forward)
  Vec3 partner_momentum;
};

struct RecollisionScan {
  std::optional<RecollisionRecord> record;
  // Contact within eps_time of a creation time.
  bool tie = false;
};

RecollisionScan detect_recollision(const History& h, int k, const BoxSpec& box,
                                   const Tolerances& tol);

// Partner of an R- history (or of an R+ history via the inverse move).
struct Partner {
  History history;
  int slot = 0;  // node index of the moved creation in the partner
  // label_map[x-1] = label in the partner of label x in the source.
  std::vector<int> label_map;
};

Partner cancellation_partner(const History& h, const RecollisionRecord& rec,
                             const BoxSpec& box, const Tolerances& tol);

// Inverse move: turns the R+ record of node k into a creation at s_+.
Partner inverse_partner(const History& h, const RecollisionRecord& rec, const BoxSpec& box,
                        const Tolerances& tol);

void write_history_json(std::ostream& os, const History& h);

}  // namespace hs
