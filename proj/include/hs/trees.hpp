#pragma once

// Ordered-node tree graphs T_{n,m} = (n, [j_1..j_m]) with j_k in {1..n+k-1}.
// Node k creates particle n+k from progenitor j_k; labels are 1-based.

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hs {

struct Tree {
  int n = 1;
  std::vector<int> js;

  int m() const { return static_cast<int>(js.size()); }
  bool valid() const;
  // Throws InvalidTree when an index is out of range.
  void validate() const;

  friend bool operator==(const Tree&, const Tree&) = default;
  friend std::strong_ordering operator<=>(const Tree&, const Tree&) = default;
};

inline constexpr std::uint64_t kDefaultTreeCap = 1'000'000;

// Rising factorial n(n+1)...(n+m-1). Throws EnumerationTooLarge on overflow.
std::uint64_t count_trees(int n, int m);

// Lexicographic order. Throws EnumerationTooLarge above cap.
std::vector<Tree> enumerate_trees(int n, int m, std::uint64_t cap = kDefaultTreeCap);

// For a tree with root count n+1: first k with j_k = n+1, else m+1.
int ell(const Tree& t);

// Root count n+1 -> n, requires ell(t) = m+1. Throws NotTrivialLine.
Tree discard_trivial(const Tree& t);

// Root count n+1 -> n with a new node at slot k on line i. Throws InvalidAttachment.
Tree attach(const Tree& t, int k, int i);

// Inverse of attach: removes node k of a tree with root count n and returns
// the source tree (root count n+1) together with the removed label i.
struct Detached {
  Tree source;
  int i = 0;
};
Detached detach(const Tree& t, int k);

struct Provenance {
  enum class Rule { Discard, Attach };
  Rule rule = Rule::Discard;
  Tree source;
  int k = 0;
  int i = 0;
  // Multiplicity contributed: N-n-m for a discard, 1 for an attachment.
  std::int64_t weight = 0;
};

struct CopyCount {
  std::int64_t copies = 0;
  std::vector<Provenance> sources;
};

// All rewrites of (n+1)-root trees yielding target, weighted as in the
// integration step. Requires n+m <= N.
CopyCount produced_copies(const Tree& target, int N);

// "n:[j1,j2,...]"
std::string format_tree(const Tree& t);
Tree parse_tree(std::string_view text);

}  // namespace hs
