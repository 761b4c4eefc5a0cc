#include "hs/trees.hpp"

#include <charconv>
#include <limits>

#include "hs/errors.hpp"

namespace hs {

namespace {

void check_roots(int n) {
  if (n < 1) throw InvalidTree("root count must be at least 1");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

int parse_int(std::string_view s, std::string_view whole) {
  s = trim(s);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw InvalidTree("cannot parse tree '" + std::string(whole) + "'");
  return v;
}

}  // namespace

bool Tree::valid() const {
  if (n < 1) return false;
  for (int k = 1; k <= m(); ++k) {
    const int j = js[k - 1];
    if (j < 1 || j > n + k - 1) return false;
  }
  return true;
}

void Tree::validate() const {
  if (!valid()) throw InvalidTree("invalid tree " + format_tree(*this));
}

std::uint64_t count_trees(int n, int m) {
  check_roots(n);
  if (m < 0) throw InvalidTree("node count must be non-negative");
  std::uint64_t c = 1;
  for (int k = 0; k < m; ++k) {
    const auto f = static_cast<std::uint64_t>(n + k);
    if (c > std::numeric_limits<std::uint64_t>::max() / f)
      throw EnumerationTooLarge("tree count overflows 64 bits");
    c *= f;
  }
  return c;
}

std::vector<Tree> enumerate_trees(int n, int m, std::uint64_t cap) {
  const std::uint64_t total = count_trees(n, m);
  if (total > cap) throw EnumerationTooLarge("tree enumeration exceeds cap");
  std::vector<Tree> out;
  out.reserve(total);
  Tree t{n, std::vector<int>(m, 1)};
  while (true) {
    out.push_back(t);
    // Odometer increment from the last node.
    int k = m;
    while (k >= 1 && t.js[k - 1] == n + k - 1) {
      t.js[k - 1] = 1;
      --k;
    }
    if (k == 0) break;
    ++t.js[k - 1];
  }
  return out;
}

int ell(const Tree& t) {
  for (int k = 1; k <= t.m(); ++k)
    if (t.js[k - 1] == t.n) return k;
  return t.m() + 1;
}

Tree discard_trivial(const Tree& t) {
  t.validate();
  if (t.n < 2) throw NotTrivialLine("discard needs at least two root lines");
  if (ell(t) != t.m() + 1) throw NotTrivialLine("line n+1 carries a node");
  const int n = t.n - 1;
  Tree out{n, {}};
  out.js.reserve(t.js.size());
  for (int j : t.js) out.js.push_back(j <= n ? j : j - 1);
  return out;
}

Tree attach(const Tree& t, int k, int i) {
  t.validate();
  if (t.n < 2) throw InvalidAttachment("attach needs at least two root lines");
  const int n = t.n - 1;
  if (k < 1 || k > ell(t)) throw InvalidAttachment("slot k outside 1..ell");
  if (i < 1 || i > n + k - 1) throw InvalidAttachment("line i outside 1..n+k-1");
  auto f = [n, k](int j) {
    if (j <= n || j >= n + k + 1) return j;
    if (j == n + 1) return n + k;
    return j - 1;
  };
  Tree out{n, {}};
  out.js.reserve(t.js.size() + 1);
  for (int r = 1; r < k; ++r) out.js.push_back(f(t.js[r - 1]));
  out.js.push_back(i);
  for (int r = k; r <= t.m(); ++r) out.js.push_back(f(t.js[r - 1]));
  return out;
}

Detached detach(const Tree& t, int k) {
  t.validate();
  if (k < 1 || k > t.m()) throw InvalidAttachment("node k outside 1..m");
  const int n = t.n;
  auto g = [n, k](int j) {
    if (j <= n || j >= n + k + 1) return j;
    if (j == n + k) return n + 1;
    return j + 1;
  };
  Detached d{{n + 1, {}}, t.js[k - 1]};
  for (int r = 1; r <= t.m(); ++r)
    if (r != k) d.source.js.push_back(g(t.js[r - 1]));
  return d;
}

CopyCount produced_copies(const Tree& target, int N) {
  target.validate();
  const int n = target.n;
  const int m = target.m();
  if (n + m > N) throw InvalidTree("target needs n+m <= N");
  CopyCount out;
  for (const Tree& src : enumerate_trees(n + 1, m)) {
    if (ell(src) == m + 1 && discard_trivial(src) == target) {
      const std::int64_t w = N - n - m;
      out.copies += w;
      out.sources.push_back({Provenance::Rule::Discard, src, 0, 0, w});
    }
  }
  if (m >= 1) {
    for (const Tree& src : enumerate_trees(n + 1, m - 1)) {
      const int l = ell(src);
      for (int k = 1; k <= l; ++k) {
        for (int i = 1; i <= n + k - 1; ++i) {
          if (attach(src, k, i) == target) {
            out.copies += 1;
            out.sources.push_back({Provenance::Rule::Attach, src, k, i, 1});
          }
        }
      }
    }
  }
  return out;
}

std::string format_tree(const Tree& t) {
  std::string s = std::to_string(t.n) + ":[";
  for (std::size_t r = 0; r < t.js.size(); ++r) {
    if (r) s += ',';
    s += std::to_string(t.js[r]);
  }
  return s + "]";
}

Tree parse_tree(std::string_view text) {
  const std::string_view whole = text;
  text = trim(text);
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw InvalidTree("tree must look like n:[j1,...]");
  Tree t{parse_int(text.substr(0, colon), whole), {}};
  std::string_view body = trim(text.substr(colon + 1));
  if (body.size() < 2 || body.front() != '[' || body.back() != ']')
    throw InvalidTree("tree must look like n:[j1,...]");
  body = trim(body.substr(1, body.size() - 2));
  while (!body.empty()) {
    const auto comma = body.find(',');
    t.js.push_back(parse_int(body.substr(0, comma), whole));
    if (comma == std::string_view::npos) break;
    body.remove_prefix(comma + 1);
  }
  t.validate();
  return t;
}

}  // namespace hs
