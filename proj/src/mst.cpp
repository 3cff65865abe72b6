#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mesa/basis.hpp"
#include "mesa/error.hpp"

namespace mesa {
namespace {

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n), rank(n, 0) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) {
      return false;
    }
    if (rank[a] < rank[b]) {
      std::swap(a, b);
    }
    parent[b] = a;
    if (rank[a] == rank[b]) {
      ++rank[a];
    }
    return true;
  }

  std::vector<std::size_t> parent;
  std::vector<unsigned char> rank;
};

constexpr std::size_t kLeafSize = 16;
constexpr std::size_t kMixed = std::numeric_limits<std::size_t>::max();

// Static k-d tree over point indices. Each node caches the component id shared
// by all its points (or kMixed) so foreign-neighbour queries can skip whole
// subtrees that lie in the querying point's own component.
class KdTree {
public:
  explicit KdTree(const Coords &pts) : pts_(pts), order_(pts.rows()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * pts.rows() / kLeafSize + 2);
    build(0, order_.size());
  }

  void label(const std::vector<std::size_t> &component) {
    for (std::size_t n = nodes_.size(); n-- > 0;) {
      Node &node = nodes_[n];
      if (node.left == kNone) {
        std::size_t c = component[order_[node.begin]];
        for (std::size_t i = node.begin + 1; i < node.end; ++i) {
          if (component[order_[i]] != c) {
            c = kMixed;
            break;
          }
        }
        node.component = c;
      } else {
        const std::size_t a = nodes_[node.left].component;
        const std::size_t b = nodes_[node.right].component;
        node.component = (a == b) ? a : kMixed;
      }
    }
  }

  // Nearest point whose component differs from `own`. Ties break on the
  // smaller index so Boruvka never closes a cycle.
  void nearest_foreign(std::size_t query, std::size_t own,
                       const std::vector<std::size_t> &component,
                       double &best_d2, std::size_t &best) const {
    search(0, query, own, component, best_d2, best);
  }

private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct Node {
    double lo[2];
    double hi[2];
    std::size_t begin;
    std::size_t end;
    std::size_t left = kNone;
    std::size_t right = kNone;
    std::size_t component = kMixed;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{});
    Node node;
    node.begin = begin;
    node.end = end;
    for (int a = 0; a < 2; ++a) {
      node.lo[a] = std::numeric_limits<double>::infinity();
      node.hi[a] = -std::numeric_limits<double>::infinity();
    }
    for (std::size_t i = begin; i < end; ++i) {
      for (int a = 0; a < 2; ++a) {
        node.lo[a] = std::min(node.lo[a], pts_(order_[i], a));
        node.hi[a] = std::max(node.hi[a], pts_(order_[i], a));
      }
    }
    if (end - begin > kLeafSize) {
      const int axis = (node.hi[0] - node.lo[0] >= node.hi[1] - node.lo[1]) ? 0 : 1;
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid,
                       order_.begin() + end, [&](std::size_t a, std::size_t b) {
                         return pts_(a, axis) < pts_(b, axis);
                       });
      node.left = build(begin, mid);
      node.right = build(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  double box_d2(const Node &node, std::size_t q) const {
    double d2 = 0.0;
    for (int a = 0; a < 2; ++a) {
      const double v = pts_(q, a);
      double gap = 0.0;
      if (v < node.lo[a]) {
        gap = node.lo[a] - v;
      } else if (v > node.hi[a]) {
        gap = v - node.hi[a];
      }
      d2 += gap * gap;
    }
    return d2;
  }

  void search(std::size_t n, std::size_t q, std::size_t own,
              const std::vector<std::size_t> &component, double &best_d2,
              std::size_t &best) const {
    const Node &node = nodes_[n];
    if (node.component == own || box_d2(node, q) > best_d2) {
      return;
    }
    if (node.left == kNone) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t j = order_[i];
        if (component[j] == own) {
          continue;
        }
        const double dx = pts_(q, 0) - pts_(j, 0);
        const double dy = pts_(q, 1) - pts_(j, 1);
        const double d2 = dx * dx + dy * dy;
        if (d2 < best_d2 || (d2 == best_d2 && j < best)) {
          best_d2 = d2;
          best = j;
        }
      }
      return;
    }
    const double dl = box_d2(nodes_[node.left], q);
    const double dr = box_d2(nodes_[node.right], q);
    if (dl <= dr) {
      search(node.left, q, own, component, best_d2, best);
      search(node.right, q, own, component, best_d2, best);
    } else {
      search(node.right, q, own, component, best_d2, best);
      search(node.left, q, own, component, best_d2, best);
    }
  }

  const Coords &pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

struct Candidate {
  double d2 = std::numeric_limits<double>::infinity();
  std::size_t a = kMixed;
  std::size_t b = kMixed;

  bool better_than(const Candidate &o) const {
    if (d2 != o.d2) {
      return d2 < o.d2;
    }
    const auto lo = std::min(a, b), hi = std::max(a, b);
    const auto olo = std::min(o.a, o.b), ohi = std::max(o.a, o.b);
    return lo != olo ? lo < olo : hi < ohi;
  }
};

} // namespace

double mst_range(const Coords &points) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  require(n >= 2, ErrorCode::invalid_input,
          "minimum spanning tree needs at least 2 points");
  require(points.allFinite(), ErrorCode::invalid_input,
          "non-finite coordinate in range computation");
  bool distinct = false;
  for (std::size_t i = 1; i < n && !distinct; ++i) {
    distinct = points(i, 0) != points(0, 0) || points(i, 1) != points(0, 1);
  }
  require(distinct, ErrorCode::degenerate_geometry,
          "all points coincide; the kernel range is undefined");

  KdTree tree(points);
  DisjointSets sets(n);
  std::vector<std::size_t> component(n);
  std::size_t components = n;
  double longest_d2 = 0.0;

  while (components > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      component[i] = sets.find(i);
    }
    tree.label(component);
    std::vector<Candidate> cheapest(n);
    for (std::size_t i = 0; i < n; ++i) {
      Candidate c;
      c.a = i;
      tree.nearest_foreign(i, component[i], component, c.d2, c.b);
      Candidate &slot = cheapest[component[i]];
      if (c.b != kMixed && (slot.a == kMixed || c.better_than(slot))) {
        slot = c;
      }
    }
    for (std::size_t c = 0; c < n; ++c) {
      const Candidate &edge = cheapest[c];
      if (edge.a == kMixed) {
        continue;
      }
      if (sets.unite(edge.a, edge.b)) {
        longest_d2 = std::max(longest_d2, edge.d2);
        --components;
      }
    }
  }
  return std::sqrt(longest_d2);
}

} // namespace mesa
