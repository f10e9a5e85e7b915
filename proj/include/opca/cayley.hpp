#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "opca/group.hpp"

namespace opca {

using VertexId = int;

// Sorted set of vertices.
struct Region {
  std::vector<VertexId> sites;

  Region() = default;
  explicit Region(std::vector<VertexId> s) : sites(std::move(s)) { normalize(); }

  void normalize() {
    std::sort(sites.begin(), sites.end());
    sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
  }
  bool contains(VertexId v) const {
    return std::binary_search(sites.begin(), sites.end(), v);
  }
  bool subset_of(const Region& other) const {
    return std::includes(other.sites.begin(), other.sites.end(), sites.begin(), sites.end());
  }
  Region unite(const Region& other) const {
    Region out;
    std::set_union(sites.begin(), sites.end(), other.sites.begin(), other.sites.end(),
                   std::back_inserter(out.sites));
    return out;
  }
  std::size_t size() const { return sites.size(); }
  bool operator==(const Region&) const = default;
};

// Colored directed Cayley graph of a presentation; vertices are all elements
// of a finite model or a metric ball of an infinite one.
class CayleyGraph {
 public:
  struct Edge {
    VertexId source;
    VertexId target;
    int color;  // generator index in declaration order
  };

  static CayleyGraph build(const Presentation& p,
                           std::optional<int> window_radius = std::nullopt) {
    p.validate();
    CayleyGraph g;
    g.presentation_ = p;
    g.window_radius_ = window_radius;
    if (p.model.is_finite()) {
      for (const Element& e : p.model.enumerate()) {
        g.index_[e] = static_cast<VertexId>(g.vertices_.size());
        g.vertices_.push_back(e);
      }
      g.interior_.assign(g.vertices_.size(), true);
    } else {
      if (!window_radius)
        throw Error("window radius required for an infinite group model");
      // metric ball around the identity, breadth first, generator order fixed
      std::deque<std::pair<Element, int>> queue;
      const Element id = p.model.identity();
      g.index_[id] = 0;
      g.vertices_.push_back(id);
      std::vector<int> depth{0};
      queue.push_back({id, 0});
      while (!queue.empty()) {
        auto [e, d] = queue.front();
        queue.pop_front();
        if (d == *window_radius) continue;
        for (const std::string& label : p.generators) {
          for (int sign : {+1, -1}) {
            Element t = p.model.mul(
                e, sign > 0 ? p.model.generator_map().at(label)
                            : p.model.inverse(p.model.generator_map().at(label)));
            if (!g.index_.count(t)) {
              g.index_[t] = static_cast<VertexId>(g.vertices_.size());
              g.vertices_.push_back(t);
              depth.push_back(d + 1);
              queue.push_back({t, d + 1});
            }
          }
        }
      }
      g.interior_.resize(g.vertices_.size());
      for (std::size_t i = 0; i < g.vertices_.size(); ++i)
        g.interior_[i] = depth[i] < *window_radius;
    }
    for (VertexId v = 0; v < static_cast<VertexId>(g.vertices_.size()); ++v) {
      for (int c = 0; c < static_cast<int>(p.generators.size()); ++c) {
        Element t =
            p.model.mul(g.vertices_[v], p.model.generator_map().at(p.generators[c]));
        if (auto it = g.index_.find(t); it != g.index_.end())
          g.edges_.push_back({v, it->second, c});
      }
    }
    g.build_adjacency();
    return g;
  }

  const Presentation& presentation() const { return presentation_; }
  const std::vector<Element>& vertices() const { return vertices_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::optional<int> window_radius() const { return window_radius_; }
  bool is_windowed() const { return window_radius_.has_value(); }
  bool interior(VertexId v) const { return interior_[v]; }
  int vertex_count() const { return static_cast<int>(vertices_.size()); }

  std::string vertex_name(VertexId v) const {
    return presentation_.model.element_str(vertices_[v]);
  }

  std::optional<VertexId> find(const Element& e) const {
    auto it = index_.find(e);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  VertexId require(const Element& e) const {
    auto v = find(e);
    if (!v)
      throw Error("element " + presentation_.model.element_str(e) +
                  " is outside the vertex set");
    return *v;
  }

  VertexId identity_vertex() const { return require(presentation_.model.identity()); }

  // Minimal number of edges between two vertices, edges traversed in either
  // direction; nullopt when disconnected.
  std::optional<int> graph_distance(VertexId from, VertexId to) const {
    if (from == to) return 0;
    std::vector<int> dist(vertices_.size(), -1);
    dist[from] = 0;
    std::deque<VertexId> q{from};
    while (!q.empty()) {
      VertexId v = q.front();
      q.pop_front();
      for (VertexId w : adjacency_[v]) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          if (w == to) return dist[w];
          q.push_back(w);
        }
      }
    }
    return std::nullopt;
  }

  // Shortest cycle length in the undirected view (1 = self loop, 2 = parallel
  // pair); nullopt for forests.
  std::optional<int> girth() const {
    std::optional<int> best;
    auto consider = [&](int c) {
      if (!best || c < *best) best = c;
    };
    std::map<std::pair<VertexId, VertexId>, int> pair_count;
    for (const Edge& e : edges_) {
      if (e.source == e.target) consider(1);
      auto key = std::minmax(e.source, e.target);
      ++pair_count[{key.first, key.second}];
    }
    for (const auto& [key, count] : pair_count)
      if (key.first != key.second && count > 1) consider(2);
    const int n = vertex_count();
    for (VertexId s = 0; s < n; ++s) {
      std::vector<int> dist(n, -1);
      std::vector<VertexId> parent(n, -1);
      dist[s] = 0;
      std::deque<VertexId> q{s};
      while (!q.empty()) {
        VertexId v = q.front();
        q.pop_front();
        for (VertexId w : simple_adjacency_[v]) {
          if (dist[w] < 0) {
            dist[w] = dist[v] + 1;
            parent[w] = v;
            q.push_back(w);
          } else if (w != parent[v] && v != parent[w]) {
            consider(dist[v] + dist[w] + 1);
          }
        }
      }
    }
    return best;
  }

  // Left translation by a word; errors when any site leaves the vertex set.
  Region translate(const Region& r, const Word& w) const {
    const Element t = presentation_.model.evaluate(w);
    Region out;
    for (VertexId v : r.sites)
      out.sites.push_back(require(presentation_.model.mul(t, vertices_[v])));
    out.normalize();
    return out;
  }

  // The left-translation permutation of all vertices, finite models only.
  std::vector<VertexId> translation_permutation(const Word& w) const {
    if (is_windowed()) throw Error("translations are not defined on a windowed graph");
    const Element t = presentation_.model.evaluate(w);
    std::vector<VertexId> perm(vertices_.size());
    for (VertexId v = 0; v < vertex_count(); ++v)
      perm[v] = require(presentation_.model.mul(t, vertices_[v]));
    return perm;
  }

 private:
  void build_adjacency() {
    adjacency_.assign(vertices_.size(), {});
    for (VertexId v = 0; v < vertex_count(); ++v) {
      // declared generator order, forward target then backward source
      for (int c = 0; c < static_cast<int>(presentation_.generators.size()); ++c) {
        for (const Edge& e : edges_) {
          if (e.color != c) continue;
          if (e.source == v) adjacency_[v].push_back(e.target);
        }
        for (const Edge& e : edges_) {
          if (e.color != c) continue;
          if (e.target == v) adjacency_[v].push_back(e.source);
        }
      }
    }
    simple_adjacency_.assign(vertices_.size(), {});
    for (VertexId v = 0; v < vertex_count(); ++v) {
      std::set<VertexId> seen;
      for (VertexId w : adjacency_[v])
        if (w != v && seen.insert(w).second) simple_adjacency_[v].push_back(w);
    }
  }

  Presentation presentation_;
  std::vector<Element> vertices_;
  std::map<Element, VertexId> index_;
  std::vector<bool> interior_;
  std::vector<Edge> edges_;
  std::vector<std::vector<VertexId>> adjacency_;
  std::vector<std::vector<VertexId>> simple_adjacency_;
  std::optional<int> window_radius_;
};

// Forward neighborhood offsets; the identity offset is allowed.
class NeighborhoodScheme {
 public:
  NeighborhoodScheme(const CayleyGraph& graph, std::vector<Word> plus_offsets)
      : graph_(&graph), plus_offsets_(std::move(plus_offsets)) {
    if (plus_offsets_.empty()) throw Error("a neighborhood scheme needs at least one offset");
  }

  const CayleyGraph& graph() const { return *graph_; }
  const std::vector<Word>& plus_offsets() const { return plus_offsets_; }

  int max_offset_length() const {
    std::size_t m = 0;
    for (const Word& w : plus_offsets_) m = std::max(m, w.size());
    return static_cast<int>(m);
  }

  enum class Direction { plus, minus };

  // N+_R as the exact union of per-site images; N-_f = {h | f in N+_h}.
  // On windowed graphs any result site outside the interior is an error.
  Region neighborhood(const Region& r, Direction dir) const {
    const auto& model = graph_->presentation().model;
    Region out;
    for (VertexId v : r.sites) {
      for (const Word& o : plus_offsets_) {
        const Element offset =
            dir == Direction::plus ? model.evaluate(o) : model.evaluate(o.inverse());
        const Element t = model.mul(graph_->vertices()[v], offset);
        auto id = graph_->find(t);
        if (!id)
          throw Error("neighborhood clipped: site " + model.element_str(t) +
                      " falls outside the window");
        if (graph_->is_windowed() && !graph_->interior(*id))
          throw Error("neighborhood clipped: site " + model.element_str(t) +
                      " touches the window boundary");
        out.sites.push_back(*id);
      }
    }
    out.normalize();
    return out;
  }

  Region n_plus(const Region& r) const { return neighborhood(r, Direction::plus); }
  Region n_minus(const Region& r) const { return neighborhood(r, Direction::minus); }
  // "perspective present" compositions
  Region p_plus(const Region& r) const { return n_minus(n_plus(r)); }
  Region p_minus(const Region& r) const { return n_plus(n_minus(r)); }

 private:
  const CayleyGraph* graph_;
  std::vector<Word> plus_offsets_;
};

}  // namespace opca
