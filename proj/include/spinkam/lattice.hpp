// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite rectangular volumes of Z^nu with open boundaries, and the
// combinatorial weights attached to site sets: w(S) = |S| + |S|_c where
// |S|_c is the size of the smallest connected subset of Z^nu containing S.
// |S|_c is computed by Dreyfus-Wagner dynamic programming on the bounding
// box of S (which always contains a minimal Steiner tree on a grid).

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "spinkam/errors.hpp"

namespace spinkam {

// Sorted set of site indices into a Volume.
using SiteSet = std::vector<int>;

inline SiteSet make_site_set(std::vector<int> sites) {
  std::sort(sites.begin(), sites.end());
  sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
  return sites;
}

inline SiteSet set_union(const SiteSet& a, const SiteSet& b) {
  SiteSet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline bool sets_disjoint(const SiteSet& a, const SiteSet& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia == *ib) return false;
    (*ia < *ib) ? ++ia : ++ib;
  }
  return true;
}

inline bool set_contains(const SiteSet& outer, const SiteSet& inner) {
  return std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
}

inline bool set_contains(const SiteSet& s, int x) {
  return std::binary_search(s.begin(), s.end(), x);
}

namespace detail {

struct SiteSetHash {
  std::size_t operator()(const SiteSet& s) const {
    std::size_t h = 1469598103934665603ull;
    for (int v : s) {
      h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ull;
      h *= 1099511628211ull;
    }
    return h;
  }
};

struct WeightCache {
  std::mutex mutex;
  std::unordered_map<SiteSet, int, SiteSetHash> closure_size;
};

}  // namespace detail

class Volume {
 public:
  Volume() = default;
  explicit Volume(std::vector<int> extents, int steiner_limit = 10)
      : extents_(std::move(extents)),
        steiner_limit_(steiner_limit),
        cache_(std::make_shared<detail::WeightCache>()) {
    if (extents_.empty()) throw SchemaError("volume.extents", "must be non-empty");
    for (int e : extents_)
      if (e <= 0) throw SchemaError("volume.extents", "entries must be positive");
  }

  int dimension() const { return static_cast<int>(extents_.size()); }
  const std::vector<int>& extents() const { return extents_; }
  int steiner_limit() const { return steiner_limit_; }

  int size() const {
    return std::accumulate(extents_.begin(), extents_.end(), 1, std::multiplies<int>());
  }

  // Row-major site indexing, axis 0 slowest.
  std::vector<int> coords(int site) const {
    std::vector<int> c(extents_.size());
    for (int d = dimension() - 1; d >= 0; --d) {
      c[d] = site % extents_[d];
      site /= extents_[d];
    }
    return c;
  }

  int site_at(const std::vector<int>& c) const {
    int site = 0;
    for (int d = 0; d < dimension(); ++d) site = site * extents_[d] + c[d];
    return site;
  }

  bool contains_site(int site) const { return site >= 0 && site < size(); }

  detail::WeightCache& cache() const { return *cache_; }

  bool operator==(const Volume& o) const {
    return extents_ == o.extents_ && steiner_limit_ == o.steiner_limit_;
  }

 private:
  std::vector<int> extents_;
  int steiner_limit_ = 10;
  std::shared_ptr<detail::WeightCache> cache_;
};

// Graph (= Manhattan) distance between two sites of the ambient lattice.
inline int site_distance(int a, int b, const Volume& vol) {
  auto ca = vol.coords(a), cb = vol.coords(b);
  int d = 0;
  for (int i = 0; i < vol.dimension(); ++i) d += std::abs(ca[i] - cb[i]);
  return d;
}

inline int distance_to_set(int x, const SiteSet& s, const Volume& vol) {
  int best = std::numeric_limits<int>::max();
  for (int y : s) best = std::min(best, site_distance(x, y, vol));
  return best;
}

namespace detail {

// Dreyfus-Wagner over the bounding box of the terminals. Returns the minimal
// number of edges of a tree in Z^nu spanning the terminals.
inline int steiner_tree_edges(const SiteSet& s, const Volume& vol) {
  const int nu = vol.dimension();
  const int k = static_cast<int>(s.size());

  std::vector<std::vector<int>> terms(k);
  std::vector<int> lo(nu, std::numeric_limits<int>::max()), hi(nu, std::numeric_limits<int>::min());
  for (int i = 0; i < k; ++i) {
    terms[i] = vol.coords(s[i]);
    for (int d = 0; d < nu; ++d) {
      lo[d] = std::min(lo[d], terms[i][d]);
      hi[d] = std::max(hi[d], terms[i][d]);
    }
  }

  std::vector<int> box(nu);
  int n_box = 1;
  for (int d = 0; d < nu; ++d) {
    box[d] = hi[d] - lo[d] + 1;
    n_box *= box[d];
  }

  auto box_index = [&](const std::vector<int>& c) {
    int idx = 0;
    for (int d = 0; d < nu; ++d) idx = idx * box[d] + (c[d] - lo[d]);
    return idx;
  };
  auto box_coords = [&](int idx) {
    std::vector<int> c(nu);
    for (int d = nu - 1; d >= 0; --d) {
      c[d] = idx % box[d] + lo[d];
      idx /= box[d];
    }
    return c;
  };

  std::vector<std::vector<int>> node_coords(n_box);
  for (int v = 0; v < n_box; ++v) node_coords[v] = box_coords(v);

  // Graph distance inside a full box equals Manhattan distance.
  auto dist = [&](int u, int v) {
    int d = 0;
    for (int i = 0; i < nu; ++i) d += std::abs(node_coords[u][i] - node_coords[v][i]);
    return d;
  };

  std::vector<int> term_node(k);
  for (int i = 0; i < k; ++i) term_node[i] = box_index(terms[i]);

  const int INF = std::numeric_limits<int>::max() / 4;
  const int full = (1 << k) - 1;
  std::vector<std::vector<int>> dp(full + 1, std::vector<int>(n_box, INF));

  for (int i = 0; i < k; ++i)
    for (int v = 0; v < n_box; ++v) dp[1 << i][v] = dist(term_node[i], v);

  for (int mask = 1; mask <= full; ++mask) {
    if ((mask & (mask - 1)) == 0) continue;  // single terminal handled above
    auto& row = dp[mask];
    int low = mask & (-mask);
    for (int sub = (mask - 1) & mask; sub > 0; sub = (sub - 1) & mask) {
      if (!(sub & low)) continue;  // enumerate each split once
      const auto& a = dp[sub];
      const auto& b = dp[mask ^ sub];
      for (int v = 0; v < n_box; ++v) row[v] = std::min(row[v], a[v] + b[v]);
    }
    // Metric closure: one relaxation through shortest paths suffices.
    std::vector<int> merged = row;
    for (int u = 0; u < n_box; ++u) {
      if (merged[u] >= INF) continue;
      for (int v = 0; v < n_box; ++v) row[v] = std::min(row[v], merged[u] + dist(u, v));
    }
  }

  return *std::min_element(dp[full].begin(), dp[full].end());
}

}  // namespace detail

// |S|_c: size of the smallest connected subset of Z^nu containing S.
inline int connected_closure_size(const SiteSet& s, const Volume& vol) {
  if (s.empty()) return 0;
  for (int x : s)
    if (!vol.contains_site(x)) throw SupportNotContained("site index outside volume");
  if (static_cast<int>(s.size()) > vol.steiner_limit())
    throw SteinerLimitExceeded("site set larger than the configured Steiner limit");
  if (s.size() == 1) return 1;

  auto& cache = vol.cache();
  {
    std::lock_guard<std::mutex> lock(cache.mutex);
    auto it = cache.closure_size.find(s);
    if (it != cache.closure_size.end()) return it->second;
  }
  int result = detail::steiner_tree_edges(s, vol) + 1;
  {
    std::lock_guard<std::mutex> lock(cache.mutex);
    cache.closure_size.emplace(s, result);
  }
  return result;
}

// w(S) = |S| + |S|_c; the exponential decay rate is paid per unit of w.
inline int weight(const SiteSet& s, const Volume& vol) {
  return static_cast<int>(s.size()) + connected_closure_size(s, vol);
}

// w_x(S) = w(S united with {x}): the anchored weight used for observables.
inline int weight_anchored(const SiteSet& s, int x, const Volume& vol) {
  return weight(set_union(s, SiteSet{x}), vol);
}

}  // namespace spinkam
