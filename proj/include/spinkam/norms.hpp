// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Weighted operator norms. The decay rate mu prices each sector by
// exp(mu * w(S)) times the block operator norm; the plain norm takes the
// worst site of the per-site sector sums plus the averaged identity share,
// the primed variant omits the identity share, and the anchored variant
// sums every sector with the weight re-anchored at a chosen site.

#pragma once

#include <cmath>

#include "spinkam/local_operator.hpp"

namespace spinkam {

struct NormSpec {
  double mu = 0;
  bool primed = false;
  int anchor = -1;  // >= 0 selects the anchored norm at that site
};

inline double mu_norm_primed(const LocalOperator& op, double mu) {
  const System& sys = *op.system();
  std::vector<double> site_sum(sys.num_sites(), 0.0);
  for (const auto& [key, blk] : op.sectors()) {
    const SiteSet s = key.support();
    const double term = std::exp(mu * weight(s, sys.volume())) * blk.norm;
    for (int x : s) site_sum[x] += term;
  }
  double best = 0;
  for (double v : site_sum) best = std::max(best, v);
  return best;
}

inline double mu_norm(const LocalOperator& op, double mu) {
  return std::abs(op.scalar()) / op.system()->num_sites() + mu_norm_primed(op, mu);
}

inline double mu_norm_anchored(const LocalOperator& op, double mu, int anchor) {
  const System& sys = *op.system();
  if (!sys.volume().contains_site(anchor))
    throw SupportNotContained("anchor site outside volume");
  double total = std::abs(op.scalar());
  for (const auto& [key, blk] : op.sectors())
    total += std::exp(mu * weight_anchored(key.support(), anchor, sys.volume())) * blk.norm;
  return total;
}

inline double mu_norm(const LocalOperator& op, const NormSpec& spec) {
  if (spec.anchor >= 0) return mu_norm_anchored(op, spec.mu, spec.anchor);
  return spec.primed ? mu_norm_primed(op, spec.mu) : mu_norm(op, spec.mu);
}

}  // namespace spinkam
