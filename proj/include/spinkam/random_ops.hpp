// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded instance generation for the randomized check suites. All draws go
// through a fixed-width generator with hand-rolled uniform and gaussian
// transforms, so identical seeds give identical instances on every platform
// with the same floating-point arithmetic.

#pragma once

#include <cstdint>
#include <random>

#include "spinkam/local_operator.hpp"

namespace spinkam {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) { return static_cast<int>(eng_() % static_cast<std::uint64_t>(n)); }

  double gaussian() {
    // Box-Muller; cache the second sample.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * uniform();
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  Complex complex_gaussian() {
    const double re = gaussian();
    return Complex(re, gaussian());
  }

  // Derive an independent stream, e.g. per instance of a suite.
  Rng derive(std::uint64_t salt) const {
    std::uint64_t x = seed_mix_ ^ (salt * 0x9e3779b97f4a7c15ull + 0xbf58476d1ce4e5b9ull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return Rng(x);
  }

  static Rng seeded(std::uint64_t seed) {
    Rng r(seed);
    r.seed_mix_ = seed * 0x2545f4914f6cdd1dull + 0x9e3779b97f4a7c15ull;
    return r;
  }

 private:
  std::mt19937_64 eng_;
  std::uint64_t seed_mix_ = 0x9e3779b97f4a7c15ull;
  bool have_spare_ = false;
  double spare_ = 0;
};

inline MatrixXcd random_unitary(int d, Rng& rng) {
  MatrixXcd g(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) g(r, c) = rng.complex_gaussian();
  Eigen::HouseholderQR<MatrixXcd> qr(g);
  MatrixXcd q = qr.householderQ();
  MatrixXcd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i) {
    const Complex rii = r(i, i);
    if (std::abs(rii) > 1e-14) q.col(i) *= rii / std::abs(rii);
  }
  return q;
}

// A gapped single-site term: zero ground eigenvalue, the rest in [g, 2g].
// With random_ground the eigenbasis (and hence the site frame) is nontrivial.
inline SiteSpace random_site(int dim, double g, Rng& rng, bool random_ground = false) {
  VectorXcd evals(dim);
  evals(0) = 0;
  for (int i = 1; i < dim; ++i) evals(i) = rng.uniform(g, 2 * g);
  MatrixXcd basis =
      random_ground ? random_unitary(dim, rng) : MatrixXcd::Identity(dim, dim);
  MatrixXcd h = basis * evals.asDiagonal() * basis.adjoint();
  h = 0.5 * (h + MatrixXcd(h.adjoint()));  // kill roundoff asymmetry
  return SiteSpace::with_ground(h, basis.col(0), g);
}

inline std::shared_ptr<const System> random_system(const Volume& vol, int dim, double g, Rng& rng,
                                                   bool random_ground = false) {
  std::vector<SiteSpace> sites;
  sites.reserve(vol.size());
  for (int x = 0; x < vol.size(); ++x) sites.push_back(random_site(dim, g, rng, random_ground));
  return System::make(vol, std::move(sites));
}

struct RandomOperatorOptions {
  int max_sectors = 5;
  int max_support = 3;
  double block_scale = 1.0;
  bool with_scalar = true;
  // Restrict the admissible roles when drawing sector keys.
  bool allow_plus = true, allow_minus = true, allow_neutral = true;
  bool force_mixed = false;  // reject pure-creation/annihilation keys
};

inline SectorIndex random_sector_key(const System& sys, Rng& rng,
                                     const RandomOperatorOptions& opt) {
  const int n = sys.num_sites();
  for (int attempt = 0; attempt < 256; ++attempt) {
    const int k = 1 + rng.uniform_int(std::min(opt.max_support, n));
    SiteSet support;
    while (static_cast<int>(support.size()) < k) {
      support = set_union(support, SiteSet{rng.uniform_int(n)});
    }
    SectorIndex key;
    for (int x : support) {
      std::vector<Role> roles;
      if (opt.allow_plus) roles.push_back(Role::Plus);
      if (opt.allow_minus) roles.push_back(Role::Minus);
      if (opt.allow_neutral) roles.push_back(Role::Neutral);
      const Role r = roles[rng.uniform_int(static_cast<int>(roles.size()))];
      if (r == Role::Plus) key.plus.push_back(x);
      if (r == Role::Minus) key.minus.push_back(x);
      if (r == Role::Neutral) key.neutral.push_back(x);
    }
    if (opt.force_mixed && (key.minus.empty() && key.neutral.empty())) continue;
    if (opt.force_mixed && (key.plus.empty() && key.neutral.empty())) continue;
    return key;
  }
  throw Error("random_sector_key: could not draw an admissible key");
}

inline LocalOperator random_local_operator(const std::shared_ptr<const System>& sys, Rng& rng,
                                           const RandomOperatorOptions& opt = {}) {
  LocalOperator op(sys);
  if (opt.with_scalar) op.scalar() = opt.block_scale * rng.complex_gaussian();
  const int count = 1 + rng.uniform_int(opt.max_sectors);
  for (int s = 0; s < count; ++s) {
    SectorIndex key = random_sector_key(*sys, rng, opt);
    detail::SectorLayout lay(*sys, key);
    VectorXcd compact(lay.compact_size);
    for (long i = 0; i < lay.compact_size; ++i)
      compact(i) = opt.block_scale * rng.complex_gaussian();
    op.add_block(key, detail::block_from_compact(*sys, key, compact));
  }
  op.prune(sys->drop_threshold());
  return op;
}

// Frustration-free draw: every sector annihilates the ground from both sides.
inline LocalOperator random_frustration_free(const std::shared_ptr<const System>& sys, Rng& rng,
                                             int max_sectors = 4, int max_support = 3) {
  RandomOperatorOptions opt;
  opt.max_sectors = max_sectors;
  opt.max_support = max_support;
  opt.with_scalar = false;
  opt.force_mixed = true;
  LocalOperator op = random_local_operator(sys, rng, opt);
  return classify(op).f;
}

// Pure creation plus pure annihilation sectors; Hermitian on request.
inline LocalOperator random_nondiagonal(const std::shared_ptr<const System>& sys, Rng& rng,
                                        bool hermitian, int max_sectors = 3, int max_support = 2) {
  RandomOperatorOptions opt;
  opt.max_sectors = max_sectors;
  opt.max_support = max_support;
  opt.with_scalar = false;
  opt.allow_neutral = false;
  LocalOperator op = random_local_operator(sys, rng, opt);
  Classified parts = classify(op);
  LocalOperator v = parts.v_plus + parts.v_minus;
  if (hermitian) v = Complex(0.5, 0) * (v + adjoint_op(v));
  return v;
}

// Scales an operator so that the requested norm evaluates to target.
template <typename NormFn>
inline LocalOperator scaled_to(LocalOperator op, NormFn&& norm_of, double target) {
  const double current = norm_of(op);
  if (current <= 0) throw HypothesisViolated("cannot scale a zero operator to a target norm");
  op *= Complex(target / current, 0);
  return op;
}

}  // namespace spinkam
