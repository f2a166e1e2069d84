// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sector-indexed local operators. An operator on the volume is stored as a
// scalar multiple of the identity plus blocks indexed by disjoint site sets
// (S_plus, S_minus, S_neutral): sites in S_plus carry pure excitations,
// sites in S_minus pure de-excitations, sites in S_neutral excited-excited
// transitions with the ground expectation removed. The decomposition is
// unique and multiplicative structure is recovered by embedding onto the
// union support, multiplying densely, and re-decomposing.
//
// Blocks are stored on their exact support in the per-site adapted frames
// (ground vector = first basis vector), so the sector constraint is a zero
// pattern on coordinates.

#pragma once

#include <complex>
#include <map>
#include <memory>
#include <vector>

#include "spinkam/site_space.hpp"

namespace spinkam {

struct SectorIndex {
  SiteSet plus, minus, neutral;

  SiteSet support() const { return set_union(set_union(plus, minus), neutral); }

  bool valid() const {
    return sets_disjoint(plus, minus) && sets_disjoint(plus, neutral) &&
           sets_disjoint(minus, neutral) && !(plus.empty() && minus.empty() && neutral.empty());
  }

  friend bool operator<(const SectorIndex& a, const SectorIndex& b) {
    if (a.plus != b.plus) return a.plus < b.plus;
    if (a.minus != b.minus) return a.minus < b.minus;
    return a.neutral < b.neutral;
  }
  friend bool operator==(const SectorIndex& a, const SectorIndex& b) {
    return a.plus == b.plus && a.minus == b.minus && a.neutral == b.neutral;
  }
};

struct SectorBlock {
  MatrixXcd mat;   // dense on the exact support, adapted frames
  double norm = 0; // largest singular value, kept current
};

enum class BlockBasis { Computational, Adapted };

namespace detail {

// Role of each support site under a sector key.
inline Role role_at(const SectorIndex& key, int x) {
  if (set_contains(key.plus, x)) return Role::Plus;
  if (set_contains(key.minus, x)) return Role::Minus;
  if (set_contains(key.neutral, x)) return Role::Neutral;
  return Role::Identity;
}

}  // namespace detail

class LocalOperator {
 public:
  LocalOperator() = default;
  explicit LocalOperator(std::shared_ptr<const System> sys) : system_(std::move(sys)) {}

  static LocalOperator zero(std::shared_ptr<const System> sys) { return LocalOperator(std::move(sys)); }
  static LocalOperator scalar_multiple(std::shared_ptr<const System> sys, Complex c) {
    LocalOperator op(std::move(sys));
    op.scalar_ = c;
    return op;
  }

  const std::shared_ptr<const System>& system() const { return system_; }
  Complex scalar() const { return scalar_; }
  Complex& scalar() { return scalar_; }
  const std::map<SectorIndex, SectorBlock>& sectors() const { return sectors_; }
  std::map<SectorIndex, SectorBlock>& sectors() { return sectors_; }
  double dropped_norm() const { return dropped_; }
  void add_dropped(double d) { dropped_ += d; }

  bool is_zero() const { return sectors_.empty() && scalar_ == Complex(0, 0); }

  // Exact block accumulation; the sector norm is refreshed.
  void add_block(const SectorIndex& key, const MatrixXcd& mat);

  // Remove blocks whose norm fell below the threshold, tracking the budget.
  void prune(double drop_threshold) {
    for (auto it = sectors_.begin(); it != sectors_.end();) {
      if (it->second.norm < drop_threshold) {
        dropped_ += it->second.norm;
        it = sectors_.erase(it);
      } else {
        ++it;
      }
    }
  }

  LocalOperator& operator*=(Complex c) {
    scalar_ *= c;
    for (auto& [key, blk] : sectors_) {
      blk.mat *= c;
      blk.norm *= std::abs(c);
    }
    return *this;
  }

 private:
  std::shared_ptr<const System> system_;
  Complex scalar_{0, 0};
  std::map<SectorIndex, SectorBlock> sectors_;
  double dropped_ = 0;
};

// ============================================================================
// Support and index arithmetic
// ============================================================================

namespace detail {

inline std::vector<int> support_dims(const System& sys, const SiteSet& support) {
  std::vector<int> dims(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) dims[i] = sys.site(support[i]).dim();
  return dims;
}

// Row-major strides for the given radices, innermost last.
inline std::vector<long> strides_for(const std::vector<int>& radices) {
  std::vector<long> s(radices.size());
  long acc = 1;
  for (int i = static_cast<int>(radices.size()) - 1; i >= 0; --i) {
    s[i] = acc;
    acc *= radices[i];
  }
  return s;
}

inline long product(const std::vector<int>& v) {
  long p = 1;
  for (int x : v) p *= x;
  return p;
}

// Per-sector compact layout: one radix per support site, equal to the family
// size of its role. The matricization separates row contributors (plus and
// neutral-row) from column contributors (minus and neutral-col).
struct SectorLayout {
  SiteSet support;
  std::vector<Role> roles;
  std::vector<int> fam_sizes;
  std::vector<long> fam_strides;
  long compact_size = 1;
  long rows = 1, cols = 1;  // matricization shape

  SectorLayout(const System& sys, const SectorIndex& key) : support(key.support()) {
    roles.resize(support.size());
    fam_sizes.resize(support.size());
    for (std::size_t i = 0; i < support.size(); ++i) {
      const SiteSpace& s = sys.site(support[i]);
      roles[i] = role_at(key, support[i]);
      fam_sizes[i] = s.family_size(roles[i]);
      const int e = s.dim() - 1;
      if (roles[i] == Role::Plus) rows *= e;
      if (roles[i] == Role::Minus) cols *= e;
      if (roles[i] == Role::Neutral) {
        rows *= e;
        cols *= e;
      }
    }
    fam_strides = strides_for(fam_sizes);
    compact_size = product(fam_sizes);
  }

  // Decode a compact index into the dense (row, col) of the support block and
  // the (row, col) of the matricization.
  void decode(const System& sys, long cidx, const std::vector<long>& dense_strides,
              long& dense_r, long& dense_c, long& mat_r, long& mat_c) const {
    dense_r = dense_c = 0;
    mat_r = mat_c = 0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      const int fi = static_cast<int>((cidx / fam_strides[i]) % fam_sizes[i]);
      const SiteSpace& s = sys.site(support[i]);
      const int e = s.dim() - 1;
      dense_r += s.basis_row(roles[i], fi) * dense_strides[i];
      dense_c += s.basis_col(roles[i], fi) * dense_strides[i];
      switch (roles[i]) {
        case Role::Plus: mat_r = mat_r * e + fi; break;
        case Role::Minus: mat_c = mat_c * e + fi; break;
        case Role::Neutral:
          mat_r = mat_r * e + fi / e;
          mat_c = mat_c * e + fi % e;
          break;
        case Role::Identity: break;
      }
    }
  }
};

inline double compact_norm(const System& sys, const SectorIndex& key, const VectorXcd& compact) {
  SectorLayout lay(sys, key);
  if (lay.compact_size == 1) return std::abs(compact(0));
  MatrixXcd m = MatrixXcd::Zero(lay.rows, lay.cols);
  auto dense_strides = strides_for(support_dims(sys, lay.support));
  long dr, dc, mr, mc;
  for (long c = 0; c < lay.compact_size; ++c) {
    lay.decode(sys, c, dense_strides, dr, dc, mr, mc);
    m(mr, mc) = compact(c);
  }
  return operator_norm(m);
}

inline MatrixXcd block_from_compact(const System& sys, const SectorIndex& key,
                                    const VectorXcd& compact) {
  SectorLayout lay(sys, key);
  const int n = sys.dense_dim(lay.support);
  MatrixXcd block = MatrixXcd::Zero(n, n);
  auto dense_strides = strides_for(support_dims(sys, lay.support));
  long dr, dc, mr, mc;
  for (long c = 0; c < lay.compact_size; ++c) {
    lay.decode(sys, c, dense_strides, dr, dc, mr, mc);
    block(dr, dc) = compact(c);
  }
  return block;
}

inline VectorXcd compact_from_block(const System& sys, const SectorIndex& key,
                                    const MatrixXcd& block) {
  SectorLayout lay(sys, key);
  VectorXcd compact(lay.compact_size);
  auto dense_strides = strides_for(support_dims(sys, lay.support));
  long dr, dc, mr, mc;
  for (long c = 0; c < lay.compact_size; ++c) {
    lay.decode(sys, c, dense_strides, dr, dc, mr, mc);
    compact(c) = block(dr, dc);
  }
  return compact;
}

inline double sector_block_norm(const System& sys, const SectorIndex& key, const MatrixXcd& block) {
  return compact_norm(sys, key, compact_from_block(sys, key, block));
}

// target += coeff * block, embedding from `from` into `to` (identity on the
// complement); both matrices in adapted frames.
inline void add_embedded(MatrixXcd& target, const MatrixXcd& block, const SiteSet& from,
                         const SiteSet& to, const System& sys, Complex coeff = Complex(1, 0)) {
  if (!set_contains(to, from)) throw SupportNotContained("block support not inside target support");
  auto to_dims = support_dims(sys, to);
  auto to_strides = strides_for(to_dims);

  // Positions of `from` sites and of the complement inside `to`.
  std::vector<long> from_strides;
  std::vector<int> from_dims;
  std::vector<long> rest_strides;
  std::vector<int> rest_dims;
  std::size_t fi = 0;
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (fi < from.size() && to[i] == from[fi]) {
      from_strides.push_back(to_strides[i]);
      from_dims.push_back(to_dims[i]);
      ++fi;
    } else {
      rest_strides.push_back(to_strides[i]);
      rest_dims.push_back(to_dims[i]);
    }
  }

  const long nb = block.rows();
  const long nrest = product(rest_dims);
  auto block_strides = strides_for(from_dims);

  std::vector<long> block_offset(nb);
  for (long r = 0; r < nb; ++r) {
    long off = 0, t = r;
    for (std::size_t i = 0; i < from_dims.size(); ++i) {
      off += (t / block_strides[i]) * from_strides[i];
      t %= block_strides[i];
    }
    block_offset[r] = off;
  }
  std::vector<long> rest_offset(nrest);
  auto rest_radix_strides = strides_for(rest_dims);
  for (long r = 0; r < nrest; ++r) {
    long off = 0, t = r;
    for (std::size_t i = 0; i < rest_dims.size(); ++i) {
      off += (t / rest_radix_strides[i]) * rest_strides[i];
      t %= rest_radix_strides[i];
    }
    rest_offset[r] = off;
  }

  for (long br = 0; br < nb; ++br)
    for (long bc = 0; bc < nb; ++bc) {
      const Complex v = coeff * block(br, bc);
      if (v == Complex(0, 0)) continue;
      for (long r = 0; r < nrest; ++r)
        target(block_offset[br] + rest_offset[r], block_offset[bc] + rest_offset[r]) += v;
    }
}

}  // namespace detail

inline void LocalOperator::add_block(const SectorIndex& key, const MatrixXcd& mat) {
  auto it = sectors_.find(key);
  if (it == sectors_.end()) {
    SectorBlock blk{mat, detail::sector_block_norm(*system_, key, mat)};
    sectors_.emplace(key, std::move(blk));
  } else {
    it->second.mat += mat;
    it->second.norm = detail::sector_block_norm(*system_, key, it->second.mat);
  }
}

// ============================================================================
// Single-site split
// ============================================================================

struct SiteSplit {
  Complex scalar;     // ground expectation
  MatrixXcd plus;     // annihilates the ground from the left (Pbar M P)
  MatrixXcd minus;    // P M Pbar
  MatrixXcd neutral;  // Pbar M Pbar minus the ground expectation share
};

// Computational-basis split of a single-site matrix; the four parts sum back
// to m exactly.
inline SiteSplit site_split(const MatrixXcd& m, const SiteSpace& site) {
  if (m.rows() != site.dim() || m.cols() != site.dim())
    throw SupportNotContained("site_split: matrix dimension does not match the site");
  const MatrixXcd p = site.ground_projector();
  const MatrixXcd pbar = MatrixXcd::Identity(site.dim(), site.dim()) - p;
  SiteSplit out;
  out.scalar = (site.omega().adjoint() * m * site.omega())(0, 0);
  out.plus = pbar * m * p;
  out.minus = p * m * pbar;
  out.neutral = pbar * m * pbar - out.scalar * pbar;
  return out;
}

// ============================================================================
// Decompose and assemble
// ============================================================================

inline LocalOperator decompose(std::shared_ptr<const System> sys, const MatrixXcd& m,
                               const SiteSet& support,
                               BlockBasis input_basis = BlockBasis::Computational,
                               double drop_threshold = -1.0) {
  const System& S = *sys;
  for (std::size_t i = 0; i + 1 < support.size(); ++i)
    if (support[i] >= support[i + 1]) throw SupportNotContained("support must be sorted and unique");
  for (int x : support)
    if (!S.volume().contains_site(x)) throw SupportNotContained("support site outside volume");

  const double drop = drop_threshold < 0 ? S.drop_threshold() : drop_threshold;
  const int n = static_cast<int>(support.size());
  const long N = S.dense_dim(support);
  if (m.rows() != N || m.cols() != N)
    throw SupportNotContained("decompose: matrix dimension does not match the support");

  LocalOperator out(sys);
  if (n == 0) {
    out.scalar() = m(0, 0);
    return out;
  }

  auto dims = detail::support_dims(S, support);
  std::vector<int> d2(n);
  for (int i = 0; i < n; ++i) d2[i] = dims[i] * dims[i];
  auto strides = detail::strides_for(d2);
  const long total = detail::product(d2);

  // Tensorize: entry (r, c) lands at sum_i (a_i * d_i + b_i) * stride_i.
  std::vector<long> row_part(N), col_part(N);
  auto dense_strides = detail::strides_for(dims);
  for (long r = 0; r < N; ++r) {
    long acc = 0, t = r;
    for (int i = 0; i < n; ++i) {
      acc += (t / dense_strides[i]) * dims[i] * strides[i];
      t %= dense_strides[i];
    }
    row_part[r] = acc;
  }
  for (long c = 0; c < N; ++c) {
    long acc = 0, t = c;
    for (int i = 0; i < n; ++i) {
      acc += (t / dense_strides[i]) * strides[i];
      t %= dense_strides[i];
    }
    col_part[c] = acc;
  }

  VectorXcd tensor(total);
  for (long r = 0; r < N; ++r)
    for (long c = 0; c < N; ++c) tensor(row_part[r] + col_part[c]) = m(r, c);

  // Per-site coefficient extraction.
  for (int p = 0; p < n; ++p) {
    const SiteSpace& site = S.site(support[p]);
    const MatrixXcd& ana = (input_basis == BlockBasis::Computational)
                               ? site.analysis_computational()
                               : site.analysis_adapted();
    const long inner = strides[p];
    const long chunk = inner * d2[p];
    VectorXcd y(d2[p]);
    for (long base = 0; base < total; base += chunk)
      for (long in = 0; in < inner; ++in) {
        for (int g = 0; g < d2[p]; ++g) y(g) = tensor(base + in + g * inner);
        VectorXcd w = ana * y;
        for (int g = 0; g < d2[p]; ++g) tensor(base + in + g * inner) = w(g);
      }
  }

  out.scalar() = tensor(0);

  // Group coefficients by role pattern.
  std::map<SectorIndex, VectorXcd> compact;
  std::vector<int> gamma(n);
  for (long f = 0; f < total; ++f) {
    if (f == 0) continue;
    if (tensor(f) == Complex(0, 0)) continue;
    long t = f;
    for (int i = 0; i < n; ++i) {
      gamma[i] = static_cast<int>(t / strides[i]);
      t %= strides[i];
    }
    SectorIndex key;
    long cidx = 0;
    for (int i = 0; i < n; ++i) {
      const SiteSpace& site = S.site(support[i]);
      const Role role = site.role_of(gamma[i]);
      if (role == Role::Identity) continue;
      if (role == Role::Plus) key.plus.push_back(support[i]);
      if (role == Role::Minus) key.minus.push_back(support[i]);
      if (role == Role::Neutral) key.neutral.push_back(support[i]);
      cidx = cidx * site.family_size(role) + site.family_index(gamma[i]);
    }
    auto [it, fresh] = compact.try_emplace(key);
    if (fresh) it->second = VectorXcd::Zero(detail::SectorLayout(S, key).compact_size);
    it->second(cidx) = tensor(f);
  }

  for (auto& [key, cvec] : compact) {
    const double nrm = detail::compact_norm(S, key, cvec);
    if (nrm < drop) {
      out.add_dropped(nrm);
      continue;
    }
    out.sectors().emplace(key, SectorBlock{detail::block_from_compact(S, key, cvec), nrm});
  }
  return out;
}

inline MatrixXcd assemble(const LocalOperator& op, const SiteSet& support,
                          BlockBasis output_basis = BlockBasis::Computational) {
  const System& S = *op.system();
  const long N = S.dense_dim(support);
  MatrixXcd out = op.scalar() * MatrixXcd::Identity(N, N);
  for (const auto& [key, blk] : op.sectors()) {
    SiteSet sec_support = key.support();
    if (!set_contains(support, sec_support))
      throw SupportNotContained("assemble: sector support not inside the requested support");
    detail::add_embedded(out, blk.mat, sec_support, support, S);
  }
  if (output_basis == BlockBasis::Computational && !S.all_frames_trivial()) {
    MatrixXcd w = MatrixXcd::Identity(1, 1);
    for (int x : support) {
      const MatrixXcd& f = S.site(x).frame();
      MatrixXcd next(w.rows() * f.rows(), w.cols() * f.cols());
      for (int i = 0; i < w.rows(); ++i)
        for (int j = 0; j < w.cols(); ++j)
          next.block(i * f.rows(), j * f.cols(), f.rows(), f.cols()) = w(i, j) * f;
      w = std::move(next);
    }
    out = w * out * w.adjoint();
  }
  return out;
}

inline MatrixXcd assemble(const LocalOperator& op,
                          BlockBasis output_basis = BlockBasis::Computational) {
  return assemble(op, op.system()->all_sites(), output_basis);
}

// Sum of the local terms as a sector operator (one neutral block per site).
inline LocalOperator h0_operator(const std::shared_ptr<const System>& sys) {
  LocalOperator out(sys);
  for (int x = 0; x < sys->num_sites(); ++x) {
    LocalOperator part = decompose(sys, sys->site(x).h_adapted(), SiteSet{x}, BlockBasis::Adapted);
    if (std::abs(part.scalar()) > 1e-12 * std::max(1.0, sys->site(x).h_adapted().norm()))
      throw NotFrustrationFree("local term has a nonzero ground expectation");
    for (const auto& [key, blk] : part.sectors()) out.add_block(key, blk.mat);
  }
  return out;
}

// ============================================================================
// Algebra
// ============================================================================

inline LocalOperator operator*(Complex c, LocalOperator op) {
  op *= c;
  return op;
}

inline LocalOperator operator+(const LocalOperator& a, const LocalOperator& b) {
  LocalOperator out = a;
  out.scalar() += b.scalar();
  for (const auto& [key, blk] : b.sectors()) out.add_block(key, blk.mat);
  out.add_dropped(b.dropped_norm());
  return out;
}

inline LocalOperator operator-(const LocalOperator& a, const LocalOperator& b) {
  return a + (Complex(-1, 0) * b);
}

inline LocalOperator adjoint_op(const LocalOperator& op) {
  LocalOperator out(op.system());
  out.scalar() = std::conj(op.scalar());
  for (const auto& [key, blk] : op.sectors()) {
    SectorIndex swapped{key.minus, key.plus, key.neutral};
    out.sectors().emplace(swapped, SectorBlock{blk.mat.adjoint(), blk.norm});
  }
  out.add_dropped(op.dropped_norm());
  return out;
}

inline LocalOperator multiply(const LocalOperator& a, const LocalOperator& b,
                              double drop_threshold = -1.0) {
  const auto& sys = a.system();
  const double drop = drop_threshold < 0 ? sys->drop_threshold() : drop_threshold;
  LocalOperator out(sys);
  out.scalar() = a.scalar() * b.scalar();

  if (a.scalar() != Complex(0, 0))
    for (const auto& [key, blk] : b.sectors()) out.add_block(key, a.scalar() * blk.mat);
  if (b.scalar() != Complex(0, 0))
    for (const auto& [key, blk] : a.sectors()) out.add_block(key, b.scalar() * blk.mat);

  for (const auto& [ka, ba] : a.sectors()) {
    const SiteSet sa = ka.support();
    for (const auto& [kb, bb] : b.sectors()) {
      const SiteSet sb = kb.support();
      const SiteSet u = set_union(sa, sb);
      const long nu = sys->dense_dim(u);
      MatrixXcd big_a = MatrixXcd::Zero(nu, nu);
      MatrixXcd big_b = MatrixXcd::Zero(nu, nu);
      detail::add_embedded(big_a, ba.mat, sa, u, *sys);
      detail::add_embedded(big_b, bb.mat, sb, u, *sys);
      LocalOperator dec = decompose(sys, big_a * big_b, u, BlockBasis::Adapted, drop);
      out.scalar() += dec.scalar();
      for (const auto& [key, blk] : dec.sectors()) out.add_block(key, blk.mat);
      out.add_dropped(dec.dropped_norm());
    }
  }
  out.prune(drop);
  return out;
}

inline LocalOperator commutator(const LocalOperator& a, const LocalOperator& b,
                                double drop_threshold = -1.0) {
  const auto& sys = a.system();
  const double drop = drop_threshold < 0 ? sys->drop_threshold() : drop_threshold;
  LocalOperator out(sys);
  for (const auto& [ka, ba] : a.sectors()) {
    const SiteSet sa = ka.support();
    for (const auto& [kb, bb] : b.sectors()) {
      const SiteSet sb = kb.support();
      if (sets_disjoint(sa, sb)) continue;  // tensor factors on disjoint supports commute
      const SiteSet u = set_union(sa, sb);
      const long nu = sys->dense_dim(u);
      MatrixXcd big_a = MatrixXcd::Zero(nu, nu);
      MatrixXcd big_b = MatrixXcd::Zero(nu, nu);
      detail::add_embedded(big_a, ba.mat, sa, u, *sys);
      detail::add_embedded(big_b, bb.mat, sb, u, *sys);
      LocalOperator dec = decompose(sys, big_a * big_b - big_b * big_a, u, BlockBasis::Adapted, drop);
      out.scalar() += dec.scalar();
      for (const auto& [key, blk] : dec.sectors()) out.add_block(key, blk.mat);
      out.add_dropped(dec.dropped_norm());
    }
  }
  out.prune(drop);
  return out;
}

// ============================================================================
// Classification into scalar + frustration-free + non-diagonal parts
// ============================================================================

struct Classified {
  Complex d;              // scalar part
  LocalOperator f;        // frustration-free remainder (annihilates the ground both ways)
  LocalOperator v_plus;   // pure creation sectors
  LocalOperator v_minus;  // pure annihilation sectors
  LocalOperator v() const { return v_plus + v_minus; }
};

inline Classified classify(const LocalOperator& op) {
  Classified out{op.scalar(), LocalOperator(op.system()), LocalOperator(op.system()),
                 LocalOperator(op.system())};
  for (const auto& [key, blk] : op.sectors()) {
    const bool pure_plus = key.minus.empty() && key.neutral.empty();
    const bool pure_minus = key.plus.empty() && key.neutral.empty();
    LocalOperator& dst = pure_plus ? out.v_plus : pure_minus ? out.v_minus : out.f;
    dst.sectors().emplace(key, blk);
  }
  out.f.add_dropped(op.dropped_norm());
  return out;
}

// Debug aid for property tests: the stored zero pattern of every block must
// match its sector key.
inline bool sectors_are_pure(const LocalOperator& op, double tol = 0.0) {
  const System& S = *op.system();
  for (const auto& [key, blk] : op.sectors()) {
    if (!key.valid()) return false;
    detail::SectorLayout lay(S, key);
    auto dims = detail::support_dims(S, lay.support);
    auto strides = detail::strides_for(dims);
    const long n = blk.mat.rows();
    for (long r = 0; r < n; ++r)
      for (long c = 0; c < n; ++c) {
        if (std::abs(blk.mat(r, c)) <= tol) continue;
        for (std::size_t i = 0; i < lay.support.size(); ++i) {
          const int a = static_cast<int>((r / strides[i]) % dims[i]);
          const int b = static_cast<int>((c / strides[i]) % dims[i]);
          switch (lay.roles[i]) {
            case Role::Plus:
              if (a == 0 || b != 0) return false;
              break;
            case Role::Minus:
              if (a != 0 || b == 0) return false;
              break;
            case Role::Neutral:
              if (a == 0 || b == 0) return false;
              break;
            case Role::Identity: return false;
          }
        }
      }
  }
  return true;
}

}  // namespace spinkam
