// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-site Hilbert space data. Each site carries a local term h with a
// simple ground state (h omega = 0, omega^* h = 0) and a spectral gap g.
// The site stores an orthonormal "adapted frame" whose first vector is the
// ground vector; sector blocks are expressed in these frames, which makes
// ground projectors coordinate-aligned at every site.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <complex>
#include <memory>
#include <mutex>
#include <vector>

#include "spinkam/errors.hpp"
#include "spinkam/lattice.hpp"

namespace spinkam {

using Complex = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

inline double operator_norm(const MatrixXcd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  Eigen::JacobiSVD<MatrixXcd> svd(m);
  return svd.singularValues()(0);
}

// Operator basis roles at a single site. A D x D matrix splits uniquely into
// identity, excitation (annihilates the ground on the right but not on the
// left), de-excitation, and the neutral excited-excited remainder.
enum class Role { Identity = 0, Plus = 1, Minus = 2, Neutral = 3 };

class SiteSpace {
 public:
  SiteSpace() = default;

  // Builds from a local term: finds the ground vector as the null vector and
  // takes the gap from the remaining spectrum unless one is declared.
  static SiteSpace from_local_term(const MatrixXcd& h, double declared_gap = -1.0) {
    const int d = static_cast<int>(h.rows());
    if (d < 2 || h.cols() != d) throw SchemaError("site.h", "must be square with dim >= 2");
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    const bool hermitian = (h - h.adjoint()).cwiseAbs().maxCoeff() <= 1e-12 * scale;

    VectorXcd omega;
    std::vector<Complex> rest;
    if (hermitian) {
      Eigen::SelfAdjointEigenSolver<MatrixXcd> es(h);
      int ground = 0;
      for (int i = 1; i < d; ++i)
        if (std::abs(es.eigenvalues()(i)) < std::abs(es.eigenvalues()(ground))) ground = i;
      omega = es.eigenvectors().col(ground);
      for (int i = 0; i < d; ++i)
        if (i != ground) rest.emplace_back(es.eigenvalues()(i), 0.0);
      if (std::abs(es.eigenvalues()(ground)) > 1e-10 * scale)
        throw GapClosed("local term has no zero eigenvalue");
    } else {
      Eigen::ComplexEigenSolver<MatrixXcd> es(h);
      int ground = 0;
      for (int i = 1; i < d; ++i)
        if (std::abs(es.eigenvalues()(i)) < std::abs(es.eigenvalues()(ground))) ground = i;
      omega = es.eigenvectors().col(ground);
      omega.normalize();
      for (int i = 0; i < d; ++i)
        if (i != ground) rest.push_back(es.eigenvalues()(i));
      if (std::abs(es.eigenvalues()(ground)) > 1e-10 * scale)
        throw GapClosed("local term has no zero eigenvalue");
    }

    double min_re = std::numeric_limits<double>::infinity();
    for (Complex lam : rest) {
      if (std::abs(lam) <= 1e-10 * scale) throw GapClosed("zero eigenvalue of local term is not simple");
      min_re = std::min(min_re, lam.real());
    }
    if (!(min_re > 0)) throw GapClosed("nonzero local spectrum must have positive real part");

    double gap = min_re;
    if (declared_gap > 0) {
      if (declared_gap > min_re * (1 + 1e-9) + 1e-12)
        throw GapClosed("declared gap exceeds the spectral gap of the local term");
      gap = declared_gap;
    }
    return SiteSpace(h, omega, gap);
  }

  static SiteSpace with_ground(const MatrixXcd& h, const VectorXcd& omega, double gap) {
    return SiteSpace(h, omega, gap);
  }

  int dim() const { return dim_; }
  const MatrixXcd& h() const { return h_; }
  const VectorXcd& omega() const { return omega_; }
  double gap() const { return gap_; }
  const MatrixXcd& frame() const { return frame_; }
  const MatrixXcd& h_adapted() const { return h_adapted_; }
  bool trivial_frame() const { return trivial_frame_; }

  MatrixXcd ground_projector() const { return omega_ * omega_.adjoint(); }

  // Coefficient extraction maps on the D^2-dimensional operator space,
  // row-major vec convention. Rows follow the role layout below.
  const MatrixXcd& analysis_adapted() const { return analysis_adapted_; }
  const MatrixXcd& analysis_computational() const { return analysis_computational_; }

  // Role layout of the adapted operator basis:
  //   0            identity
  //   1..D-1       plus family  (|e_i><e_0|, i = gamma)
  //   D..2D-2      minus family (|e_0><e_i|, i = gamma-D+1)
  //   2D-1..D^2-1  neutral family (|e_i><e_j|, i,j >= 1)
  int family_size(Role r) const {
    switch (r) {
      case Role::Identity: return 1;
      case Role::Plus:
      case Role::Minus: return dim_ - 1;
      case Role::Neutral: return (dim_ - 1) * (dim_ - 1);
    }
    return 0;
  }

  Role role_of(int gamma) const {
    if (gamma == 0) return Role::Identity;
    if (gamma <= dim_ - 1) return Role::Plus;
    if (gamma <= 2 * dim_ - 2) return Role::Minus;
    return Role::Neutral;
  }

  int family_index(int gamma) const {
    switch (role_of(gamma)) {
      case Role::Identity: return 0;
      case Role::Plus: return gamma - 1;
      case Role::Minus: return gamma - dim_;
      case Role::Neutral: return gamma - (2 * dim_ - 1);
    }
    return 0;
  }

  // Row/column digits (in the adapted frame) of the family basis element.
  int basis_row(Role r, int idx) const {
    switch (r) {
      case Role::Identity: return 0;
      case Role::Plus: return idx + 1;
      case Role::Minus: return 0;
      case Role::Neutral: return idx / (dim_ - 1) + 1;
    }
    return 0;
  }
  int basis_col(Role r, int idx) const {
    switch (r) {
      case Role::Identity: return 0;
      case Role::Plus: return 0;
      case Role::Minus: return idx + 1;
      case Role::Neutral: return idx % (dim_ - 1) + 1;
    }
    return 0;
  }

 private:
  SiteSpace(const MatrixXcd& h, VectorXcd omega, double gap)
      : dim_(static_cast<int>(h.rows())), h_(h), gap_(gap) {
    if (gap_ <= 0) throw GapClosed("site gap must be positive");
    if (omega.size() != dim_) throw SchemaError("site.omega", "dimension mismatch");
    omega.normalize();

    // Deterministic phase: make the first nonzero component real positive.
    for (int i = 0; i < dim_; ++i) {
      if (std::abs(omega(i)) > 1e-14) {
        omega *= std::conj(omega(i)) / std::abs(omega(i));
        break;
      }
    }
    omega_ = omega;

    const double scale = std::max(1.0, h_.cwiseAbs().maxCoeff());
    if ((h_ * omega_).cwiseAbs().maxCoeff() > 1e-9 * scale)
      throw GapClosed("ground vector is not annihilated by the local term");
    if ((omega_.adjoint() * h_).cwiseAbs().maxCoeff() > 1e-9 * scale)
      throw NotFrustrationFree("local term does not annihilate the ground vector from the left");

    // Householder frame with first column equal to the ground vector.
    VectorXcd e0 = VectorXcd::Zero(dim_);
    e0(0) = 1.0;
    VectorXcd u = omega_ - e0;
    if (u.cwiseAbs().maxCoeff() < 1e-14) {
      frame_ = MatrixXcd::Identity(dim_, dim_);
      trivial_frame_ = true;
    } else {
      frame_ = MatrixXcd::Identity(dim_, dim_) - 2.0 * (u * u.adjoint()) / u.squaredNorm();
      frame_.col(0) = omega_;  // exact by construction; re-set to kill roundoff
      trivial_frame_ = false;
    }
    h_adapted_ = frame_.adjoint() * h_ * frame_;

    build_analysis();
  }

  void build_analysis() {
    const int d = dim_;
    MatrixXcd ana = MatrixXcd::Zero(d * d, d * d);
    ana(0, 0) = 1.0;
    for (int i = 1; i < d; ++i) {
      ana(i, i * d + 0) = 1.0;          // plus: coefficient of |e_i><e_0|
      ana(d - 1 + i, 0 * d + i) = 1.0;  // minus
    }
    for (int i = 1; i < d; ++i)
      for (int j = 1; j < d; ++j) {
        int row = 2 * d - 1 + (i - 1) * (d - 1) + (j - 1);
        ana(row, i * d + j) = 1.0;
        if (i == j) ana(row, 0) -= 1.0;  // subtract the identity share
      }
    analysis_adapted_ = ana;

    if (trivial_frame_) {
      analysis_computational_ = ana;
    } else {
      // vec(W^* M W) = rot * vec(M), row-major convention.
      MatrixXcd rot(d * d, d * d);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          for (int a2 = 0; a2 < d; ++a2)
            for (int b2 = 0; b2 < d; ++b2)
              rot(a * d + b, a2 * d + b2) = std::conj(frame_(a2, a)) * frame_(b2, b);
      analysis_computational_ = ana * rot;
    }
  }

  int dim_ = 0;
  MatrixXcd h_;
  VectorXcd omega_;
  double gap_ = 0;
  MatrixXcd frame_, h_adapted_;
  bool trivial_frame_ = true;
  MatrixXcd analysis_adapted_, analysis_computational_;
};

// A volume with one SiteSpace per site. Shared immutably by the operators
// living on it; caches the dense adapted-frame sum of local terms.
class System {
 public:
  static std::shared_ptr<const System> make(Volume vol, std::vector<SiteSpace> sites,
                                            double drop_threshold = 1e-14) {
    if (static_cast<int>(sites.size()) != vol.size())
      throw SchemaError("sites", "need exactly one site space per lattice site");
    return std::shared_ptr<const System>(new System(std::move(vol), std::move(sites), drop_threshold));
  }

  // Convenience: identical site space everywhere.
  static std::shared_ptr<const System> uniform(Volume vol, const SiteSpace& site,
                                               double drop_threshold = 1e-14) {
    std::vector<SiteSpace> sites(vol.size(), site);
    return make(std::move(vol), std::move(sites), drop_threshold);
  }

  const Volume& volume() const { return volume_; }
  const SiteSpace& site(int x) const { return sites_.at(x); }
  int num_sites() const { return volume_.size(); }
  double drop_threshold() const { return drop_; }

  double gap() const {
    double g = std::numeric_limits<double>::infinity();
    for (const auto& s : sites_) g = std::min(g, s.gap());
    return g;
  }

  SiteSet all_sites() const {
    SiteSet s(num_sites());
    for (int i = 0; i < num_sites(); ++i) s[i] = i;
    return s;
  }

  int dense_dim(const SiteSet& support) const {
    int d = 1;
    for (int x : support) d *= site(x).dim();
    return d;
  }

  // Sum of local terms as a dense matrix in the adapted product basis.
  const MatrixXcd& h0_dense() const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (!has_h0_) {
      const int n = dense_dim(all_sites());
      h0_cache_ = MatrixXcd::Zero(n, n);
      for (int x = 0; x < num_sites(); ++x) add_single_site(h0_cache_, sites_[x].h_adapted(), x);
      has_h0_ = true;
    }
    return h0_cache_;
  }

  // Tensor product of the site frames: maps adapted coordinates to
  // computational coordinates of the full volume.
  const MatrixXcd& frame_dense() const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (!has_frame_) {
      MatrixXcd f = MatrixXcd::Identity(1, 1);
      for (int x = 0; x < num_sites(); ++x) {
        const MatrixXcd& w = sites_[x].frame();
        MatrixXcd next(f.rows() * w.rows(), f.cols() * w.cols());
        for (int i = 0; i < f.rows(); ++i)
          for (int j = 0; j < f.cols(); ++j)
            next.block(i * w.rows(), j * w.cols(), w.rows(), w.cols()) = f(i, j) * w;
        f = std::move(next);
      }
      frame_cache_ = std::move(f);
      has_frame_ = true;
    }
    return frame_cache_;
  }

  bool all_frames_trivial() const {
    for (const auto& s : sites_)
      if (!s.trivial_frame()) return false;
    return true;
  }

 private:
  System(Volume vol, std::vector<SiteSpace> sites, double drop)
      : volume_(std::move(vol)), sites_(std::move(sites)), drop_(drop) {}

  // target += h_site acting on site x, identity elsewhere (adapted basis).
  void add_single_site(MatrixXcd& target, const MatrixXcd& hs, int x) const {
    int left = 1, right = 1;
    for (int y = 0; y < x; ++y) left *= sites_[y].dim();
    for (int y = x + 1; y < num_sites(); ++y) right *= sites_[y].dim();
    const int d = sites_[x].dim();
    for (int l = 0; l < left; ++l)
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
          if (hs(a, b) == Complex(0, 0)) continue;
          for (int r = 0; r < right; ++r)
            target((l * d + a) * right + r, (l * d + b) * right + r) += hs(a, b);
        }
  }

  Volume volume_;
  std::vector<SiteSpace> sites_;
  double drop_;
  mutable std::mutex cache_mutex_;
  mutable MatrixXcd h0_cache_, frame_cache_;
  mutable bool has_h0_ = false, has_frame_ = false;
};

}  // namespace spinkam
