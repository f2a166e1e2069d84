// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Embeds weakly coupled Markov generators into the flow machinery. Each
// site carries a weighted observable space: classically the functions on D
// spin states under a strictly positive measure nu, quantum mechanically the
// D x D observables under the inner product <A,B> = Tr(rho A*B) of a
// full-rank density matrix. Orthonormalizing with the identity observable as
// the ground vector turns minus the site generator into a gapped local term,
// so the flow applies verbatim. Stationary states, Radon-Nikodym
// derivatives, and observable pushforwards then come out of the dressing
// transformation; dense null-space solves provide the independent oracle.
//
// Coordinate conventions. Classical site coordinates are function values on
// the D states. Quantum site coordinates are column-major vectorized
// observables (entry index = row + col * D). Multi-site tensors are
// site-major with the highest site innermost, matching the Kronecker order
// of the dense assembly elsewhere.

#pragma once

#include <map>

#include "spinkam/flow.hpp"

namespace spinkam {

using Eigen::VectorXcd;

// ============================================================================
// Weighted site spaces and generator builders
// ============================================================================

struct WeightedSiteSpace {
  bool classical = true;
  VectorXcd nu;   // classical: strictly positive weights, sum 1
  MatrixXcd rho;  // quantum: positive definite, trace 1
  MatrixXcd l;    // generator on the site's original coordinates

  int state_dim() const {
    return classical ? static_cast<int>(nu.size()) : static_cast<int>(rho.rows());
  }
  int observable_dim() const {
    const int d = state_dim();
    return classical ? d : d * d;
  }

  static WeightedSiteSpace classical_site(VectorXcd weights, MatrixXcd generator) {
    WeightedSiteSpace w;
    w.classical = true;
    w.nu = std::move(weights);
    w.l = std::move(generator);
    const int d = static_cast<int>(w.nu.size());
    if (d < 2) throw SchemaError("site.nu", "needs at least two states");
    if (w.l.rows() != d || w.l.cols() != d)
      throw SchemaError("site.l", "generator must match the state count");
    double total = 0;
    for (int i = 0; i < d; ++i) {
      if (!(w.nu(i).real() > 0) || std::abs(w.nu(i).imag()) > 1e-14)
        throw SchemaError("site.nu", "weights must be strictly positive reals");
      total += w.nu(i).real();
    }
    if (std::abs(total - 1) > 1e-10) throw SchemaError("site.nu", "weights must sum to 1");
    return w;
  }

  static WeightedSiteSpace quantum_site(MatrixXcd density, MatrixXcd l_super) {
    WeightedSiteSpace w;
    w.classical = false;
    w.rho = std::move(density);
    w.l = std::move(l_super);
    const int d = static_cast<int>(w.rho.rows());
    if (d < 2 || w.rho.cols() != d) throw SchemaError("site.rho", "must be square, dim >= 2");
    if ((w.rho - w.rho.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
      throw SchemaError("site.rho", "must be self-adjoint");
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(w.rho);
    if (es.eigenvalues()(0) <= 0) throw SchemaError("site.rho", "must be positive definite");
    if (std::abs(w.rho.trace().real() - 1) > 1e-10 || std::abs(w.rho.trace().imag()) > 1e-12)
      throw SchemaError("site.rho", "must have unit trace");
    if (w.l.rows() != d * d || w.l.cols() != d * d)
      throw SchemaError("site.l", "superoperator must act on the d^2 vectorized observables");
    return w;
  }
};

// Column-major vectorization: superoperator matrices for common pieces.
inline MatrixXcd left_mult_super(const MatrixXcd& a) {
  const int d = static_cast<int>(a.rows());
  MatrixXcd s = MatrixXcd::Zero(d * d, d * d);
  for (int b = 0; b < d; ++b) s.block(b * d, b * d, d, d) = a;
  return s;
}

inline MatrixXcd right_mult_super(const MatrixXcd& b) {
  const int d = static_cast<int>(b.rows());
  MatrixXcd s = MatrixXcd::Zero(d * d, d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) s.block(j * d, i * d, d, d) = b(i, j) * MatrixXcd::Identity(d, d);
  return s;
}

// Heisenberg-picture pieces, acting on observables; both annihilate the
// identity.
inline MatrixXcd hamiltonian_super(const MatrixXcd& h) {
  return Complex(0, 1) * (left_mult_super(h) - right_mult_super(h));
}

inline MatrixXcd dissipator_super(const MatrixXcd& k) {
  MatrixXcd kk = k.adjoint() * k;
  return left_mult_super(k.adjoint()) * right_mult_super(k) -
         0.5 * (left_mult_super(kk) + right_mult_super(kk));
}

// l(A) = gamma (rho(A) 1 - A): self-adjoint for <.,.>_rho with gap gamma.
inline MatrixXcd depolarizing_super(const MatrixXcd& rho, double gamma) {
  const int d = static_cast<int>(rho.rows());
  VectorXcd id = VectorXcd::Zero(d * d);
  VectorXcd tr = VectorXcd::Zero(d * d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      if (a == b) id(a + b * d) = 1;
      tr(a + b * d) = rho(a, b);  // conj pairing picks up Tr(rho A)
    }
  return gamma * (id * tr.adjoint() - MatrixXcd::Identity(d * d, d * d));
}

// Converts a superoperator on the column-major vectorization of the whole
// support (the form the builders above produce) into the site-major
// tensor-of-vectorizations convention used for multi-site terms.
inline MatrixXcd tensor_super_from_fullvec(const MatrixXcd& s,
                                           const std::vector<int>& state_dims);

// Off-diagonal entries of `rates` are jump rates from the row state to the
// column state; the generator acts on functions, rows summing to zero.
inline MatrixXcd classical_rate_generator(const MatrixXcd& rates) {
  const int d = static_cast<int>(rates.rows());
  if (rates.cols() != d) throw SchemaError("rates", "must be square");
  MatrixXcd l = MatrixXcd::Zero(d, d);
  for (int from = 0; from < d; ++from) {
    Complex out = 0;
    for (int to = 0; to < d; ++to) {
      if (to == from) continue;
      l(from, to) = rates(from, to);
      out += rates(from, to);
    }
    l(from, from) = -out;
  }
  return l;
}

struct MarkovTerm {
  SiteSet support;
  MatrixXcd generator;  // original coordinates of the support, site-major
};

struct MarkovFlowProblem {
  Volume volume;
  std::vector<WeightedSiteSpace> sites;
  std::vector<MarkovTerm> terms;
  FlowConfig flow;
};

// ============================================================================
// Index helpers
// ============================================================================

namespace detail {

inline MatrixXcd kron2(const MatrixXcd& a, const MatrixXcd& b) {
  MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline MatrixXcd kron_all(const std::vector<MatrixXcd>& factors) {
  MatrixXcd out = MatrixXcd::Identity(1, 1);
  for (const MatrixXcd& f : factors) out = kron2(out, f);
  return out;
}

// Unitary with first column equal to the given unit vector.
inline MatrixXcd frame_from_ground(const VectorXcd& g0) {
  const int d = static_cast<int>(g0.size());
  MatrixXcd m = MatrixXcd::Identity(d, d);
  m.col(0) = g0;
  Eigen::HouseholderQR<MatrixXcd> qr(m);
  MatrixXcd q = qr.householderQ();
  Complex r00 = (q.adjoint() * g0)(0);
  q.col(0) *= r00;  // |r00| = 1, so this keeps q unitary and fixes the phase
  return q;
}

inline std::vector<int> tensor_strides(const std::vector<int>& dims) {
  std::vector<int> s(dims.size(), 1);
  for (int i = static_cast<int>(dims.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * dims[i + 1];
  return s;
}

inline std::vector<int> decode_digits(int index, const std::vector<int>& dims) {
  std::vector<int> digits(dims.size());
  for (int i = static_cast<int>(dims.size()) - 1; i >= 0; --i) {
    digits[i] = index % dims[i];
    index /= dims[i];
  }
  return digits;
}

// Embeds a support-local matrix into the full tensor space with identity on
// the remaining sites. Pure index arithmetic, usable as oracle plumbing.
inline MatrixXcd scatter_embed(const MatrixXcd& m, const SiteSet& support,
                               const std::vector<int>& dims) {
  std::vector<int> sup_dims;
  for (int x : support) sup_dims.push_back(dims[x]);
  const auto strides = tensor_strides(dims);
  const auto sup_strides = tensor_strides(sup_dims);
  int total = 1;
  for (int d : dims) total *= d;
  MatrixXcd out = MatrixXcd::Zero(total, total);
  for (int row = 0; row < total; ++row) {
    const auto digits = decode_digits(row, dims);
    int row_s = 0;
    for (std::size_t i = 0; i < support.size(); ++i) row_s += digits[support[i]] * sup_strides[i];
    for (int col_s = 0; col_s < m.cols(); ++col_s) {
      const auto col_digits = decode_digits(col_s, sup_dims);
      int col = row;
      for (std::size_t i = 0; i < support.size(); ++i)
        col += (col_digits[i] - digits[support[i]]) * strides[support[i]];
      out(row, col) += m(row_s, col_s);
    }
  }
  return out;
}

// The identity observable of a support in original coordinates: all ones
// classically, the tensor of per-site vec(1) quantum mechanically.
inline VectorXcd identity_vector(const std::vector<const WeightedSiteSpace*>& sites) {
  std::vector<MatrixXcd> cols;
  for (const WeightedSiteSpace* w : sites) {
    VectorXcd v = VectorXcd::Zero(w->observable_dim());
    if (w->classical) {
      v.setOnes();
    } else {
      const int d = w->state_dim();
      for (int a = 0; a < d; ++a) v(a + a * d) = 1;
    }
    cols.push_back(v);
  }
  return kron_all(cols).col(0);
}

}  // namespace detail

inline MatrixXcd tensor_super_from_fullvec(const MatrixXcd& s,
                                           const std::vector<int>& state_dims) {
  int hilbert = 1;
  for (int d : state_dims) hilbert *= d;
  if (s.rows() != hilbert * hilbert || s.cols() != hilbert * hilbert)
    throw SchemaError("generator", "dimension must be the squared support Hilbert dimension");
  std::vector<int> obs_dims;
  for (int d : state_dims) obs_dims.push_back(d * d);
  const auto strides = detail::tensor_strides(obs_dims);
  std::vector<int> perm(hilbert * hilbert);
  for (int a = 0; a < hilbert; ++a) {
    const auto ad = detail::decode_digits(a, state_dims);
    for (int b = 0; b < hilbert; ++b) {
      const auto bd = detail::decode_digits(b, state_dims);
      int t = 0;
      for (std::size_t x = 0; x < state_dims.size(); ++x)
        t += (ad[x] + bd[x] * state_dims[x]) * strides[x];
      perm[t] = a + b * hilbert;
    }
  }
  MatrixXcd out(s.rows(), s.cols());
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) = s(perm[i], perm[j]);
  return out;
}

// ============================================================================
// Embedding into the flow
// ============================================================================

struct EmbeddedProblem {
  std::shared_ptr<const System> system;
  LocalOperator h_prime;  // minus the perturbation generator, orthonormal coordinates
  FlowConfig config;
  std::vector<MatrixXcd> embed;      // per site: original -> orthonormal coordinates
  std::vector<MatrixXcd> embed_inv;  // per site: orthonormal -> original
  bool classical = true;
  // The flow consumes -L throughout, so the site gaps are positive.
};

namespace detail {

struct SiteEmbedding {
  MatrixXcd emb, inv, h_hat;
  double gap = 0;
};

inline SiteEmbedding embed_site(const WeightedSiteSpace& w) {
  const int dim = w.observable_dim();
  MatrixXcd iso, iso_inv;
  VectorXcd ground(dim);
  if (w.classical) {
    iso = MatrixXcd::Zero(dim, dim);
    iso_inv = MatrixXcd::Zero(dim, dim);
    for (int i = 0; i < dim; ++i) {
      const double s = std::sqrt(w.nu(i).real());
      iso(i, i) = s;
      iso_inv(i, i) = 1.0 / s;
      ground(i) = s;
    }
  } else {
    const int d = w.state_dim();
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(w.rho);
    MatrixXcd root = es.operatorSqrt();
    MatrixXcd root_inv = es.operatorInverseSqrt();
    // vec(A rho^{1/2}) = (root^T kron 1) vec(A)
    iso = kron2(root.transpose(), MatrixXcd::Identity(d, d));
    iso_inv = kron2(root_inv.transpose(), MatrixXcd::Identity(d, d));
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) ground(a + b * d) = root(a, b);
  }

  const VectorXcd lid = w.l * identity_vector({&w});
  if (lid.cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, w.l.cwiseAbs().maxCoeff()))
    throw SchemaError("site.l", "generator must annihilate the identity");

  SiteEmbedding se;
  MatrixXcd q = frame_from_ground(ground);
  se.emb = q.adjoint() * iso;
  se.inv = iso_inv * q;
  se.h_hat = se.emb * (-w.l) * se.inv;

  const double scale = std::max(1.0, se.h_hat.cwiseAbs().maxCoeff());
  if ((se.h_hat - se.h_hat.adjoint()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw NotSelfAdjointGenerator(
        "site generator is not self-adjoint for the weighted inner product");
  se.h_hat = 0.5 * (se.h_hat + se.h_hat.adjoint()).eval();
  se.h_hat.row(0).setZero();  // exact annihilation of the ground coordinate;
  se.h_hat.col(0).setZero();  // the residual was checked above

  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(se.h_hat);
  if (es.eigenvalues()(0) < -1e-9 * scale)
    throw SchemaError("site.l", "spectrum must have non-positive real part");
  int zeros = 0;
  double gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < dim; ++i) {
    if (std::abs(es.eigenvalues()(i)) <= 1e-9 * scale)
      ++zeros;
    else
      gap = std::min(gap, es.eigenvalues()(i));
  }
  if (zeros != 1) throw GapClosed("0 must be a simple eigenvalue of the site generator");
  se.gap = gap;
  return se;
}

}  // namespace detail

inline EmbeddedProblem embed_weighted(const MarkovFlowProblem& p) {
  p.flow.validate();
  if (static_cast<int>(p.sites.size()) != p.volume.size())
    throw SchemaError("sites", "need exactly one weighted site per lattice site");
  const bool classical = p.sites.front().classical;
  for (const auto& w : p.sites)
    if (w.classical != classical)
      throw SchemaError("sites", "cannot mix classical and quantum sites");

  EmbeddedProblem e;
  e.classical = classical;
  e.config = p.flow;
  std::vector<SiteSpace> spaces;
  for (const auto& w : p.sites) {
    detail::SiteEmbedding se = detail::embed_site(w);
    VectorXcd omega = VectorXcd::Zero(w.observable_dim());
    omega(0) = 1;
    spaces.push_back(SiteSpace::with_ground(se.h_hat, omega, se.gap));
    e.embed.push_back(std::move(se.emb));
    e.embed_inv.push_back(std::move(se.inv));
  }
  const double drop = p.flow.drop_threshold;
  e.system = drop >= 0 ? System::make(p.volume, std::move(spaces), drop)
                       : System::make(p.volume, std::move(spaces));

  e.h_prime = LocalOperator::zero(e.system);
  for (const auto& term : p.terms) {
    for (std::size_t i = 0; i + 1 < term.support.size(); ++i)
      if (term.support[i] >= term.support[i + 1])
        throw SchemaError("perturbation.sites", "must be sorted and unique");
    std::vector<MatrixXcd> embs, invs;
    std::vector<const WeightedSiteSpace*> ws;
    int dim = 1;
    for (int x : term.support) {
      if (x < 0 || x >= p.volume.size())
        throw SchemaError("perturbation.sites", "site outside the volume");
      embs.push_back(e.embed[x]);
      invs.push_back(e.embed_inv[x]);
      ws.push_back(&p.sites[x]);
      dim *= p.sites[x].observable_dim();
    }
    if (term.generator.rows() != dim || term.generator.cols() != dim)
      throw SchemaError("perturbation.generator", "dimension must match the support");
    const VectorXcd lid = term.generator * detail::identity_vector(ws);
    if (lid.cwiseAbs().maxCoeff() >
        1e-10 * std::max(1.0, term.generator.cwiseAbs().maxCoeff()))
      throw SchemaError("perturbation.generator", "must annihilate the identity");
    MatrixXcd m_hat =
        detail::kron_all(embs) * (-term.generator) * detail::kron_all(invs);
    e.h_prime = e.h_prime + decompose(e.system, m_hat, term.support,
                                      BlockBasis::Computational);
  }
  return e;
}

// ============================================================================
// Direct oracles (dense null-space solves, no sector machinery)
// ============================================================================

namespace detail {

// Kernel of m, required simple: smallest singular direction.
inline VectorXcd kernel_vector(const MatrixXcd& m) {
  Eigen::JacobiSVD<MatrixXcd> svd(m, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const int n = static_cast<int>(s.size());
  const double scale = std::max(1.0, s(0));
  if (s(n - 1) > 1e-8 * scale) throw DegenerateKernel("generator has no null vector");
  if (n >= 2 && s(n - 2) <= 1e-8 * scale)
    throw DegenerateKernel("stationary state is not unique");
  return svd.matrixV().col(n - 1);
}

}  // namespace detail

// Assembles the full-lattice generator in original coordinates.
inline MatrixXcd dense_generator(const MarkovFlowProblem& p) {
  std::vector<int> dims;
  for (const auto& w : p.sites) dims.push_back(w.observable_dim());
  int total = 1;
  for (int d : dims) total *= d;
  MatrixXcd l = MatrixXcd::Zero(total, total);
  for (int x = 0; x < static_cast<int>(p.sites.size()); ++x)
    l += detail::scatter_embed(p.sites[x].l, {x}, dims);
  for (const auto& term : p.terms) l += detail::scatter_embed(term.generator, term.support, dims);
  return l;
}

// Classical: nu'(L f) = 0 for all f, so nu' spans the kernel of L^T.
inline VectorXcd stationary_distribution_direct(const MatrixXcd& l_full) {
  VectorXcd nu = detail::kernel_vector(l_full.transpose());
  Complex total = nu.sum();
  if (std::abs(total) < 1e-12) throw DegenerateKernel("null vector has zero total mass");
  return nu / total;
}

// Quantum: Tr(rho' L(A)) = 0 for all A. In site-major vectorized
// coordinates the coefficient vector of A -> Tr(rho' A) spans the kernel of
// L^T; unpack it into the density matrix and normalize the trace.
inline MatrixXcd stationary_density_direct(const MatrixXcd& l_full,
                                           const std::vector<int>& state_dims) {
  VectorXcd c = detail::kernel_vector(l_full.transpose());
  std::vector<int> obs_dims;
  for (int d : state_dims) obs_dims.push_back(d * d);
  const auto strides = detail::tensor_strides(obs_dims);
  int hilbert = 1;
  for (int d : state_dims) hilbert *= d;
  MatrixXcd rho = MatrixXcd::Zero(hilbert, hilbert);
  for (int a = 0; a < hilbert; ++a) {
    const auto ad = detail::decode_digits(a, state_dims);
    for (int b = 0; b < hilbert; ++b) {
      const auto bd = detail::decode_digits(b, state_dims);
      // Tr(rho' M) pairs rho'_{ab} with M_{ba}: entry (row b_x, col a_x).
      int idx = 0;
      for (std::size_t x = 0; x < state_dims.size(); ++x)
        idx += (bd[x] + ad[x] * state_dims[x]) * strides[x];
      rho(a, b) = c(idx);
    }
  }
  Complex tr = rho.trace();
  if (std::abs(tr) < 1e-12) throw DegenerateKernel("null vector has zero trace");
  return rho / tr;
}

// ============================================================================
// Stationary state through the flow
// ============================================================================

struct MarkovResult {
  bool classical = true;
  Complex lambda{1, 0};
  VectorXcd stationary;  // classical: measure over configurations
  MatrixXcd density;     // quantum: full-lattice density matrix
  double d_abs = 0;
  double identity_residual = 0;  // || U(1) - lambda 1 ||
  FlowResult flow;
  EmbeddedProblem embedded;
};

namespace detail {

inline VectorXcd ground_vector(const System& sys) {
  VectorXcd omega = VectorXcd::Zero(sys.dense_dim(sys.all_sites()));
  omega(0) = 1;
  return omega;
}

}  // namespace detail

inline MarkovResult extract_stationary(const MarkovFlowProblem& p, EmbeddedProblem e,
                                       FlowResult flow) {
  MarkovResult out;
  out.classical = e.classical;
  const VectorXcd omega = detail::ground_vector(*e.system);
  MatrixXcd u = flow.u.dense(false);
  MatrixXcd u_inv = flow.u.dense(true);

  const Complex inv_overlap = omega.dot(u_inv * omega);
  if (std::abs(inv_overlap) < 1e-12)
    throw DegenerateKernel("dressed identity has no overlap with the product state");
  out.lambda = Complex(1, 0) / inv_overlap;
  out.identity_residual = (u * omega - out.lambda * omega).norm();
  out.d_abs = std::abs(flow.state.d);

  // Functional coefficients of rho' over original coordinates:
  // rho'(A) = lambda <omega, U^{-1} E A> = sum_k conj(y_k) lambda A_k.
  MatrixXcd e_full = detail::kron_all(e.embed);
  VectorXcd y = e_full.adjoint() * (u_inv.adjoint() * omega);
  if (e.classical) {
    out.stationary = out.lambda * y.conjugate();
  } else {
    std::vector<int> state_dims, obs_dims;
    for (const auto& w : p.sites) {
      state_dims.push_back(w.state_dim());
      obs_dims.push_back(w.observable_dim());
    }
    const auto strides = detail::tensor_strides(obs_dims);
    int hilbert = 1;
    for (int d : state_dims) hilbert *= d;
    out.density = MatrixXcd::Zero(hilbert, hilbert);
    for (int a = 0; a < hilbert; ++a) {
      const auto ad = detail::decode_digits(a, state_dims);
      for (int b = 0; b < hilbert; ++b) {
        const auto bd = detail::decode_digits(b, state_dims);
        int idx = 0;
        for (std::size_t x = 0; x < state_dims.size(); ++x)
          idx += (ad[x] + bd[x] * state_dims[x]) * strides[x];
        // rho'(E_ab) = Tr(rho' |a><b|) = rho'_{ba}
        out.density(b, a) = out.lambda * std::conj(y(idx));
      }
    }
  }
  out.flow = std::move(flow);
  out.embedded = std::move(e);
  return out;
}

inline MarkovResult stationary_state_via_flow(const MarkovFlowProblem& p) {
  EmbeddedProblem e = embed_weighted(p);
  FlowResult flow = run_flow(e.h_prime, h0_operator(e.system), e.config);
  return extract_stationary(p, std::move(e), std::move(flow));
}

// ============================================================================
// Radon-Nikodym derivative and observable pushforward
// ============================================================================

// Decay sum over excitation sectors of an embedded vector, weighted by the
// anchored Steiner weight: sum_S e^{mu w_x(S)} || v_S ||, with the fully
// ground component entering unweighted.
inline double vector_sector_decay(const System& sys, const VectorXcd& v, double mu, int anchor) {
  std::vector<int> dims;
  for (int x = 0; x < sys.num_sites(); ++x) dims.push_back(sys.site(x).dim());
  std::map<SiteSet, double> norms;
  for (int i = 0; i < v.size(); ++i) {
    const auto digits = detail::decode_digits(i, dims);
    SiteSet s;
    for (int x = 0; x < static_cast<int>(digits.size()); ++x)
      if (digits[x] != 0) s.push_back(x);
    norms[s] += std::norm(v(i));
  }
  double total = 0;
  for (const auto& [s, sq] : norms) {
    if (s.empty())
      total += std::sqrt(sq);
    else
      total += std::exp(mu * weight_anchored(s, anchor, sys.volume())) * std::sqrt(sq);
  }
  return total;
}

struct RnDerivative {
  VectorXcd values;  // function values over configurations
  Complex lambda{1, 0};
  bool positive = false;
  double decay_sum = 0;            // anchored-sector decay of the embedded function
  double normalization_error = 0;  // | nu(f) - 1/lambda |
};

inline RnDerivative rn_derivative(const MarkovFlowProblem& p, const EmbeddedProblem& e,
                                  const FlowResult& flow, int anchor = 0) {
  if (!e.classical)
    throw HypothesisViolated("the Radon-Nikodym derivative is a classical-problem notion");
  RnDerivative out;
  const VectorXcd omega = detail::ground_vector(*e.system);
  MatrixXcd u_inv = flow.u.dense(true);
  const Complex inv_overlap = omega.dot(u_inv * omega);
  out.lambda = Complex(1, 0) / inv_overlap;

  // The embedding is isometric, so the nu-adjoint is the plain adjoint in
  // orthonormal coordinates.
  VectorXcd f_emb = u_inv.adjoint() * omega;
  out.values = detail::kron_all(e.embed_inv) * f_emb;

  double min_re = std::numeric_limits<double>::infinity(), max_im = 0;
  Complex nu_f = 0;
  for (int i = 0; i < out.values.size(); ++i) {
    min_re = std::min(min_re, out.values(i).real());
    max_im = std::max(max_im, std::abs(out.values(i).imag()));
  }
  // nu(f) over the product measure.
  std::vector<MatrixXcd> weights;
  for (const auto& w : p.sites) weights.push_back(w.nu);
  VectorXcd nu_full = detail::kron_all(weights).col(0);
  for (int i = 0; i < out.values.size(); ++i) nu_f += nu_full(i) * out.values(i);
  out.positive = min_re > -1e-10 && max_im < 1e-10;
  out.normalization_error = std::abs(nu_f - Complex(1, 0) / out.lambda);
  out.decay_sum = vector_sector_decay(*e.system, f_emb, e.config.kappa, anchor);
  return out;
}

struct VectorSector {
  SiteSet support;
  double hs_norm = 0;          // weighted Hilbert-Schmidt norm (embedded l2)
  double op_norm = 0;          // operator norm of the reconstructed observable
  double conversion_bound = 0; // hs_norm scaled by the inverse smallest rho eigenvalues
};

struct PushforwardResult {
  LocalOperator multiplication;  // embedded multiplication operator L_A
  LocalOperator dressed;         // U^{-1} L_A U
  VectorXcd a_prime;             // embedded coordinates of A' = dressed identity
  Complex expectation;           // rho(A'), equal to rho'(A)
  double anchored_ratio = 0;     // dressed vs bare anchored norm
  std::vector<VectorSector> sectors;  // quantum norm-conversion data
};

// Observable near the support: classical input is the function values over
// the support configurations, quantum input the observable matrix on the
// support Hilbert space.
inline PushforwardResult observable_pushforward(const MarkovFlowProblem& p,
                                                const EmbeddedProblem& e,
                                                const FlowResult& flow, const SiteSet& support,
                                                const MatrixXcd& observable, int anchor) {
  std::vector<int> state_dims;
  int hilbert = 1, obs_dim = 1;
  for (int x : support) {
    state_dims.push_back(p.sites[x].state_dim());
    hilbert *= state_dims.back();
    obs_dim *= p.sites[x].observable_dim();
  }

  // The multiplication superoperator in original support coordinates.
  MatrixXcd mult = MatrixXcd::Zero(obs_dim, obs_dim);
  if (e.classical) {
    if (observable.rows() != hilbert || observable.cols() != 1)
      throw SchemaError("observable", "expected a column of function values over the support");
    for (int i = 0; i < hilbert; ++i) mult(i, i) = observable(i, 0);
  } else {
    if (observable.rows() != hilbert || observable.cols() != hilbert)
      throw SchemaError("observable", "expected a matrix on the support Hilbert space");
    std::vector<int> obs_dims;
    for (int d : state_dims) obs_dims.push_back(d * d);
    const auto strides = detail::tensor_strides(obs_dims);
    auto tensor_index = [&](int a, int b) {
      const auto ad = detail::decode_digits(a, state_dims);
      const auto bd = detail::decode_digits(b, state_dims);
      int idx = 0;
      for (std::size_t x = 0; x < state_dims.size(); ++x)
        idx += (ad[x] + bd[x] * state_dims[x]) * strides[x];
      return idx;
    };
    // vec(A X): rows (a,b) couple to (a',b) with weight A_{a a'}.
    for (int a = 0; a < hilbert; ++a)
      for (int ap = 0; ap < hilbert; ++ap) {
        if (observable(a, ap) == Complex(0, 0)) continue;
        for (int b = 0; b < hilbert; ++b)
          mult(tensor_index(a, b), tensor_index(ap, b)) += observable(a, ap);
      }
  }

  std::vector<MatrixXcd> embs, invs;
  for (int x : support) {
    embs.push_back(e.embed[x]);
    invs.push_back(e.embed_inv[x]);
  }
  MatrixXcd m_hat = detail::kron_all(embs) * mult * detail::kron_all(invs);

  PushforwardResult out;
  out.multiplication = decompose(e.system, m_hat, support, BlockBasis::Computational);
  out.dressed = apply_dressing(flow.u, out.multiplication, false);
  out.anchored_ratio = mu_norm_anchored(out.dressed, e.config.kappa, anchor) /
                       mu_norm_anchored(out.multiplication, e.config.kappa_prime, anchor);

  const VectorXcd omega = detail::ground_vector(*e.system);
  out.a_prime = assemble(out.dressed, BlockBasis::Adapted) * omega;
  out.expectation = omega.dot(out.a_prime);

  if (!e.classical) {
    // Per-sector operator-norm conversion data for the reconstruction of
    // A'_S as a matrix on the support Hilbert space.
    std::vector<int> full_dims;
    for (int x = 0; x < e.system->num_sites(); ++x) full_dims.push_back(e.system->site(x).dim());
    std::map<SiteSet, std::vector<std::pair<int, int>>> blocks;  // S -> (full idx, sector idx)
    std::map<SiteSet, int> block_sizes;
    for (int i = 0; i < out.a_prime.size(); ++i) {
      const auto digits = detail::decode_digits(i, full_dims);
      SiteSet s;
      for (int x = 0; x < static_cast<int>(digits.size()); ++x)
        if (digits[x] != 0) s.push_back(x);
      if (s.empty()) continue;
      std::vector<int> s_dims;
      for (int x : s) s_dims.push_back(full_dims[x]);
      const auto s_strides = detail::tensor_strides(s_dims);
      int idx = 0;
      for (std::size_t k = 0; k < s.size(); ++k) idx += digits[s[k]] * s_strides[k];
      blocks[s].emplace_back(i, idx);
      int size = 1;
      for (int d : s_dims) size *= d;
      block_sizes[s] = size;
    }
    for (const auto& [s, entries] : blocks) {
      VectorXcd padded = VectorXcd::Zero(block_sizes[s]);
      for (const auto& [full_idx, sector_idx] : entries) padded(sector_idx) = out.a_prime(full_idx);
      const double hs = padded.norm();
      if (hs < 1e-15) continue;
      std::vector<MatrixXcd> s_invs;
      std::vector<int> s_state_dims;
      double inv_eig_product = 1;
      for (int x : s) {
        s_invs.push_back(e.embed_inv[x]);
        s_state_dims.push_back(p.sites[x].state_dim());
        Eigen::SelfAdjointEigenSolver<MatrixXcd> es(p.sites[x].rho);
        inv_eig_product /= es.eigenvalues()(0);
      }
      VectorXcd orig = detail::kron_all(s_invs) * padded;
      std::vector<int> s_obs_dims;
      int s_hilbert = 1;
      for (int d : s_state_dims) {
        s_obs_dims.push_back(d * d);
        s_hilbert *= d;
      }
      const auto strides = detail::tensor_strides(s_obs_dims);
      MatrixXcd m = MatrixXcd::Zero(s_hilbert, s_hilbert);
      for (int a = 0; a < s_hilbert; ++a) {
        const auto ad = detail::decode_digits(a, s_state_dims);
        for (int b = 0; b < s_hilbert; ++b) {
          const auto bd = detail::decode_digits(b, s_state_dims);
          int idx = 0;
          for (std::size_t x = 0; x < s_state_dims.size(); ++x)
            idx += (ad[x] + bd[x] * s_state_dims[x]) * strides[x];
          m(a, b) = orig(idx);
        }
      }
      VectorSector vs;
      vs.support = s;
      vs.hs_norm = hs;
      vs.op_norm = operator_norm(m);
      vs.conversion_bound = std::sqrt(inv_eig_product) * hs;
      out.sectors.push_back(std::move(vs));
    }
  }
  return out;
}

// ============================================================================
// Problem documents and reports
// ============================================================================

namespace detail {

inline Complex numeric_entry(const json& j) {
  if (j.is_number()) return Complex(j.get<double>(), 0);
  return complex_from_json(j);
}

inline MatrixXcd numeric_matrix(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw SchemaError(field, "expected a non-empty array of rows");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  MatrixXcd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols) throw SchemaError(field, "ragged rows");
    for (int c = 0; c < cols; ++c) m(r, c) = numeric_entry(j[r][c]);
  }
  return m;
}

inline VectorXcd numeric_vector(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw SchemaError(field, "expected a non-empty array");
  VectorXcd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = numeric_entry(j[i]);
  return v;
}

}  // namespace detail

inline MarkovFlowProblem markov_problem_from_json(const json& j) {
  MarkovFlowProblem p;
  const std::string kind = j.value("kind", "classical");
  if (kind != "classical" && kind != "quantum")
    throw SchemaError("kind", "must be 'classical' or 'quantum'");
  p.volume = volume_from_json(j.at("volume"));

  if (!j.contains("sites") || !j.at("sites").is_array() || j.at("sites").empty())
    throw SchemaError("sites", "expected a non-empty array");
  json sites = j.at("sites");
  if (static_cast<int>(sites.size()) == 1 && p.volume.size() > 1) {
    json uniform = sites[0];
    sites = json::array();
    for (int x = 0; x < p.volume.size(); ++x) sites.push_back(uniform);
  }
  for (const json& s : sites) {
    if (kind == "classical") {
      VectorXcd nu = detail::numeric_vector(s.at("nu"), "site.nu");
      MatrixXcd l;
      if (s.contains("rates"))
        l = classical_rate_generator(detail::numeric_matrix(s.at("rates"), "site.rates"));
      else
        l = detail::numeric_matrix(s.at("l"), "site.l");
      p.sites.push_back(WeightedSiteSpace::classical_site(std::move(nu), std::move(l)));
    } else {
      MatrixXcd rho = detail::numeric_matrix(s.at("rho"), "site.rho");
      MatrixXcd l;
      if (s.contains("depolarizing"))
        l = depolarizing_super(rho, s.at("depolarizing").get<double>());
      else
        l = detail::numeric_matrix(s.at("l"), "site.l");
      p.sites.push_back(WeightedSiteSpace::quantum_site(std::move(rho), std::move(l)));
    }
  }

  for (const json& t : j.value("perturbation", json::array())) {
    MarkovTerm term;
    term.support = t.at("sites").get<SiteSet>();
    if (t.contains("rates")) {
      if (kind != "classical") throw SchemaError("perturbation.rates", "rate tables are classical");
      term.generator =
          classical_rate_generator(detail::numeric_matrix(t.at("rates"), "perturbation.rates"));
    } else {
      term.generator = detail::numeric_matrix(t.at("generator"), "perturbation.generator");
    }
    p.terms.push_back(std::move(term));
  }

  if (j.contains("flow")) p.flow = flow_config_from_json(j.at("flow"));
  return p;
}

inline json stationary_report(const MarkovResult& r) {
  json out{{"kind", r.classical ? "classical" : "quantum"},
           {"lambda", to_json(r.lambda)},
           {"d_abs", r.d_abs},
           {"identity_residual", r.identity_residual},
           {"converged", r.flow.converged},
           {"iterations", r.flow.state.n},
           {"sign_convention", "flow consumes minus the generator"}};
  if (r.classical) {
    json v = json::array();
    for (int i = 0; i < r.stationary.size(); ++i) v.push_back(to_json(r.stationary(i)));
    out["stationary"] = std::move(v);
  } else {
    out["density"] = to_json(r.density);
  }
  return out;
}

}  // namespace spinkam
