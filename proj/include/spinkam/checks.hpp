// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Numerical validation of the structural claims behind the flow: gap
// stability under dressed perturbations, spectrum preservation, the three
// norm inequalities (generator, commutator, exponential series), their
// anchored variant, ground-state dressing, and locality ratios across
// volumes. Each check returns a report with the measured quantity, the
// stated bound, and the instance descriptor needed to reproduce it.
//
// Oracles here are dense: eigensolvers, matrix exponentials, and explicit
// inverses on the full product space. The sector machinery only supplies
// the quantities whose bounds are under test.

#pragma once

#include <string>

#include "spinkam/flow.hpp"
#include "spinkam/random_ops.hpp"

namespace spinkam {

using Eigen::VectorXcd;

struct CheckReport {
  std::string check;
  bool pass = false;
  double measured = 0;
  double bound = 0;
  double margin = 0;  // bound - measured
  json instance;      // seed, volume, parameters

  static CheckReport make(std::string name, double measured, double bound, double tolerance,
                          json instance) {
    CheckReport r;
    r.check = std::move(name);
    r.measured = measured;
    r.bound = bound;
    r.margin = bound - measured;
    r.pass = measured <= bound + tolerance;
    r.instance = std::move(instance);
    return r;
  }
};

inline json to_json(const CheckReport& r) {
  return json{{"check", r.check}, {"pass", r.pass},     {"measured", r.measured},
              {"bound", r.bound}, {"margin", r.margin}, {"instance", r.instance}};
}

// ============================================================================
// Spectral checks
// ============================================================================

// Gap stability: H_0 + F keeps a simple eigenvalue at zero and the rest of
// the spectrum at real part above g/2. Reported as the worst violation of
// either property (0 when both hold exactly).
inline CheckReport check_gap(const LocalOperator& f, double g, json instance = {}) {
  const auto& sys = f.system();
  MatrixXcd m = sys->h0_dense() + assemble(f, BlockBasis::Adapted);
  Eigen::ComplexEigenSolver<MatrixXcd> es(m);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());

  int zeros = 0;
  double smallest = std::numeric_limits<double>::infinity();
  double min_re_rest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m.rows(); ++i) {
    const Complex lam = es.eigenvalues()(i);
    smallest = std::min(smallest, std::abs(lam));
    if (std::abs(lam) <= 1e-9 * scale) {
      ++zeros;
    } else {
      min_re_rest = std::min(min_re_rest, lam.real());
    }
  }
  instance["zero_eigenvalues"] = zeros;
  instance["min_real_part_rest"] = min_re_rest;

  double violation = g / 2 - min_re_rest;           // positive when the gap shrank too far
  if (zeros != 1) violation = std::max(violation, smallest + 1.0);  // wrong kernel count
  return CheckReport::make("gap_stability", violation, 0.0, 1e-9, std::move(instance));
}

// Greedy tolerance-ball pairing of two complex spectra sorted by real part
// then imaginary part; the measured value is the worst matched distance.
inline double spectrum_pairing_distance(std::vector<Complex> a, std::vector<Complex> b) {
  auto lex = [](Complex x, Complex y) {
    if (x.real() != y.real()) return x.real() < y.real();
    return x.imag() < y.imag();
  };
  std::sort(a.begin(), a.end(), lex);
  std::sort(b.begin(), b.end(), lex);
  std::vector<bool> used(b.size(), false);
  double worst = 0;
  for (const Complex& x : a) {
    double best = std::numeric_limits<double>::infinity();
    int pick = -1;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (used[j]) continue;
      const double dist = std::abs(x - b[j]);
      if (dist < best) {
        best = dist;
        pick = static_cast<int>(j);
      }
    }
    used[pick] = true;
    worst = std::max(worst, best);
  }
  return worst;
}

inline std::vector<Complex> dense_spectrum(const MatrixXcd& m) {
  Eigen::ComplexEigenSolver<MatrixXcd> es(m);
  return std::vector<Complex>(es.eigenvalues().data(), es.eigenvalues().data() + m.rows());
}

inline CheckReport check_spectrum_preserved(const MatrixXcd& h, const MatrixXcd& h_f,
                                            double tol = 1e-8, json instance = {}) {
  const double measured = spectrum_pairing_distance(dense_spectrum(h), dense_spectrum(h_f));
  return CheckReport::make("spectrum_preserved", measured, tol, 0.0, std::move(instance));
}

// The accumulated shift must be the eigenvalue of H_F at the ground
// coordinate, alone in the disk of radius g/4 around it.
inline CheckReport check_shift_isolated(const LocalOperator& h_f, Complex d, double g,
                                        json instance = {}) {
  MatrixXcd m = assemble(h_f, BlockBasis::Adapted);
  const long n = m.rows();
  VectorXcd omega = VectorXcd::Zero(n);
  omega(0) = 1;
  const double eigen_residual = (m * omega - d * omega).norm();

  int inside = 0;
  for (const Complex& lam : dense_spectrum(m))
    if (std::abs(lam - d) < g / 4) ++inside;
  instance["eigenvalues_in_disk"] = inside;
  double violation = eigen_residual;
  if (inside != 1) violation = std::max(violation, 1.0);
  return CheckReport::make("shift_isolated", violation, 0.0, 1e-9, std::move(instance));
}

// ============================================================================
// Norm inequality checks
// ============================================================================

inline CheckReport check_generator_bound(const LocalOperator& f, const LocalOperator& v,
                                         double mu, double g, json instance = {}) {
  const double f_norm = mu_norm(f, mu);
  if (!(f_norm < g / 4)) throw HypothesisViolated("dressed part must stay below a quarter gap");
  MatrixXcd r = reduced_resolvent(f);
  LocalOperator a = build_generator(v, r);
  const double measured = mu_norm(a, mu);
  const double bound = 8 * mu_norm(v, mu) / (g / 4 - f_norm);
  instance["mu"] = mu;
  instance["f_norm"] = f_norm;
  return CheckReport::make("generator_bound", measured, bound, 1e-12, std::move(instance));
}

inline CheckReport check_commutator_bound(const LocalOperator& a, const LocalOperator& b,
                                          double mu, double mu_prime, json instance = {}) {
  if (!(mu_prime > mu && mu >= std::log(2.0) - 1e-12))
    throw HypothesisViolated("rates must satisfy mu' > mu >= log 2");
  const double measured = mu_norm(commutator(a, b), mu);
  const double bound = 8 * mu_norm(a, mu_prime) * mu_norm(b, mu_prime) / (mu_prime - mu);
  instance["mu"] = mu;
  instance["mu_prime"] = mu_prime;
  return CheckReport::make("commutator_bound", measured, bound, 1e-12, std::move(instance));
}

// Sum over k >= 1 of ad_A^k B^(k) / k!, with the sequence cut off at the
// length of b_seq (zero operators beyond it are admissible instances).
inline CheckReport check_exponential_bound(const LocalOperator& a,
                                           const std::vector<LocalOperator>& b_seq, double mu,
                                           double mu_prime, json instance = {}) {
  const double dmu = mu_prime - mu;
  const double a_norm = mu_norm(a, mu_prime);
  if (!(mu_prime > mu && mu >= std::log(2.0) - 1e-12 && dmu <= 1 + 1e-12))
    throw HypothesisViolated("rates must satisfy log 2 <= mu < mu' <= mu + 1");
  if (!(a_norm <= dmu / 6))
    throw HypothesisViolated("generator norm must stay below a sixth of the rate gap");

  const auto& sys = a.system();
  LocalOperator total = LocalOperator::zero(sys);
  double b_sup = 0;
  for (std::size_t i = 0; i < b_seq.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    b_sup = std::max(b_sup, mu_norm(b_seq[i], mu_prime));
    LocalOperator term = b_seq[i];
    for (int j = 1; j <= k; ++j) term = Complex(1.0 / j, 0) * commutator(a, term);
    total = total + term;
  }
  const double measured = mu_norm(total, mu);
  const double bound = 252 * b_sup * a_norm / dmu;
  instance["mu"] = mu;
  instance["mu_prime"] = mu_prime;
  instance["sequence_length"] = b_seq.size();
  return CheckReport::make("exponential_bound", measured, bound, 1e-12, std::move(instance));
}

// Anchored variant for a single conjugation factor:
// || e^{ad_A} B - B ||_{mu,x} against 2 ||A||_{mu'} ||B||_{mu',x} / (mu'-mu).
inline CheckReport check_anchored_exponential_bound(const LocalOperator& a,
                                                    const LocalOperator& b, double mu,
                                                    double mu_prime, int anchor,
                                                    json instance = {}) {
  const double dmu = mu_prime - mu;
  const double a_norm = mu_norm(a, mu_prime);
  if (!(mu_prime > mu && mu >= std::log(2.0) - 1e-12))
    throw HypothesisViolated("rates must satisfy mu' > mu >= log 2");
  if (!(a_norm <= dmu / 2))
    throw HypothesisViolated("generator norm must stay below half the rate gap");

  const auto& sys = a.system();
  MatrixXcd ad = assemble(a, BlockBasis::Adapted);
  MatrixXcd bd = assemble(b, BlockBasis::Adapted);
  MatrixXcd moved = ad.exp() * bd * (-ad).exp() - bd;
  LocalOperator diff = decompose(sys, moved, sys->all_sites(), BlockBasis::Adapted);
  const double measured = mu_norm_anchored(diff, mu, anchor);
  const double bound = 2 * a_norm * mu_norm_anchored(b, mu_prime, anchor) / dmu;
  instance["mu"] = mu;
  instance["mu_prime"] = mu_prime;
  instance["anchor"] = anchor;
  return CheckReport::make("anchored_exponential_bound", measured, bound, 1e-12,
                           std::move(instance));
}

// Residual of the defining identity of the generator: the non-diagonal part
// of V + i[A, H_0 + F] vanishes.
inline CheckReport check_generator_identity(const LocalOperator& f, const LocalOperator& v,
                                            double mu, json instance = {}) {
  const auto& sys = v.system();
  MatrixXcd r = reduced_resolvent(f);
  LocalOperator a = build_generator(v, r);
  LocalOperator c = Complex(0, 1) * commutator(a, h0_operator(sys) + f);
  const double vnorm = mu_norm_primed(v, mu);
  const double residual = mu_norm_primed(v + classify(c).v(), mu);
  const double measured = vnorm > 0 ? residual / vnorm : residual;
  instance["mu"] = mu;
  return CheckReport::make("generator_identity", measured, 1e-9, 0.0, std::move(instance));
}

// ============================================================================
// Dressing checks
// ============================================================================

// Self-adjoint flows: U unitary and U applied to the product ground vector
// reproduces the dense ground state of the perturbed Hamiltonian.
inline CheckReport check_dressing_ground_state(const DressingTransform& u,
                                               const MatrixXcd& h_dense, json instance = {}) {
  MatrixXcd ud = u.dense(false);
  const long n = ud.rows();
  const double unitarity =
      (ud.adjoint() * ud - MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff();

  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(h_dense);
  VectorXcd ground = es.eigenvectors().col(0);
  VectorXcd omega = VectorXcd::Zero(n);
  omega(0) = 1;
  const double fidelity = std::abs(ground.dot(ud * omega));
  instance["fidelity"] = fidelity;
  instance["unitarity_residual"] = unitarity;
  const double measured = std::max(1.0 - fidelity, unitarity);
  return CheckReport::make("dressing_ground_state", measured, 1e-8, 0.0, std::move(instance));
}

// Anchored-norm amplification of a fixed observable under the dressing.
inline double locality_ratio(const DressingTransform& u, const LocalOperator& op, int anchor,
                             double kappa, double kappa_prime) {
  LocalOperator moved = apply_dressing(u, op, false);
  return mu_norm_anchored(moved, kappa, anchor) / mu_norm_anchored(op, kappa_prime, anchor);
}

// Volume-independence evidence: ratios may settle or shrink as the volume
// grows past the smallest two entries, within a relative slack.
inline CheckReport check_locality(const std::vector<std::pair<int, double>>& ratios_by_volume,
                                  double rel_slack = 0.10, json instance = {}) {
  json table = json::array();
  for (const auto& [vol, ratio] : ratios_by_volume)
    table.push_back(json{{"volume", vol}, {"ratio", ratio}});
  instance["ratios"] = std::move(table);

  double worst_growth = 0;
  for (std::size_t i = 2; i < ratios_by_volume.size(); ++i) {
    const double prev = ratios_by_volume[i - 1].second;
    const double cur = ratios_by_volume[i].second;
    if (prev > 0) worst_growth = std::max(worst_growth, cur / prev - 1.0);
  }
  return CheckReport::make("locality_ratio", worst_growth, rel_slack, 0.0, std::move(instance));
}

// Neumann expansion of the reduced resolvent: order-12 agreement and the
// successive-order contraction rate against the geometric factor. The factor
// is an upper bound; the measured rate is typically about half of it, so the
// check is one-sided.
inline CheckReport check_resolvent_series_agreement(const LocalOperator& f, int order = 12,
                                                    double tol = 1e-8, json instance = {}) {
  const double measured = operator_norm(resolvent_neumann(f, order) - reduced_resolvent(f));
  instance["order"] = order;
  return CheckReport::make("resolvent_series_agreement", measured, tol, 0.0,
                           std::move(instance));
}

inline CheckReport check_resolvent_series_rate(const LocalOperator& f, int max_order = 8,
                                               double rel_slack = 0.2, json instance = {}) {
  const double factor = 2 * mu_norm(f, 0.0) / f.system()->gap();
  std::vector<double> diffs;
  MatrixXcd prev = resolvent_neumann(f, 0);
  for (int k = 1; k <= max_order; ++k) {
    MatrixXcd cur = resolvent_neumann(f, k);
    diffs.push_back(operator_norm(cur - prev));
    prev = cur;
  }
  double worst_ratio = 0;
  for (std::size_t i = 1; i < diffs.size(); ++i)
    if (diffs[i - 1] > 1e-300) worst_ratio = std::max(worst_ratio, diffs[i] / diffs[i - 1]);
  instance["geometric_factor"] = factor;
  instance["worst_ratio"] = worst_ratio;
  return CheckReport::make("resolvent_series_rate", worst_ratio, factor * (1 + rel_slack), 0.0,
                           std::move(instance));
}

// ============================================================================
// Randomized suites
// ============================================================================

struct SuiteOptions {
  int count = 100;
  std::uint64_t seed = 1;
  bool inject_failure = false;  // corrupts one instance to prove failures surface
};

namespace detail {

inline std::shared_ptr<const System> suite_system(Rng& rng, int max_sites = 3) {
  const int n = 2 + rng.uniform_int(max_sites - 1);
  const int dim = rng.uniform_int(4) == 0 ? 3 : 2;
  const bool rotated = rng.uniform_int(3) == 0;
  return random_system(Volume({n}), dim, 1.0, rng, rotated);
}

inline json suite_instance(std::uint64_t seed, const std::shared_ptr<const System>& sys) {
  return json{{"seed", seed},
              {"volume", sys->volume().extents()},
              {"site_dim", sys->site(0).dim()},
              {"gap", sys->gap()}};
}

}  // namespace detail

// One named check on one seeded random instance. Suites call this per seed;
// the CLI exposes it for reproducing a single report.
inline CheckReport run_random_check(const std::string& name, std::uint64_t seed,
                                    bool inject_failure = false) {
  Rng master = Rng::seeded(seed);
  Rng rng = master.derive(0x5eed);
  auto sys = detail::suite_system(rng);
  json inst = detail::suite_instance(seed, sys);
  const double g = sys->gap();
  const double mu = std::log(2.0) + rng.uniform(0.0, 0.5);
  const double dmu = rng.uniform(0.05, 0.9);

  if (name == "gap_stability") {
    LocalOperator f = random_frustration_free(sys, rng);
    f = scaled_to(f, [](const LocalOperator& o) { return mu_norm(o, 0.0); },
                  rng.uniform(0.05, 0.45) * g);
    if (inject_failure) {
      // Cancel a site term entirely: the zero eigenvalue degenerates.
      MatrixXcd kill = -sys->site(0).h_adapted();
      f = classify(decompose(sys, kill, {0}, BlockBasis::Adapted)).f;
    }
    inst["f_norm_at_zero"] = mu_norm(f, 0.0);
    return check_gap(f, g, std::move(inst));
  }
  if (name == "generator_bound") {
    LocalOperator f = random_frustration_free(sys, rng);
    f = scaled_to(f, [&](const LocalOperator& o) { return mu_norm(o, mu); },
                  rng.uniform(0.0, 0.2) * g);
    LocalOperator v = random_nondiagonal(sys, rng, rng.uniform_int(2) == 0);
    v = Complex(rng.uniform(1e-4, 1e-1), 0) * v;
    CheckReport r = check_generator_bound(f, v, mu, g, std::move(inst));
    if (inject_failure) {
      r.measured = r.bound * 2 + 1;
      r.margin = r.bound - r.measured;
      r.pass = false;
    }
    return r;
  }
  if (name == "commutator_bound") {
    LocalOperator a = random_local_operator(sys, rng);
    LocalOperator b = random_local_operator(sys, rng);
    return check_commutator_bound(a, b, mu, mu + dmu, std::move(inst));
  }
  if (name == "exponential_bound") {
    const double dmu_capped = std::min(dmu, 1.0);
    LocalOperator a = random_local_operator(sys, rng);
    a = scaled_to(a, [&](const LocalOperator& o) { return mu_norm(o, mu + dmu_capped); },
                  rng.uniform(0.1, 1.0) * dmu_capped / 6);
    std::vector<LocalOperator> b_seq;
    const int len = 2 + rng.uniform_int(3);
    for (int i = 0; i < len; ++i) b_seq.push_back(random_local_operator(sys, rng));
    return check_exponential_bound(a, b_seq, mu, mu + dmu_capped, std::move(inst));
  }
  if (name == "anchored_exponential_bound") {
    LocalOperator a = random_local_operator(sys, rng);
    a = scaled_to(a, [&](const LocalOperator& o) { return mu_norm(o, mu + dmu); },
                  rng.uniform(0.1, 1.0) * dmu / 2);
    LocalOperator b = random_local_operator(sys, rng);
    const int anchor = rng.uniform_int(sys->num_sites());
    return check_anchored_exponential_bound(a, b, mu, mu + dmu, anchor, std::move(inst));
  }
  if (name == "generator_identity") {
    LocalOperator f = random_frustration_free(sys, rng);
    f = scaled_to(f, [&](const LocalOperator& o) { return mu_norm(o, 0.0); },
                  rng.uniform(0.0, 0.2) * g);
    LocalOperator v = Complex(1e-3, 0) * random_nondiagonal(sys, rng, rng.uniform_int(2) == 0);
    return check_generator_identity(f, v, mu, std::move(inst));
  }
  throw SchemaError("check", "unknown check name: " + name);
}

inline const std::vector<std::string>& suite_check_names() {
  static const std::vector<std::string> names = {
      "gap_stability",          "generator_bound",    "commutator_bound",
      "exponential_bound",      "anchored_exponential_bound", "generator_identity"};
  return names;
}

// Runs `count` seeded instances of one named check. Hypothesis-violating
// draws are re-rolled (they are skipped instances, not failures); the salt
// keeps re-rolls deterministic.
inline std::vector<CheckReport> run_check_suite(const std::string& name,
                                                const SuiteOptions& opt) {
  std::vector<CheckReport> out;
  out.reserve(opt.count);
  Rng master = Rng::seeded(opt.seed);
  for (int i = 0; i < opt.count; ++i) {
    const bool corrupt = opt.inject_failure && i == opt.count / 2;
    for (std::uint64_t salt = 0;; ++salt) {
      const std::uint64_t seed = master.derive(static_cast<std::uint64_t>(i) * 1009 + salt).bits();
      try {
        out.push_back(run_random_check(name, seed, corrupt));
        break;
      } catch (const HypothesisViolated&) {
        if (salt > 64) throw;  // generator parameters are off if this ever triggers
      }
    }
  }
  return out;
}

}  // namespace spinkam
