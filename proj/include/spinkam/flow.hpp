// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// The iterative conjugation that removes the non-diagonal part of a weak
// perturbation. Each step builds a generator A from the current V and the
// reduced resolvent of H_0 + F, conjugates H by exp(iA), and re-sorts the
// result into scalar, dressed (frustration-free), and non-diagonal parts.
// The non-diagonal part shrinks quadratically; the generators decay fast
// enough that the product of exponentials converges.
//
// Two evaluation modes: "dense" conjugates the full matrix with an exact
// matrix exponential; "series" evaluates the nested-commutator expansion of
// the second-order remainder directly in sector algebra and certifies the
// truncated tail with a factorial bound in dense operator norm.

#pragma once

#include <optional>
#include <unsupported/Eigen/MatrixFunctions>
#include <vector>

#include "spinkam/norms.hpp"
#include "spinkam/serialize.hpp"

namespace spinkam {

// Strictly decreasing rates kappa_n = kappa + (kappa' - kappa)/n running from
// kappa_1 = kappa' down towards kappa.
struct DecaySchedule {
  double kappa = 0, kappa_prime = 0;

  double rate(int n) const { return kappa + (kappa_prime - kappa) / n; }

  // delta_n = kappa_{n-1} - kappa_n, defined for n >= 2.
  double delta(int n) const { return (kappa_prime - kappa) / (static_cast<double>(n - 1) * n); }
};

enum class FlowMode { Dense, Series };

struct FlowConfig {
  double kappa = std::log(2.0);
  double kappa_prime = std::log(2.0) + 0.5;
  double v_tol = 1e-12;
  int n_max = 30;
  FlowMode mode = FlowMode::Dense;
  int series_k_max = 20;
  double series_tail_tol = 1e-13;
  double epsilon_threshold = 1e-2;
  double drop_threshold = -1;  // negative: use the system default

  DecaySchedule schedule() const { return DecaySchedule{kappa, kappa_prime}; }

  void validate() const {
    if (!(kappa >= std::log(2.0) - 1e-12)) throw SchemaError("kappa", "must be at least log 2");
    if (!(kappa_prime > kappa)) throw SchemaError("kappa_prime", "must exceed kappa");
    if (!(kappa_prime - kappa <= 1 + 1e-12))
      throw SchemaError("kappa_prime", "must not exceed kappa + 1");
    if (!(v_tol > 0)) throw SchemaError("v_tol", "must be positive");
    if (n_max < 1) throw SchemaError("n_max", "must be at least 1");
    if (series_k_max < 1) throw SchemaError("series_k_max", "must be at least 1");
  }
};

// Diagnostics of one iteration, all norms taken at rate kappa_{2n} (the
// initial e_1 at kappa').
struct IterationStats {
  int n = 0;
  double kappa_2n = 0;
  double e = 0, f = 0, v = 0, a = 0;
  Complex d{0, 0};       // accumulated scalar shift
  double d_density = 0;  // |d| per site
  double drop_budget = 0;
  double lemma2_residual = 0;   // relative, only when a generator was built
  double series_tail = 0;       // certified truncation bound, series mode
};

struct FlowState {
  int n = 1;
  Complex d{0, 0};
  LocalOperator f, v;
  double e = 0;  // current e_n diagnostic
};

// Ordered generators of U = exp(-iA_1) exp(-iA_2) ... exp(-iA_N).
struct DressingTransform {
  std::shared_ptr<const System> system;
  std::vector<LocalOperator> generators;
  bool self_adjoint = false;

  // Dense product in the adapted basis; inverse multiplies exp(+iA_k) in
  // reverse order.
  MatrixXcd dense(bool inverse = false) const {
    const long n = system->dense_dim(system->all_sites());
    MatrixXcd u = MatrixXcd::Identity(n, n);
    if (!inverse) {
      for (const LocalOperator& a : generators) {
        MatrixXcd ia = Complex(0, -1) * assemble(a, BlockBasis::Adapted);
        u = u * ia.exp();
      }
    } else {
      for (auto it = generators.rbegin(); it != generators.rend(); ++it) {
        MatrixXcd ia = Complex(0, 1) * assemble(*it, BlockBasis::Adapted);
        u = u * ia.exp();
      }
    }
    return u;
  }
};

// Dimensionless smallness parameter: ||H'|| ||H_0|| / (g^2 (kappa'-kappa)^2),
// both norms at rate kappa'. The flow may converge above any fixed threshold;
// callers treat the threshold as an admissibility warning, not a refusal.
inline double check_condition(const LocalOperator& h_prime, const LocalOperator& h0, double g,
                              double kappa, double kappa_prime) {
  const double dk = kappa_prime - kappa;
  return mu_norm(h_prime, kappa_prime) * mu_norm(h0, kappa_prime) / (g * g * dk * dk);
}

namespace detail {

// Inverts the minor of m with the ground row and column deleted and embeds
// the inverse back with zeros on the ground coordinates.
inline MatrixXcd reduced_inverse(const MatrixXcd& m, const char* what) {
  const long n = m.rows();
  MatrixXcd minor(n - 1, n - 1);
  minor = m.block(1, 1, n - 1, n - 1);
  Eigen::FullPivLU<MatrixXcd> lu(minor);
  if (!lu.isInvertible())
    throw GapClosed(std::string(what) + ": restricted operator is numerically singular");
  MatrixXcd inv = lu.inverse();
  MatrixXcd out = MatrixXcd::Zero(n, n);
  out.block(1, 1, n - 1, n - 1) = inv;
  return out;
}

}  // namespace detail

// Reduced resolvent R of H_0 + F at the simple eigenvalue 0:
// R (H_0+F) = (H_0+F) R = 1 - |ground><ground|, R annihilating the ground
// coordinate. Dense in the adapted basis of the full volume.
inline MatrixXcd reduced_resolvent(const LocalOperator& f_op) {
  Classified parts = classify(f_op);
  if (!parts.v_plus.sectors().empty() || !parts.v_minus.sectors().empty() ||
      std::abs(parts.d) > 0)
    throw NotFrustrationFree("reduced resolvent needs a frustration-free perturbation");
  const auto& sys = f_op.system();
  MatrixXcd m = sys->h0_dense() + assemble(f_op, BlockBasis::Adapted);
  return detail::reduced_inverse(m, "reduced_resolvent");
}

// Partial sum sum_{j<=k} R' (-F R')^j with R' the reduced inverse of H_0
// alone. Converges to reduced_resolvent(F) geometrically in ||F||_0 / gap.
inline MatrixXcd resolvent_neumann(const LocalOperator& f_op, int order) {
  const auto& sys = f_op.system();
  MatrixXcd r0 = detail::reduced_inverse(sys->h0_dense(), "resolvent_neumann");
  MatrixXcd fd = assemble(f_op, BlockBasis::Adapted);
  MatrixXcd term = r0;
  MatrixXcd sum = r0;
  for (int j = 1; j <= order; ++j) {
    term = term * (-fd * r0);
    sum += term;
  }
  return sum;
}

// A = i (annihilation part of V R) - i (creation part of R V). Solves
// V + i (non-diagonal part of [A, H_0 + F]) = 0, and is Hermitian whenever
// V is.
inline LocalOperator build_generator(const LocalOperator& v_op, const MatrixXcd& r) {
  Classified parts = classify(v_op);
  if (!parts.f.sectors().empty() || std::abs(parts.d) > 0)
    throw NotNonDiagonal("generator input must have no scalar or dressed part");
  const auto& sys = v_op.system();
  const SiteSet all = sys->all_sites();
  MatrixXcd vd = assemble(v_op, BlockBasis::Adapted);
  LocalOperator vr = decompose(sys, vd * r, all, BlockBasis::Adapted);
  LocalOperator rv = decompose(sys, r * vd, all, BlockBasis::Adapted);
  LocalOperator a =
      Complex(0, 1) * classify(vr).v_minus + Complex(0, -1) * classify(rv).v_plus;
  a.prune(sys->drop_threshold());
  return a;
}

struct StepOutcome {
  FlowState next;
  LocalOperator a;
  double a_norm = 0;            // at rate kappa_{2n}
  double lemma2_residual = 0;   // relative
  double series_tail = 0;       // certified bound on the dropped series tail
};

namespace detail {

// Nested-commutator series E = sum_{k>=1} ad_{iA}^k (C/(k+1) + V) / k!,
// evaluated term by term in sector algebra. The dropped tail is certified
// by the dense-norm factorial bound ||ad_{iA}^k B|| <= (2||A||)^k ||B||.
inline LocalOperator series_remainder(const LocalOperator& a, const LocalOperator& c,
                                      const LocalOperator& v, const FlowConfig& cfg,
                                      double diag_rate, double drop, double& tail_bound) {
  const auto& sys = a.system();
  LocalOperator ia = Complex(0, 1) * a;
  LocalOperator e = LocalOperator::zero(sys);
  LocalOperator x = v;  // ad^k V / k!
  LocalOperator y = c;  // ad^k C / k!
  const double a_dense = operator_norm(assemble(a, BlockBasis::Adapted));
  const double c_dense = operator_norm(assemble(c, BlockBasis::Adapted));
  const double v_dense = operator_norm(assemble(v, BlockBasis::Adapted));

  int k = 0;
  double factor = 1.0;  // (2 a_dense)^k / k!
  while (true) {
    ++k;
    factor *= 2.0 * a_dense / k;
    x = Complex(1.0 / k, 0) * commutator(ia, x, drop);
    y = Complex(1.0 / k, 0) * commutator(ia, y, drop);
    e = e + x + Complex(1.0 / (k + 1), 0) * y;
    e.prune(drop);

    // Tail of the factorial series beyond k, evaluated without cancellation:
    // sum_{j>k} (2a)^j / j! <= factor * sum_{i>=1} (2a)^i / (k+1)^i while
    // 2a < k+1; otherwise keep iterating.
    const double ratio = 2.0 * a_dense / (k + 1);
    if (ratio < 1.0) {
      const double geo = factor * ratio / (1.0 - ratio);
      tail_bound = geo * (v_dense + c_dense / (k + 2));
      const double term_size =
          mu_norm(x, diag_rate) + mu_norm(y, diag_rate) / (k + 1);
      if (tail_bound < cfg.series_tail_tol && term_size < cfg.series_tail_tol) return e;
    }
    if (k >= cfg.series_k_max)
      throw NotConverged("nested-commutator series not certified below tolerance at k_max");
  }
}

}  // namespace detail

// One conjugation step at index state.n. Needs the sum of local terms both
// as a sector operator and densely (cached on the System).
inline StepOutcome flow_step(const FlowState& state, const FlowConfig& cfg,
                             const LocalOperator& h0_op) {
  const auto& sys = h0_op.system();
  const DecaySchedule sched = cfg.schedule();
  const int n = state.n;
  const double drop = cfg.drop_threshold < 0 ? sys->drop_threshold() : cfg.drop_threshold;
  const double rate_2n = sched.rate(2 * n);
  const double rate_next = sched.rate(2 * (n + 1));

  StepOutcome out;
  MatrixXcd r = reduced_resolvent(state.f);
  out.a = build_generator(state.v, r);
  out.a_norm = mu_norm(out.a, rate_2n);

  // First-order term C = i [A, H_0 + F]; its non-diagonal part cancels V.
  LocalOperator h0f = h0_op + state.f;
  LocalOperator c = Complex(0, 1) * commutator(out.a, h0f, drop);
  {
    LocalOperator residual = state.v + classify(c).v();
    const double vnorm = mu_norm_primed(state.v, rate_2n);
    out.lemma2_residual =
        vnorm > 0 ? mu_norm_primed(residual, rate_2n) / vnorm : mu_norm_primed(residual, rate_2n);
  }

  LocalOperator e_op(sys);
  if (cfg.mode == FlowMode::Series) {
    // Certified expansion requires the generator small against the rate gap.
    const double hypothesis = sched.delta(2 * (n + 1)) / 6.0;
    if (mu_norm(out.a, sched.rate(2 * n + 1)) > hypothesis)
      throw GeneratorTooLarge(
          "generator exceeds the certified-expansion hypothesis; use dense mode");
    e_op = detail::series_remainder(out.a, c, state.v, cfg, rate_next, drop, out.series_tail);
  } else {
    // Exact conjugation, then subtract the terms already accounted for:
    // E = e^{iA} H e^{-iA} - (H_0 + d + F + V + C).
    MatrixXcd ad = assemble(out.a, BlockBasis::Adapted);
    MatrixXcd exp_plus = (Complex(0, 1) * ad).exp();
    MatrixXcd exp_minus = (Complex(0, -1) * ad).exp();
    const long dim = ad.rows();
    MatrixXcd hd = sys->h0_dense() + state.d * MatrixXcd::Identity(dim, dim) +
                   assemble(state.f + state.v, BlockBasis::Adapted);
    MatrixXcd hnext = exp_plus * hd * exp_minus;
    MatrixXcd ed = hnext - hd - assemble(c, BlockBasis::Adapted);
    e_op = decompose(sys, ed, sys->all_sites(), BlockBasis::Adapted, drop);
  }

  // H_{n+1} = H_0 + d + F + (C + V + E): re-sort the bracket. C + V has no
  // non-diagonal part up to the identity residual, which stays in V to keep
  // the similarity exact.
  LocalOperator s = c + state.v + e_op;
  s.prune(drop);
  Classified sorted = classify(s);

  out.next.n = n + 1;
  out.next.d = state.d + sorted.d;
  out.next.f = state.f + sorted.f;
  out.next.f.prune(drop);
  out.next.v = sorted.v();
  out.next.v.prune(drop);
  out.next.e = mu_norm(e_op, rate_next);
  return out;
}

struct FlowResult {
  FlowState state;  // state after the last completed step
  DressingTransform u;
  std::vector<IterationStats> diagnostics;
  bool converged = false;
  double epsilon_value = 0;
  bool epsilon_admissible = true;
  double sum_a_kappa = 0;  // sum over steps of ||A_n|| at the limit rate kappa

  // H_F = H_0 + d + F once converged.
  LocalOperator h_f(const LocalOperator& h0_op) const {
    LocalOperator out = h0_op + state.f;
    out.scalar() += state.d;
    return out;
  }
};

inline FlowState initial_flow_state(const LocalOperator& h_prime, const FlowConfig& cfg) {
  Classified parts = classify(h_prime);
  FlowState s;
  s.n = 1;
  s.d = parts.d;
  s.f = parts.f;
  s.v = parts.v();
  s.e = mu_norm(h_prime, cfg.kappa_prime);
  return s;
}

namespace detail {

inline IterationStats row_for(const FlowState& s, const DecaySchedule& sched, int volume) {
  IterationStats row;
  row.n = s.n;
  row.kappa_2n = sched.rate(2 * s.n);
  row.e = s.e;
  row.f = mu_norm(s.f, row.kappa_2n);
  row.v = mu_norm(s.v, row.kappa_2n);
  row.d = s.d;
  row.d_density = std::abs(s.d) / volume;
  row.drop_budget = s.f.dropped_norm() + s.v.dropped_norm();
  return row;
}

inline bool dense_hermitian(const LocalOperator& op) {
  MatrixXcd m = assemble(op, BlockBasis::Adapted);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.adjoint()).cwiseAbs().maxCoeff() < 1e-12 * scale;
}

}  // namespace detail

// Runs the iteration from a given state (fresh or resumed) until the
// non-diagonal norm falls below v_tol or n_max is exhausted.
inline FlowResult continue_flow(const LocalOperator& h0_op, FlowResult prior,
                                const FlowConfig& cfg) {
  cfg.validate();
  const auto& sys = h0_op.system();
  const DecaySchedule sched = cfg.schedule();
  FlowResult res = std::move(prior);

  while (true) {
    FlowState& s = res.state;
    IterationStats row = detail::row_for(s, sched, sys->num_sites());
    if (row.v < cfg.v_tol) {
      res.diagnostics.push_back(row);
      res.converged = true;
      return res;
    }
    if (s.n > cfg.n_max) {
      res.diagnostics.push_back(row);
      res.converged = false;
      return res;
    }

    StepOutcome step = flow_step(s, cfg, h0_op);
    row.a = step.a_norm;
    row.lemma2_residual = step.lemma2_residual;
    row.series_tail = step.series_tail;
    res.diagnostics.push_back(row);

    res.sum_a_kappa += mu_norm(step.a, cfg.kappa);
    if (res.u.self_adjoint && !detail::dense_hermitian(step.a)) res.u.self_adjoint = false;
    res.u.generators.push_back(std::move(step.a));
    res.state = std::move(step.next);
  }
}

// Like run_flow but reports budget exhaustion through the converged flag
// instead of throwing, so partial diagnostics stay available.
inline FlowResult run_flow_partial(const LocalOperator& h_prime, const LocalOperator& h0_op,
                                   const FlowConfig& cfg) {
  cfg.validate();
  const auto& sys = h0_op.system();
  FlowResult res;
  res.state = initial_flow_state(h_prime, cfg);
  res.u.system = sys;
  res.u.self_adjoint = detail::dense_hermitian(h_prime) && detail::dense_hermitian(h0_op);
  res.epsilon_value = check_condition(h_prime, h0_op, sys->gap(), cfg.kappa, cfg.kappa_prime);
  res.epsilon_admissible = res.epsilon_value <= cfg.epsilon_threshold;
  return continue_flow(h0_op, std::move(res), cfg);
}

inline FlowResult run_flow(const LocalOperator& h_prime, const LocalOperator& h0_op,
                           const FlowConfig& cfg) {
  FlowResult res = run_flow_partial(h_prime, h0_op, cfg);
  if (!res.converged)
    throw NotConverged("iteration budget exhausted with the non-diagonal part above v_tol");
  return res;
}

// Conjugation of an observable by the dressing: U^{-1} O U, or U O U^{-1}
// with the inverse flag. Dense evaluation, re-decomposed into sectors.
inline LocalOperator apply_dressing(const DressingTransform& u, const LocalOperator& op,
                                    bool inverse = false) {
  const auto& sys = op.system();
  if (u.generators.empty()) return op;
  MatrixXcd ud = u.dense(false);
  MatrixXcd ud_inv = u.dense(true);
  MatrixXcd od = assemble(op, BlockBasis::Adapted);
  MatrixXcd res = inverse ? ud * od * ud_inv : ud_inv * od * ud;
  return decompose(sys, res, sys->all_sites(), BlockBasis::Adapted);
}

// ============================================================================
// JSON snapshots for resumable runs
// ============================================================================

inline FlowConfig flow_config_from_json(const json& j) {
  FlowConfig cfg;
  cfg.kappa = j.value("kappa", cfg.kappa);
  cfg.kappa_prime = j.value("kappa_prime", cfg.kappa_prime);
  cfg.v_tol = j.value("v_tol", cfg.v_tol);
  cfg.n_max = j.value("n_max", cfg.n_max);
  if (j.contains("mode")) {
    const std::string m = j.at("mode").get<std::string>();
    if (m == "dense")
      cfg.mode = FlowMode::Dense;
    else if (m == "series")
      cfg.mode = FlowMode::Series;
    else
      throw SchemaError("flow.mode", "must be 'dense' or 'series'");
  }
  cfg.series_k_max = j.value("series_k_max", cfg.series_k_max);
  cfg.series_tail_tol = j.value("series_tail_tol", cfg.series_tail_tol);
  cfg.epsilon_threshold = j.value("epsilon_threshold", cfg.epsilon_threshold);
  cfg.drop_threshold = j.value("drop_threshold", cfg.drop_threshold);
  cfg.validate();
  return cfg;
}

inline json to_json(const FlowConfig& cfg) {
  return json{{"kappa", cfg.kappa},
              {"kappa_prime", cfg.kappa_prime},
              {"v_tol", cfg.v_tol},
              {"n_max", cfg.n_max},
              {"mode", cfg.mode == FlowMode::Dense ? "dense" : "series"},
              {"series_k_max", cfg.series_k_max},
              {"series_tail_tol", cfg.series_tail_tol},
              {"epsilon_threshold", cfg.epsilon_threshold},
              {"drop_threshold", cfg.drop_threshold}};
}

inline json to_json(const IterationStats& r) {
  return json{{"n", r.n},
              {"kappa_2n", r.kappa_2n},
              {"e", r.e},
              {"f", r.f},
              {"v", r.v},
              {"a", r.a},
              {"d", to_json(r.d)},
              {"d_density", r.d_density},
              {"drop_budget", r.drop_budget},
              {"lemma2_residual", r.lemma2_residual},
              {"series_tail", r.series_tail}};
}

inline IterationStats iteration_stats_from_json(const json& j) {
  IterationStats r;
  r.n = j.at("n").get<int>();
  r.kappa_2n = j.at("kappa_2n").get<double>();
  r.e = j.at("e").get<double>();
  r.f = j.at("f").get<double>();
  r.v = j.at("v").get<double>();
  r.a = j.at("a").get<double>();
  r.d = complex_from_json(j.at("d"));
  r.d_density = j.at("d_density").get<double>();
  r.drop_budget = j.at("drop_budget").get<double>();
  r.lemma2_residual = j.value("lemma2_residual", 0.0);
  r.series_tail = j.value("series_tail", 0.0);
  return r;
}

inline json to_json(const FlowResult& res) {
  json gens = json::array();
  for (const LocalOperator& a : res.u.generators) gens.push_back(to_json(a));
  json rows = json::array();
  for (const IterationStats& r : res.diagnostics) rows.push_back(to_json(r));
  return json{{"state",
               json{{"n", res.state.n},
                    {"d", to_json(res.state.d)},
                    {"e", res.state.e},
                    {"f", to_json(res.state.f)},
                    {"v", to_json(res.state.v)}}},
              {"generators", std::move(gens)},
              {"self_adjoint", res.u.self_adjoint},
              {"diagnostics", std::move(rows)},
              {"converged", res.converged},
              {"epsilon_value", res.epsilon_value},
              {"epsilon_admissible", res.epsilon_admissible},
              {"sum_a_kappa", res.sum_a_kappa}};
}

inline FlowResult flow_result_from_json(const json& j, const std::shared_ptr<const System>& sys) {
  FlowResult res;
  const json& s = j.at("state");
  res.state.n = s.at("n").get<int>();
  res.state.d = complex_from_json(s.at("d"));
  res.state.e = s.at("e").get<double>();
  res.state.f = local_operator_from_json(s.at("f"), sys);
  res.state.v = local_operator_from_json(s.at("v"), sys);
  res.u.system = sys;
  res.u.self_adjoint = j.at("self_adjoint").get<bool>();
  for (const json& g : j.at("generators"))
    res.u.generators.push_back(local_operator_from_json(g, sys));
  for (const json& r : j.at("diagnostics"))
    res.diagnostics.push_back(iteration_stats_from_json(r));
  res.converged = j.at("converged").get<bool>();
  res.epsilon_value = j.at("epsilon_value").get<double>();
  res.epsilon_admissible = j.at("epsilon_admissible").get<bool>();
  res.sum_a_kappa = j.at("sum_a_kappa").get<double>();
  return res;
}

}  // namespace spinkam
