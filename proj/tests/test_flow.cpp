// The conjugation flow: decay schedule, smallness condition, reduced
// resolvents, generator construction, single steps in both modes, and full
// runs checked against dense conjugation and eigensolver oracles.

#include <catch2/catch_amalgamated.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "spinkam/flow.hpp"
#include "spinkam/random_ops.hpp"
#include "test_util.hpp"

using namespace spinkam;
using namespace spinkam_test;

namespace {

// Dense adapted-basis matrix of H_0 + d + F + V for oracle conjugations.
MatrixXcd dense_hamiltonian(const LocalOperator& h0, const FlowState& s) {
  const auto& sys = h0.system();
  const long n = sys->dense_dim(sys->all_sites());
  return sys->h0_dense() + s.d * MatrixXcd::Identity(n, n) +
         assemble(s.f + s.v, BlockBasis::Adapted);
}

LocalOperator chain_perturbation(const std::shared_ptr<const System>& sys, double eps,
                                 const MatrixXcd& bond) {
  LocalOperator h_prime(sys);
  for (int x = 0; x + 1 < sys->num_sites(); ++x) {
    LocalOperator term = decompose(sys, bond, {x, x + 1});
    h_prime = h_prime + Complex(eps, 0) * term;
  }
  return h_prime;
}

}  // namespace

TEST_CASE("decay schedule starts at kappa_prime and decreases towards kappa") {
  DecaySchedule s{1.0, 2.0};
  CHECK(s.rate(1) == 2.0);
  CHECK(s.rate(2) == 1.5);
  CHECK(s.delta(2) == Catch::Approx(0.5));
  double prev = s.rate(1);
  for (int n = 2; n <= 200; ++n) {
    CHECK(s.rate(n) < prev);
    CHECK(s.rate(n) > s.kappa);
    CHECK(s.delta(n) == Catch::Approx(s.rate(n - 1) - s.rate(n)));
    prev = s.rate(n);
  }
  CHECK(s.rate(100000) == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("flow config validation") {
  FlowConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.kappa = 0.5;  // below log 2
  CHECK_THROWS_AS(cfg.validate(), SchemaError);
  cfg = FlowConfig{};
  cfg.kappa_prime = cfg.kappa;
  CHECK_THROWS_AS(cfg.validate(), SchemaError);
  cfg = FlowConfig{};
  cfg.kappa_prime = cfg.kappa + 1.5;
  CHECK_THROWS_AS(cfg.validate(), SchemaError);
}

TEST_CASE("smallness condition matches the closed form") {
  auto sys = spin_chain(4);
  LocalOperator h0 = h0_operator(sys);
  const double kappa = std::log(2.0), kp = kappa + 0.5;

  SECTION("zero perturbation gives zero") {
    CHECK(check_condition(LocalOperator::zero(sys), h0, 1.0, kappa, kp) == 0.0);
  }

  SECTION("hand-scaled single-site perturbation") {
    // Scale so that the kappa' norm is exactly 1e-3; the site-term norm is
    // exp(2 kappa'), so the condition value is 1e-3 exp(2 kappa') / 0.25.
    const double c = 1e-3 * std::exp(-2 * kp);
    LocalOperator v = Complex(c, 0) * decompose(sys, sigma_plus(), {1});
    CHECK(check_condition(v, h0, 1.0, kappa, kp) ==
          Catch::Approx(4e-3 * std::exp(2 * kp)));
  }

  SECTION("doubling the gap quarters the value") {
    LocalOperator v = decompose(sys, sigma_plus(), {0});
    const double at1 = check_condition(v, h0, 1.0, kappa, kp);
    CHECK(check_condition(v, h0, 2.0, kappa, kp) == Catch::Approx(at1 / 4));
  }
}

TEST_CASE("reduced resolvent inverts off the ground state") {
  SECTION("single site without dressing is diag(0, 1/g)") {
    auto sys = spin_chain(1, 0.8);
    MatrixXcd r = reduced_resolvent(LocalOperator::zero(sys));
    MatrixXcd expected = MatrixXcd::Zero(2, 2);
    expected(1, 1) = 1.0 / 0.8;
    CHECK(max_abs_diff(r, expected) < 1e-14);
  }

  SECTION("product of sites inverts the excitation-energy sums") {
    auto sys = spin_chain(2, 1.0);
    MatrixXcd r = reduced_resolvent(LocalOperator::zero(sys));
    CHECK(r(0, 0) == Complex(0, 0));
    CHECK(std::abs(r(1, 1) - Complex(1.0, 0)) < 1e-14);       // site 1 excited
    CHECK(std::abs(r(2, 2) - Complex(1.0, 0)) < 1e-14);       // site 0 excited
    CHECK(std::abs(r(3, 3) - Complex(0.5, 0)) < 1e-14);       // both excited
  }

  SECTION("defining property holds for random dressed terms") {
    Rng rng = Rng::seeded(81);
    auto sys = spin_chain(3);
    for (int trial = 0; trial < 15; ++trial) {
      LocalOperator f = random_frustration_free(sys, rng);
      f = scaled_to(f, [](const LocalOperator& o) { return mu_norm(o, 0.0); }, 0.4);
      MatrixXcd r = reduced_resolvent(f);
      MatrixXcd hf = sys->h0_dense() + assemble(f, BlockBasis::Adapted);
      MatrixXcd pbar = MatrixXcd::Identity(8, 8);
      pbar(0, 0) = 0;
      CHECK(max_abs_diff(r * hf, pbar) < 1e-10);
      CHECK(max_abs_diff(hf * r, pbar) < 1e-10);
      CHECK(r.col(0).cwiseAbs().maxCoeff() == 0.0);
      CHECK(r.row(0).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SECTION("non-diagonal input is rejected") {
    auto sys = spin_chain(2);
    CHECK_THROWS_AS(reduced_resolvent(decompose(sys, sigma_plus(), {0})), NotFrustrationFree);
  }

  SECTION("a dressing that closes the gap is reported") {
    auto sys = spin_chain(2);
    MatrixXcd cancel = MatrixXcd::Zero(2, 2);
    cancel(1, 1) = -1.0;  // cancels the site term entirely
    LocalOperator f = decompose(sys, cancel, {0});
    f.scalar() = 0;  // decompose leaves scalar -? keep the neutral part only
    CHECK_THROWS_AS(reduced_resolvent(classify(f).f), GapClosed);
  }
}

TEST_CASE("Neumann partial sums converge to the reduced resolvent") {
  Rng rng = Rng::seeded(91);
  auto sys = spin_chain(3);
  LocalOperator f = random_frustration_free(sys, rng);
  f = scaled_to(f, [](const LocalOperator& o) { return mu_norm(o, 0.0); }, 0.3);
  MatrixXcd exact = reduced_resolvent(f);

  SECTION("zero dressing is exact at order zero") {
    MatrixXcd r0 = resolvent_neumann(LocalOperator::zero(sys), 0);
    MatrixXcd rbig = resolvent_neumann(LocalOperator::zero(sys), 7);
    CHECK(max_abs_diff(r0, rbig) == 0.0);
    CHECK(max_abs_diff(r0, reduced_resolvent(LocalOperator::zero(sys))) < 1e-12);
  }

  SECTION("order 12 matches the dense inverse") {
    CHECK(max_abs_diff(resolvent_neumann(f, 12), exact) < 1e-8);
  }

  SECTION("successive orders contract at least geometrically") {
    const double bound = 2.0 * mu_norm(f, 0.0) / sys->gap();
    double prev = operator_norm(resolvent_neumann(f, 1) - resolvent_neumann(f, 0));
    for (int k = 2; k <= 6; ++k) {
      double cur = operator_norm(resolvent_neumann(f, k) - resolvent_neumann(f, k - 1));
      CHECK(cur <= bound * prev * 1.2);
      prev = cur;
    }
  }
}

TEST_CASE("generator construction matches the exact single-site algebra") {
  auto sys = spin_chain(1);
  MatrixXcd r = reduced_resolvent(LocalOperator::zero(sys));

  SECTION("pure raising perturbation") {
    const double eps = 1e-2;
    LocalOperator v = Complex(eps, 0) * decompose(sys, sigma_plus(), {0});
    LocalOperator a = build_generator(v, r);
    MatrixXcd expected = Complex(0, -1) * eps * sigma_plus();
    CHECK(max_abs_diff(assemble(a, BlockBasis::Adapted), expected) < 1e-15);
  }

  SECTION("transverse perturbation gives a Hermitian generator") {
    const double eps = 5e-3;
    LocalOperator v = Complex(eps, 0) * decompose(sys, sigma_x(), {0});
    LocalOperator a = build_generator(v, r);
    MatrixXcd expected = Complex(0, 1) * eps * sigma_minus() + Complex(0, -1) * eps * sigma_plus();
    MatrixXcd got = assemble(a, BlockBasis::Adapted);
    CHECK(max_abs_diff(got, expected) < 1e-15);
    CHECK(max_abs_diff(got, got.adjoint()) < 1e-15);
  }

  SECTION("zero input gives zero output") {
    CHECK(build_generator(LocalOperator::zero(sys), r).is_zero());
  }

  SECTION("dressed input is rejected") {
    LocalOperator f = decompose(sys, sigma_z(), {0});
    CHECK_THROWS_AS(build_generator(classify(f).f, r), NotNonDiagonal);
  }
}

TEST_CASE("the generator cancels the non-diagonal part to first order") {
  Rng rng = Rng::seeded(101);
  auto sys = spin_chain(3);
  LocalOperator h0 = h0_operator(sys);
  const double mu = std::log(2.0) + 0.3;

  for (int trial = 0; trial < 12; ++trial) {
    LocalOperator f = random_frustration_free(sys, rng);
    // Hermitian instances exercise the self-adjoint branch: a Hermitian V
    // and F must give a Hermitian generator.
    if (trial % 2 == 0) f = Complex(0.5, 0) * (f + adjoint_op(f));
    f = scaled_to(f, [](const LocalOperator& o) { return mu_norm(o, 0.0); }, 0.1);
    LocalOperator v = Complex(1e-3, 0) * random_nondiagonal(sys, rng, trial % 2 == 0);

    MatrixXcd r = reduced_resolvent(f);
    LocalOperator a = build_generator(v, r);

    LocalOperator c = Complex(0, 1) * commutator(a, h0 + f);
    LocalOperator residual = v + classify(c).v();
    CHECK(mu_norm_primed(residual, mu) < 1e-10 * mu_norm_primed(v, mu));

    if (trial % 2 == 0) {
      MatrixXcd ad = assemble(a, BlockBasis::Adapted);
      CHECK(max_abs_diff(ad, ad.adjoint()) < 1e-14);
    }
  }
}

TEST_CASE("one flow step terminates the single-site raising example exactly") {
  auto sys = spin_chain(1);
  LocalOperator h0 = h0_operator(sys);
  LocalOperator h_prime = Complex(1e-2, 0) * decompose(sys, sigma_plus(), {0});

  FlowConfig cfg;
  FlowState s1 = initial_flow_state(h_prime, cfg);
  StepOutcome out = flow_step(s1, cfg, h0);

  CHECK(std::abs(out.next.d) < 1e-15);
  CHECK(mu_norm(out.next.f, 0.0) < 1e-15);
  CHECK(mu_norm(out.next.v, 0.0) < 1e-15);
  CHECK(out.lemma2_residual < 1e-12);

  // The generator is nilpotent, so the exponential truncates after one term
  // and the conjugated matrix returns to the unperturbed site term.
  MatrixXcd ad = assemble(out.a, BlockBasis::Adapted);
  MatrixXcd u = (Complex(0, 1) * ad).exp();
  MatrixXcd expected_u = MatrixXcd::Identity(2, 2) + 1e-2 * sigma_plus();
  CHECK(max_abs_diff(u, expected_u) < 1e-15);
}

TEST_CASE("a constant perturbation converges without any generator") {
  auto sys = spin_chain(2);
  LocalOperator h0 = h0_operator(sys);
  LocalOperator h_prime = LocalOperator::scalar_multiple(sys, Complex(0.25, -0.1));
  FlowResult res = run_flow(h_prime, h0, FlowConfig{});
  CHECK(res.converged);
  CHECK(res.state.n == 1);
  CHECK(res.u.generators.empty());
  CHECK(res.state.d == Complex(0.25, -0.1));
  CHECK(res.state.f.sectors().empty());
}

TEST_CASE("one step contracts a two-site transverse perturbation quadratically") {
  auto sys = spin_chain(2);
  LocalOperator h0 = h0_operator(sys);
  const double eps = 1e-2;
  LocalOperator h_prime = chain_perturbation(sys, eps, kron(sigma_x(), sigma_x()));

  FlowConfig cfg;
  FlowState s1 = initial_flow_state(h_prime, cfg);
  StepOutcome out = flow_step(s1, cfg, h0);

  const DecaySchedule sched = cfg.schedule();
  const double v1 = mu_norm(s1.v, sched.rate(2));
  const double v2 = mu_norm(out.next.v, sched.rate(4));
  CHECK(v2 > 0);
  CHECK(v2 < 20 * eps * v1);  // quadratic smallness, generous constant

  // Dense conjugation oracle for the full next Hamiltonian.
  MatrixXcd ad = assemble(out.a, BlockBasis::Adapted);
  MatrixXcd h1 = dense_hamiltonian(h0, s1);
  MatrixXcd oracle = (Complex(0, 1) * ad).exp() * h1 * (Complex(0, -1) * ad).exp();
  CHECK(max_abs_diff(dense_hamiltonian(h0, out.next), oracle) < 1e-12);
}

TEST_CASE("dense and series modes agree on the next Hamiltonian") {
  auto sys = spin_chain(2);
  LocalOperator h0 = h0_operator(sys);
  // The certified expansion demands a generator below (mu'-mu)/6, which at
  // these rates means a genuinely weak perturbation.
  LocalOperator h_prime = chain_perturbation(sys, 1e-5, kron(sigma_x(), sigma_x()));

  FlowConfig dense_cfg;
  FlowConfig series_cfg;
  series_cfg.mode = FlowMode::Series;

  FlowState s = initial_flow_state(h_prime, dense_cfg);
  StepOutcome dense_out = flow_step(s, dense_cfg, h0);
  StepOutcome series_out = flow_step(s, series_cfg, h0);

  CHECK(max_abs_diff(dense_hamiltonian(h0, dense_out.next),
                     dense_hamiltonian(h0, series_out.next)) < 1e-9);
  CHECK(series_out.series_tail < series_cfg.series_tail_tol);
  CHECK(series_out.series_tail > 0);

  SECTION("a strong perturbation trips the certified-expansion guard") {
    LocalOperator strong = chain_perturbation(sys, 0.4, kron(sigma_x(), sigma_x()));
    FlowState s_strong = initial_flow_state(strong, series_cfg);
    CHECK_THROWS_AS(flow_step(s_strong, series_cfg, h0), GeneratorTooLarge);
    CHECK_NOTHROW(flow_step(s_strong, dense_cfg, h0));
  }
}

TEST_CASE("four-site transverse chain converges with preserved spectrum") {
  auto sys = spin_chain(4);
  LocalOperator h0 = h0_operator(sys);
  LocalOperator h_prime = chain_perturbation(sys, 1e-3, kron(sigma_x(), sigma_x()));

  FlowConfig cfg;
  FlowResult res = run_flow(h_prime, h0, cfg);
  REQUIRE(res.converged);
  CHECK(res.u.self_adjoint);
  CHECK(res.diagnostics.size() <= 10);

  SECTION("the non-diagonal part decreases monotonically below 1e-10 by row 5") {
    double prev = std::numeric_limits<double>::infinity();
    for (const IterationStats& row : res.diagnostics) {
      CHECK(row.v < prev);
      prev = row.v;
      if (row.n == 5) CHECK(row.v < 1e-10);
    }
    CHECK(res.diagnostics.back().v < cfg.v_tol);
  }

  SECTION("measured remainder decays at least like the fourth power") {
    const double e1 = res.diagnostics.front().e;
    for (const IterationStats& row : res.diagnostics) {
      CHECK(row.e <= e1 / std::pow(row.n, 4) * (1 + 1e-9));
    }
  }

  SECTION("an admissible instance also keeps the dressed part below g/8") {
    // The eighth-of-a-gap bound is the induction invariant, guaranteed only
    // when the smallness value is below threshold; that needs a much weaker
    // perturbation at these rates.
    LocalOperator weak = chain_perturbation(sys, 2e-7, kron(sigma_x(), sigma_x()));
    FlowResult wres = run_flow(weak, h0, cfg);
    CHECK(wres.epsilon_value <= cfg.epsilon_threshold);
    CHECK(wres.epsilon_admissible);
    const double e1 = wres.diagnostics.front().e;
    for (const IterationStats& row : wres.diagnostics) {
      CHECK(row.e <= e1 / std::pow(row.n, 4) * (1 + 1e-9));
      CHECK(row.f <= sys->gap() / 8);
    }
  }

  SECTION("the final Hamiltonian is similar to the original") {
    LocalOperator hf = res.h_f(h0);
    MatrixXcd hf_d = assemble(hf, BlockBasis::Adapted);
    MatrixXcd h1_d = sys->h0_dense() + assemble(h_prime, BlockBasis::Adapted);
    MatrixXcd u = res.u.dense(false);
    MatrixXcd u_inv = res.u.dense(true);
    CHECK(max_abs_diff(u * u.adjoint(), MatrixXcd::Identity(16, 16)) < 1e-8);
    CHECK(max_abs_diff(u_inv * h1_d * u, hf_d) < 1e-9);
    CHECK(spectrum_distance(hf_d, h1_d) < 1e-8);
  }

  SECTION("the dressed ground vector matches the dense ground state") {
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(sys->h0_dense() +
                                                assemble(h_prime, BlockBasis::Adapted));
    VectorXcd ground = es.eigenvectors().col(0);
    VectorXcd omega = VectorXcd::Zero(16);
    omega(0) = 1;
    VectorXcd dressed = res.u.dense(false) * omega;
    CHECK(std::abs(1.0 - std::abs(ground.dot(dressed))) < 1e-8);
  }

  SECTION("generator norms at the limit rate are summable and recorded") {
    CHECK(res.sum_a_kappa > 0);
    double manual = 0;
    for (const LocalOperator& a : res.u.generators) manual += mu_norm(a, cfg.kappa);
    CHECK(res.sum_a_kappa == Catch::Approx(manual));
  }
}

TEST_CASE("a nilpotent double-raising perturbation terminates in one step") {
  auto sys = spin_chain(4);
  LocalOperator h0 = h0_operator(sys);
  LocalOperator h_prime = chain_perturbation(sys, 1e-3, kron(sigma_plus(), sigma_plus()));

  FlowResult res = run_flow(h_prime, h0, FlowConfig{});
  REQUIRE(res.converged);
  CHECK_FALSE(res.u.self_adjoint);
  CHECK(res.state.n == 2);
  CHECK(std::abs(res.state.d) < 1e-14);
  CHECK(mu_norm(res.state.f, 0.0) < 1e-13);

  // Nilpotent perturbations leave the spectrum of the free part untouched;
  // the accumulated shift is the simple eigenvalue of smallest real part.
  MatrixXcd h1_d = sys->h0_dense() + assemble(h_prime, BlockBasis::Adapted);
  auto spec = sorted_spectrum(h1_d);
  CHECK(std::abs(spec.front() - res.state.d) < 1e-10);
  CHECK(std::abs(spec[1] - spec[0]) > 0.5);  // simple: next eigenvalue a gap away
}

TEST_CASE("budget exhaustion reports honestly instead of converging") {
  auto sys = spin_chain(3);
  LocalOperator h0 = h0_operator(sys);
  LocalOperator h_prime = chain_perturbation(sys, 1e-2, kron(sigma_x(), sigma_x()));
  FlowConfig cfg;
  cfg.n_max = 1;

  FlowResult partial = run_flow_partial(h_prime, h0, cfg);
  CHECK_FALSE(partial.converged);
  CHECK(partial.u.generators.size() == 1);
  CHECK(partial.diagnostics.size() == 2);
  CHECK_THROWS_AS(run_flow(h_prime, h0, cfg), NotConverged);
}

TEST_CASE("dressing application preserves identity and inverts cleanly") {
  auto sys = spin_chain(3);
  LocalOperator h0 = h0_operator(sys);
  LocalOperator h_prime = chain_perturbation(sys, 5e-3, kron(sigma_x(), sigma_x()));
  FlowResult res = run_flow(h_prime, h0, FlowConfig{});

  SECTION("identity is fixed") {
    LocalOperator one = LocalOperator::scalar_multiple(sys, Complex(1, 0));
    LocalOperator moved = apply_dressing(res.u, one);
    CHECK(moved.scalar() == Complex(1, 0));
    CHECK(mu_norm_primed(moved, 0.0) < 1e-12);
  }

  SECTION("empty transform is a no-op") {
    DressingTransform empty{sys, {}, true};
    LocalOperator op = decompose(sys, sigma_x(), {1});
    LocalOperator moved = apply_dressing(empty, op);
    CHECK(max_abs_diff(assemble(moved), assemble(op)) == 0.0);
  }

  SECTION("forward and inverse conjugations cancel") {
    Rng rng = Rng::seeded(111);
    LocalOperator op = random_local_operator(sys, rng);
    LocalOperator round = apply_dressing(res.u, apply_dressing(res.u, op, false), true);
    CHECK(max_abs_diff(assemble(round), assemble(op)) < 1e-11);
  }
}

TEST_CASE("snapshots resume to the same flow result") {
  auto sys = spin_chain(3);
  LocalOperator h0 = h0_operator(sys);
  LocalOperator h_prime = chain_perturbation(sys, 1e-3, kron(sigma_x(), sigma_x()));

  FlowConfig cfg;
  FlowResult full = run_flow(h_prime, h0, cfg);

  FlowConfig truncated = cfg;
  truncated.n_max = 1;
  FlowResult part = run_flow_partial(h_prime, h0, truncated);
  REQUIRE_FALSE(part.converged);
  // Budget exhaustion appends a final diagnostic row for the unstepped state;
  // drop it so the resumed run re-evaluates that row.
  part.diagnostics.pop_back();

  const std::string wire = to_json(part).dump();
  FlowResult restored = flow_result_from_json(json::parse(wire), sys);
  FlowResult resumed = continue_flow(h0, std::move(restored), cfg);

  REQUIRE(resumed.converged);
  CHECK(resumed.state.n == full.state.n);
  CHECK(resumed.state.d == full.state.d);
  CHECK(resumed.diagnostics.size() == full.diagnostics.size());
  for (std::size_t i = 0; i < full.diagnostics.size(); ++i) {
    CHECK(resumed.diagnostics[i].v == full.diagnostics[i].v);
    CHECK(resumed.diagnostics[i].e == full.diagnostics[i].e);
  }
  CHECK(max_abs_diff(assemble(resumed.state.f), assemble(full.state.f)) == 0.0);
}
