// Sector decomposition, assembly, algebra, classification, and the JSON
// round trip. Dense oracles are built from raw Kronecker products in
// test_util.hpp, independent of the library's embedding code.

#include <catch2/catch_amalgamated.hpp>

#include "spinkam/local_operator.hpp"
#include "spinkam/norms.hpp"
#include "spinkam/random_ops.hpp"
#include "spinkam/serialize.hpp"
#include "test_util.hpp"

using namespace spinkam;
using namespace spinkam_test;

namespace {

MatrixXcd random_dense(int n, Rng& rng) {
  MatrixXcd m(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) m(r, c) = rng.complex_gaussian();
  return m;
}

}  // namespace

TEST_CASE("single-site split reproduces the textbook sector parts") {
  const SiteSpace site = spin_half_site();

  SECTION("sigma_x splits into pure raising and lowering parts") {
    SiteSplit s = site_split(sigma_x(), site);
    CHECK(std::abs(s.scalar) == 0.0);
    CHECK(max_abs_diff(s.plus, sigma_plus()) == 0.0);
    CHECK(max_abs_diff(s.minus, sigma_minus()) == 0.0);
    CHECK(s.neutral.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("sigma_z splits into a scalar and a neutral excited projector") {
    SiteSplit s = site_split(sigma_z(), site);
    CHECK(s.scalar == Complex(-1, 0));
    CHECK(s.plus.cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.minus.cwiseAbs().maxCoeff() == 0.0);
    MatrixXcd expected = MatrixXcd::Zero(2, 2);
    expected(1, 1) = 2.0;  // excited-excited entry minus the -1 ground share
    CHECK(max_abs_diff(s.neutral, expected) == 0.0);
  }

  SECTION("identity is pure scalar") {
    SiteSplit s = site_split(MatrixXcd::Identity(2, 2), site);
    CHECK(s.scalar == Complex(1, 0));
    CHECK(s.plus.cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.minus.cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.neutral.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("the four parts always sum back to the input") {
    MatrixXcd h3 = MatrixXcd::Zero(3, 3);
    h3(1, 1) = 1.0;
    h3(2, 2) = 2.0;
    const SiteSpace site3 = SiteSpace::from_local_term(h3);
    Rng rng = Rng::seeded(11);
    for (int trial = 0; trial < 25; ++trial) {
      MatrixXcd m = random_dense(3, rng);
      SiteSplit s = site_split(m, site3);
      MatrixXcd back = s.scalar * MatrixXcd::Identity(3, 3) + s.plus + s.minus + s.neutral;
      CHECK(max_abs_diff(back, m) < 1e-14);
    }
  }
}

TEST_CASE("decompose identifies the sectors of hand-built operators") {
  auto sys = spin_chain(2);

  SECTION("identity is pure scalar") {
    LocalOperator op = decompose(sys, MatrixXcd::Identity(4, 4), {0, 1});
    CHECK(op.scalar() == Complex(1, 0));
    CHECK(op.sectors().empty());
  }

  SECTION("sigma_x on one site gives one raising and one lowering sector") {
    LocalOperator op = decompose(sys, sigma_x(), {0});
    CHECK(op.scalar() == Complex(0, 0));
    REQUIRE(op.sectors().size() == 2);
    SectorIndex up{{0}, {}, {}};
    SectorIndex down{{}, {0}, {}};
    REQUIRE(op.sectors().count(up) == 1);
    REQUIRE(op.sectors().count(down) == 1);
    CHECK(op.sectors().at(up).norm == Catch::Approx(1.0));
    CHECK(op.sectors().at(down).norm == Catch::Approx(1.0));
    CHECK(max_abs_diff(op.sectors().at(up).mat, sigma_plus()) == 0.0);
    CHECK(max_abs_diff(op.sectors().at(down).mat, sigma_minus()) == 0.0);
  }

  SECTION("sigma_z on one site gives a scalar plus one neutral sector") {
    LocalOperator op = decompose(sys, sigma_z(), {1});
    CHECK(op.scalar() == Complex(-1, 0));
    REQUIRE(op.sectors().size() == 1);
    SectorIndex key{{}, {}, {1}};
    REQUIRE(op.sectors().count(key) == 1);
    CHECK(op.sectors().at(key).norm == Catch::Approx(2.0));
  }

  SECTION("sigma_x sigma_x splits into the four mixed sectors") {
    LocalOperator op = decompose(sys, kron(sigma_x(), sigma_x()), {0, 1});
    CHECK(op.scalar() == Complex(0, 0));
    REQUIRE(op.sectors().size() == 4);
    for (const SectorIndex& key :
         {SectorIndex{{0, 1}, {}, {}}, SectorIndex{{0}, {1}, {}}, SectorIndex{{1}, {0}, {}},
          SectorIndex{{}, {0, 1}, {}}}) {
      REQUIRE(op.sectors().count(key) == 1);
      CHECK(op.sectors().at(key).norm == Catch::Approx(1.0));
    }
  }

  SECTION("support validation") {
    CHECK_THROWS_AS(decompose(sys, MatrixXcd::Identity(4, 4), {1, 0}), SupportNotContained);
    CHECK_THROWS_AS(decompose(sys, MatrixXcd::Identity(4, 4), {0, 7}), SupportNotContained);
    CHECK_THROWS_AS(decompose(sys, MatrixXcd::Identity(2, 2), {0, 1}), SupportNotContained);
  }
}

TEST_CASE("sum of local terms decomposes into one neutral sector per site") {
  auto sys = spin_chain(3, 0.7);
  LocalOperator h0 = h0_operator(sys);
  CHECK(h0.scalar() == Complex(0, 0));
  REQUIRE(h0.sectors().size() == 3);
  for (int x = 0; x < 3; ++x) {
    SectorIndex key{{}, {}, {x}};
    REQUIRE(h0.sectors().count(key) == 1);
    CHECK(h0.sectors().at(key).norm == Catch::Approx(0.7));
  }

  MatrixXcd dense_oracle = MatrixXcd::Zero(8, 8);
  MatrixXcd hx = MatrixXcd::Zero(2, 2);
  hx(1, 1) = 0.7;
  for (int x = 0; x < 3; ++x) dense_oracle += embed_factors(*sys, {{x, hx}});
  CHECK(max_abs_diff(assemble(h0), dense_oracle) < 1e-14);
}

TEST_CASE("decompose then assemble is the identity on random operators") {
  SECTION("trivial frames, random supports") {
    auto sys = spin_chain(4);
    Rng rng = Rng::seeded(21);
    for (int trial = 0; trial < 120; ++trial) {
      const int k = 1 + rng.uniform_int(3);
      SiteSet support;
      while (static_cast<int>(support.size()) < k)
        support = set_union(support, SiteSet{rng.uniform_int(4)});
      const int n = sys->dense_dim(support);
      MatrixXcd m = random_dense(n, rng);
      LocalOperator op = decompose(sys, m, support);
      CHECK(max_abs_diff(assemble(op, support), m) < 1e-13 * m.cwiseAbs().maxCoeff());
    }
  }

  SECTION("nontrivial frames and mixed site dimensions") {
    Rng rng = Rng::seeded(22);
    Volume vol({3});
    std::vector<SiteSpace> sites;
    sites.push_back(random_site(2, 1.0, rng, true));
    sites.push_back(random_site(3, 1.0, rng, true));
    sites.push_back(random_site(2, 1.0, rng, true));
    auto sys = System::make(vol, std::move(sites));
    REQUIRE_FALSE(sys->all_frames_trivial());
    for (int trial = 0; trial < 60; ++trial) {
      SiteSet support = trial % 3 == 0 ? SiteSet{0, 1, 2} : trial % 3 == 1 ? SiteSet{1} : SiteSet{0, 2};
      const int n = sys->dense_dim(support);
      MatrixXcd m = random_dense(n, rng);
      for (BlockBasis basis : {BlockBasis::Computational, BlockBasis::Adapted}) {
        LocalOperator op = decompose(sys, m, support, basis);
        CHECK(max_abs_diff(assemble(op, support, basis), m) < 1e-12 * m.cwiseAbs().maxCoeff());
      }
    }
  }

  SECTION("assembling on a larger support embeds with identities") {
    auto sys = spin_chain(3);
    Rng rng = Rng::seeded(23);
    MatrixXcd m = random_dense(2, rng);
    LocalOperator op = decompose(sys, m, {1});
    MatrixXcd big = assemble(op, {0, 1, 2});
    CHECK(max_abs_diff(big, embed_factors(*sys, {{1, m}})) < 1e-13);
  }
}

TEST_CASE("products match hand-computed cases and the dense oracle") {
  auto sys = spin_chain(2);

  SECTION("lowering then raising leaves scalar one minus the excited projector") {
    LocalOperator minus = decompose(sys, sigma_minus(), {0});
    LocalOperator plus = decompose(sys, sigma_plus(), {0});
    LocalOperator prod = multiply(minus, plus);
    CHECK(prod.scalar() == Complex(1, 0));
    REQUIRE(prod.sectors().size() == 1);
    SectorIndex key{{}, {}, {0}};
    REQUIRE(prod.sectors().count(key) == 1);
    CHECK(prod.sectors().at(key).mat(1, 1) == Complex(-1, 0));
    CHECK(prod.sectors().at(key).norm == Catch::Approx(1.0));
  }

  SECTION("raising twice on a spin-1/2 site is exactly zero") {
    LocalOperator plus = decompose(sys, sigma_plus(), {0});
    LocalOperator prod = multiply(plus, plus);
    CHECK(prod.is_zero());
  }

  SECTION("random products and commutators agree with dense arithmetic") {
    auto sys3 = spin_chain(3);
    Rng rng = Rng::seeded(31);
    for (int trial = 0; trial < 40; ++trial) {
      LocalOperator a = random_local_operator(sys3, rng);
      LocalOperator b = random_local_operator(sys3, rng);
      const MatrixXcd da = assemble(a);
      const MatrixXcd db = assemble(b);
      const double scale = std::max(1.0, da.cwiseAbs().maxCoeff() * db.cwiseAbs().maxCoeff());

      CHECK(max_abs_diff(assemble(multiply(a, b)), da * db) < 1e-12 * scale);
      CHECK(max_abs_diff(assemble(commutator(a, b)), da * db - db * da) < 1e-12 * scale);
      CHECK(sectors_are_pure(multiply(a, b)));
    }
  }

  SECTION("disjoint supports commute exactly") {
    auto sys3 = spin_chain(3);
    LocalOperator a = decompose(sys3, sigma_plus(), {0});
    LocalOperator b = decompose(sys3, sigma_x(), {2});
    CHECK(commutator(a, b).is_zero());
  }
}

TEST_CASE("adjoint conjugates blocks and swaps raising with lowering") {
  auto sys = spin_chain(3);
  Rng rng = Rng::seeded(41);

  SECTION("dense agreement and involution") {
    for (int trial = 0; trial < 20; ++trial) {
      LocalOperator a = random_local_operator(sys, rng);
      CHECK(max_abs_diff(assemble(adjoint_op(a)), assemble(a).adjoint()) < 1e-13);
      LocalOperator twice = adjoint_op(adjoint_op(a));
      CHECK(twice.scalar() == a.scalar());
      REQUIRE(twice.sectors().size() == a.sectors().size());
      for (const auto& [key, blk] : a.sectors()) {
        REQUIRE(twice.sectors().count(key) == 1);
        CHECK(max_abs_diff(twice.sectors().at(key).mat, blk.mat) == 0.0);
      }
    }
  }

  SECTION("pure raising becomes pure lowering") {
    LocalOperator v = random_nondiagonal(sys, rng, false);
    LocalOperator w = adjoint_op(v);
    Classified cv = classify(v);
    Classified cw = classify(w);
    CHECK(cw.f.sectors().empty());
    CHECK(cv.v_plus.sectors().size() == cw.v_minus.sectors().size());
    CHECK(cv.v_minus.sectors().size() == cw.v_plus.sectors().size());
  }
}

TEST_CASE("classification separates scalar, dressed, and off-diagonal parts") {
  auto sys = spin_chain(2);

  SECTION("sigma_z plus sigma_x sorts into all three bins") {
    LocalOperator op = decompose(sys, MatrixXcd(sigma_z() + sigma_x()), {0});
    Classified c = classify(op);
    CHECK(c.d == Complex(-1, 0));
    CHECK(c.v_plus.sectors().size() == 1);
    CHECK(c.v_minus.sectors().size() == 1);
    CHECK(c.f.sectors().size() == 1);
    LocalOperator back = LocalOperator::scalar_multiple(sys, c.d) + c.f + c.v();
    CHECK(max_abs_diff(assemble(back), assemble(op)) < 1e-14);
  }

  SECTION("the dressed part annihilates the ground vector from both sides") {
    Rng rng = Rng::seeded(51);
    Volume vol({3});
    std::vector<SiteSpace> sites;
    for (int x = 0; x < 3; ++x) sites.push_back(random_site(2, 1.0, rng, x == 1));
    auto sysr = System::make(vol, std::move(sites));
    for (int trial = 0; trial < 20; ++trial) {
      LocalOperator f = random_frustration_free(sysr, rng);
      MatrixXcd dense = assemble(f, BlockBasis::Adapted);
      // Adapted-frame ground vector of the volume is the first basis vector.
      CHECK(dense.col(0).cwiseAbs().maxCoeff() == 0.0);
      CHECK(dense.row(0).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SECTION("pure off-diagonal draws contain no neutral blocks") {
    Rng rng = Rng::seeded(52);
    LocalOperator v = random_nondiagonal(sys, rng, true);
    MatrixXcd dense = assemble(v);
    CHECK(max_abs_diff(dense, dense.adjoint()) < 1e-14);
    for (const auto& [key, blk] : v.sectors()) CHECK(key.neutral.empty());
  }
}

TEST_CASE("serialization round trips bit for bit") {
  Rng rng = Rng::seeded(61);
  Volume vol({2, 2});
  std::vector<SiteSpace> sites;
  for (int x = 0; x < 4; ++x) sites.push_back(random_site(x == 3 ? 3 : 2, 1.0, rng, x == 3));
  auto sys = System::make(vol, std::move(sites));

  SECTION("serialize, parse, serialize is byte identical") {
    LocalOperator op = random_local_operator(sys, rng);
    const std::string wire = to_json(op).dump();
    LocalOperator back = local_operator_from_json(json::parse(wire), sys);
    CHECK(to_json(back).dump() == wire);
    CHECK(back.scalar() == op.scalar());
    REQUIRE(back.sectors().size() == op.sectors().size());
    for (const auto& [key, blk] : op.sectors()) {
      REQUIRE(back.sectors().count(key) == 1);
      CHECK(max_abs_diff(back.sectors().at(key).mat, blk.mat) == 0.0);
    }
  }

  SECTION("volume mismatch is rejected") {
    LocalOperator op = random_local_operator(sys, rng);
    json j = to_json(op);
    auto other = spin_chain(4);
    CHECK_THROWS_AS(local_operator_from_json(j, other), SchemaError);
  }

  SECTION("malformed sector entries are rejected") {
    LocalOperator op = random_local_operator(sys, rng);
    json j = to_json(op);
    if (!j["sectors"].empty()) {
      json bad = j;
      bad["sectors"][0]["dim"] = 17;
      CHECK_THROWS_AS(local_operator_from_json(bad, sys), SchemaError);
      bad = j;
      bad["sectors"][0]["plus"] = bad["sectors"][0]["minus"];  // breaks disjointness if both nonempty
      bad["sectors"][0]["minus"] = bad["sectors"][0]["plus"];
      json worse = j;
      worse["sectors"][0].erase("block");
      CHECK_THROWS(local_operator_from_json(worse, sys));
    }
  }

  SECTION("volume JSON carries extents and steiner limit") {
    json jv = to_json(sys->volume());
    Volume back = volume_from_json(jv);
    CHECK(back == sys->volume());
    CHECK(back.steiner_limit() == sys->volume().steiner_limit());
  }
}

TEST_CASE("drop thresholds move small sectors into the dropped budget") {
  auto sys = spin_chain(2);
  MatrixXcd m = sigma_z() + 1e-9 * sigma_plus();
  LocalOperator kept = decompose(sys, m, {0}, BlockBasis::Computational, 1e-12);
  CHECK(kept.sectors().size() == 2);
  CHECK(kept.dropped_norm() == 0.0);

  LocalOperator trimmed = decompose(sys, m, {0}, BlockBasis::Computational, 1e-6);
  CHECK(trimmed.sectors().size() == 1);
  CHECK(trimmed.dropped_norm() == Catch::Approx(1e-9));
  SectorIndex key{{}, {}, {0}};
  CHECK(trimmed.sectors().count(key) == 1);
}
