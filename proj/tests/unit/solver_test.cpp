#include <cmath>

#include <doctest.h>

#include "support/toys.hpp"
#include "v2geq/mcp_builder.hpp"
#include "v2geq/oracle.hpp"
#include "v2geq/solver.hpp"

using namespace v2geq;

namespace {

// 0 <= z ⊥ M z + q >= 0 as an McpInstance with an affine map.
McpInstance lcp(const Eigen::MatrixXd& M, const Eigen::VectorXd& q) {
  McpBuilder b;
  VariableCatalog cat;
  b.begin_block("z", BlockKind::Primal);
  for (Eigen::Index i = 0; i < q.size(); ++i) b.add_primal("z" + std::to_string(i), 0.0, McpBuilder::kInf);
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    b.add_h_const(static_cast<std::size_t>(i), q[i]);
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      if (M(i, j) != 0.0) b.add_h_linear(static_cast<std::size_t>(i), static_cast<std::size_t>(j), M(i, j));
    }
  }
  return b.build(cat);
}

}  // namespace

TEST_CASE("Fischer-Burmeister values") {
  CHECK(fischer_burmeister(0.0, 5.0) == doctest::Approx(0.0));
  CHECK(fischer_burmeister(3.0, 4.0) == doctest::Approx(-2.0));
  CHECK(fischer_burmeister(2.0, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("one-dimensional MCP") {
  Eigen::MatrixXd M(1, 1);
  M << 1.0;
  Eigen::VectorXd q(1);
  q << -1.0;
  const McpInstance mcp = lcp(M, q);
  const SolveResult r = solve(mcp, {});
  REQUIRE(r.report.status == SolveStatus::Converged);
  CHECK(r.z[0] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("2x2 LCP against its complementary bases") {
  Eigen::MatrixXd M(2, 2);
  M << 2, 1, 1, 2;
  Eigen::VectorXd q(2);
  q << -1, -1;
  const McpInstance mcp = lcp(M, q);
  const SolveResult r = solve(mcp, {});
  REQUIRE(r.report.status == SolveStatus::Converged);
  CHECK(fb_residual(mcp, r.z).lpNorm<Eigen::Infinity>() <= 1e-8);

  // Enumerate every basis: solve the rows in the basis, zero the rest.
  int solutions = 0;
  for (int mask = 0; mask < 4; ++mask) {
    Eigen::Vector2d z = Eigen::Vector2d::Zero();
    std::vector<int> basis;
    for (int i = 0; i < 2; ++i) {
      if (mask & (1 << i)) basis.push_back(i);
    }
    if (!basis.empty()) {
      Eigen::MatrixXd Mb(basis.size(), basis.size());
      Eigen::VectorXd qb(basis.size());
      for (std::size_t i = 0; i < basis.size(); ++i) {
        qb[static_cast<Eigen::Index>(i)] = -q[basis[i]];
        for (std::size_t j = 0; j < basis.size(); ++j) Mb(i, j) = M(basis[i], basis[j]);
      }
      const Eigen::VectorXd zb = Mb.lu().solve(qb);
      for (std::size_t i = 0; i < basis.size(); ++i) z[basis[i]] = zb[static_cast<Eigen::Index>(i)];
    }
    const Eigen::Vector2d w = M * z + q;
    if (z.minCoeff() >= -1e-12 && w.minCoeff() >= -1e-12) {
      ++solutions;
      CHECK(r.z[0] == doctest::Approx(z[0]).epsilon(1e-9));
      CHECK(r.z[1] == doctest::Approx(z[1]).epsilon(1e-9));
    }
  }
  CHECK(solutions == 1);
  CHECK(r.z[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("extragradient on an affine monotone line") {
  Eigen::MatrixXd M(1, 1);
  M << 2.0;
  Eigen::VectorXd q(1);
  q << -3.0;
  const McpInstance mcp = lcp(M, q);
  for (double start : {0.0, 5.0, 40.0}) {
    Eigen::VectorXd z0(1);
    z0 << start;
    const ExtragradientRun run = extragradient_solve(mcp, z0, {}, 0.2, false, 500);
    CHECK(run.converged);
    CHECK(run.z[0] == doctest::Approx(1.5).epsilon(1e-7));
  }
}

TEST_CASE("extragradient halves a step that is too long") {
  Eigen::MatrixXd M(2, 2);
  M << 50, 0, 0, 1;
  Eigen::VectorXd q(2);
  q << -50, -1;
  const McpInstance mcp = lcp(M, q);
  Eigen::VectorXd z0 = Eigen::VectorXd::Constant(2, 3.0);

  const ExtragradientRun fixed = extragradient_solve(mcp, z0, {}, 0.5, false, 40);
  bool rose = false;
  for (std::size_t k = 1; k < fixed.residuals.size(); ++k) {
    if (fixed.residuals[k] > fixed.residuals[k - 1]) rose = true;
  }
  CHECK(rose);
  CHECK_FALSE(fixed.converged);

  const ExtragradientRun adaptive = extragradient_solve(mcp, z0, {}, 0.5, true, 2000);
  CHECK(adaptive.final_step < 0.5);
  CHECK(adaptive.converged);
  CHECK(adaptive.z[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(adaptive.z[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("determinism of repeated solves") {
  const Model m = toys::coupled({});
  const toys::Solved a = toys::solve_model(m);
  const toys::Solved b = toys::solve_model(m);
  CHECK(a.r.report.iterations == b.r.report.iterations);
  CHECK((a.r.z.array() == b.r.z.array()).all());
}

TEST_CASE("coupled toy: Newton and the oracle agree") {
  const Model m = toys::coupled({});
  const toys::Solved s = toys::solve_model(m);
  REQUIRE(s.r.report.status == SolveStatus::Converged);
  CHECK(s.v.pass());
  const OracleResult o = diagonalize_oracle(s.a, 500);
  INFO(o.message);
  REQUIRE(o.converged);
  const Layout& L = s.a.layout;
  for (std::size_t v : L.f_ev) CHECK(toys::at(o.z, v) == doctest::Approx(toys::at(s.r.z, v)).epsilon(1e-6));
  for (std::size_t v : L.f_fv) CHECK(toys::at(o.z, v) == doctest::Approx(toys::at(s.r.z, v)).epsilon(1e-6));
  CHECK(toys::at(o.z, *L.cost_ev[0]) == doctest::Approx(toys::at(s.r.z, *L.cost_ev[0])).epsilon(1e-6));
  for (const Slot& w : L.w) {
    if (w) CHECK(toys::at(o.z, *w) == doctest::Approx(toys::at(s.r.z, *w)).epsilon(1e-6));
  }
  for (const auto& g : L.gen) {
    for (std::size_t v : g) CHECK(toys::at(o.z, v) == doctest::Approx(toys::at(s.r.z, v)).epsilon(1e-6));
  }
  for (std::size_t k = 0; k < L.p_charge.size(); ++k) {
    CHECK(toys::at(o.z, L.p_charge[k]) == doctest::Approx(toys::at(s.r.z, L.p_charge[k])).epsilon(1e-6));
    CHECK(toys::at(o.z, L.p_discharge[k]) == doctest::Approx(toys::at(s.r.z, L.p_discharge[k])).epsilon(1e-6));
  }
}

TEST_CASE("oracle: decoupled instance settles in two rounds") {
  const TransportNetwork net = toys::network(
      {1, 2, 3, 4},
      {toys::arc(1, 2, 0.2, 5, 0.2, 30), toys::arc(2, 4, 0.2, 5, 0.2, 30), toys::arc(1, 3, 0.3, 5, 0.2, 30),
       toys::arc(3, 4, 0.3, 5, 0.2, 30)},
      {}, {{{1, 4}, {40.0, 20.0}}});
  const PowerFeeder f = toys::feeder({toys::plain_bus(1), toys::demand_bus(2, 50, -0.002, 0.5)},
                                     {toys::line(1, 2)}, 1000);
  MarketParams m;
  m.lses.push_back({"LSE1", {toys::generator(2, 0.001, 0.05, 500)}});
  m.shedding_penalty = 2.0;
  const Assembly a = assemble_mcp(toys::model(net, f, m, toys::ev_params(), 10, false));
  const OracleResult o = diagonalize_oracle(a, 50);
  REQUIRE(o.converged);
  CHECK(o.rounds == 2);
}

TEST_CASE("oracle: zero demand settles in one round") {
  toys::CoupledSpec spec;
  spec.ev_demand = spec.fv_demand = 0.0;
  spec.floor_kw = 0.0;
  spec.b = 0.05;
  const Assembly a = assemble_mcp(toys::coupled(spec));
  const OracleResult o = diagonalize_oracle(a, 50);
  REQUIRE(o.converged);
  CHECK(o.rounds == 1);
  for (std::size_t v : a.layout.p_charge) CHECK(o.z[static_cast<Eigen::Index>(v)] == 0.0);
}

TEST_CASE("charging toy: Newton and the oracle agree on every determined quantity") {
  const Model m = toys::charging({});
  const toys::Solved s = toys::solve_model(m);
  REQUIRE(s.v.pass());
  const OracleResult o = diagonalize_oracle(s.a, 3000);
  INFO(o.message);
  REQUIRE(o.converged);
  const Layout& L = s.a.layout;
  auto same = [&](std::size_t v) {
    CHECK(toys::at(o.z, v) == doctest::Approx(toys::at(s.r.z, v)).epsilon(1e-6).scale(1.0));
  };
  for (std::size_t v : L.f_ev) same(v);
  for (std::size_t v : L.p_charge) same(v);
  for (std::size_t k = 0; k < L.alpha_charge.size(); ++k) {
    if (toys::at(s.r.z, L.p_charge[k]) > 1e-6) same(L.alpha_charge[k]);
  }
  for (const Slot& w : L.w) {
    if (w) same(*w);
  }
  for (const auto& g : L.gen) {
    for (std::size_t v : g) same(v);
  }
  same(*L.cost_ev[0]);
}
