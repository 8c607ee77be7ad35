#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include <Eigen/SparseLU>

#include "v2geq/error.hpp"
#include "v2geq/solver.hpp"

namespace v2geq {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct FbPart {
  double phi;
  double da;
  double db;
};

FbPart fb_diff(double a, double b) {
  const double r = std::hypot(a, b);
  if (r == 0.0) {
    const double s = 1.0 / std::sqrt(2.0) - 1.0;
    return {0.0, s, s};
  }
  return {r - a - b, a / r - 1.0, b / r - 1.0};
}

// Value and generalized partial derivatives (w.r.t. z_k and G_k) of the
// bound-aware FB function for one row.
FbPart fb_row(double z, double g, double lo, double up) {
  const bool has_lo = std::isfinite(lo), has_up = std::isfinite(up);
  if (!has_lo && !has_up) return {-g, 0.0, -1.0};
  if (has_lo && !has_up) return fb_diff(z - lo, g);
  if (!has_lo) {
    const FbPart p = fb_diff(up - z, -g);
    return {-p.phi, p.da, p.db};
  }
  const FbPart inner = fb_diff(up - z, -g);
  const FbPart outer = fb_diff(z - lo, -inner.phi);
  return {outer.phi, outer.da + outer.db * inner.da, outer.db * inner.db};
}

struct Merit {
  Eigen::VectorXd phi, da, db, g;
  double psi = 0.0;
  double fb_inf = 0.0;
  double nat_inf = 0.0;
};

Merit merit(const McpInstance& mcp, const Eigen::VectorXd& z,
            const std::vector<char>* frozen, const Eigen::VectorXd& target) {
  Merit m;
  const Eigen::Index n = z.size();
  m.g = mcp.evaluate(z);
  m.phi.resize(n);
  m.da.resize(n);
  m.db.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (frozen && (*frozen)[k]) {
      m.phi[k] = z[k] - target[k];
      m.da[k] = 1.0;
      m.db[k] = 0.0;
      continue;
    }
    const FbPart p = fb_row(z[k], m.g[k], mcp.lower[k], mcp.upper[k]);
    m.phi[k] = p.phi;
    m.da[k] = p.da;
    m.db[k] = p.db;
    const double nat = z[k] - std::clamp(z[k] - m.g[k], mcp.lower[k], mcp.upper[k]);
    m.nat_inf = std::max(m.nat_inf, std::abs(nat));
  }
  m.psi = 0.5 * m.phi.squaredNorm();
  m.fb_inf = m.phi.lpNorm<Eigen::Infinity>();
  if (!std::isfinite(m.psi)) {
    m.psi = kInf;
    m.fb_inf = kInf;
    m.nat_inf = kInf;
  }
  return m;
}

// Solves (Da + Db (J + nu I)) d = -phi through the bordered system
// [Da + Db (S + nu I), Db Wf; diag(g') Rf, -I] [d; y] = [-phi; 0].
bool newton_direction(const McpInstance& mcp, const Eigen::VectorXd& z, const Merit& m,
                      double nu, Eigen::VectorXd& d) {
  const auto n = static_cast<int>(mcp.size());
  const auto k = static_cast<int>(mcp.link_count());
  const Eigen::VectorXd slope = k > 0 ? mcp.link_slopes(z) : Eigen::VectorXd();
  Triplets t;
  const SparseMatrix& s = mcp.constant_jacobian();
  t.reserve(s.nonZeros() + 2 * n + mcp.weight_full().nonZeros() +
            mcp.flow_full().nonZeros() + k);
  for (int c = 0; c < s.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(s, c); it; ++it) {
      t.emplace_back(it.row(), it.col(), m.db[it.row()] * it.value());
    }
  }
  for (int i = 0; i < n; ++i) t.emplace_back(i, i, m.da[i] + m.db[i] * nu);
  const SparseMatrix& w = mcp.weight_full();
  for (int c = 0; c < w.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(w, c); it; ++it) {
      t.emplace_back(it.row(), n + it.col(), m.db[it.row()] * it.value());
    }
  }
  const SparseMatrix& f = mcp.flow_full();
  for (int c = 0; c < f.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(f, c); it; ++it) {
      t.emplace_back(n + it.row(), it.col(), slope[it.row()] * it.value());
    }
  }
  for (int a = 0; a < k; ++a) t.emplace_back(n + a, n + a, -1.0);
  SparseMatrix a(n + k, n + k);
  a.setFromTriplets(t.begin(), t.end());
  a.makeCompressed();

  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.analyzePattern(a);
  lu.factorize(a);
  if (lu.info() != Eigen::Success) return false;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + k);
  rhs.head(n) = -m.phi;
  Eigen::VectorXd sol = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !sol.allFinite()) return false;
  double err = (a * sol - rhs).lpNorm<Eigen::Infinity>();
  for (int refine = 0; refine < 3 && err > 1e-12 * (1.0 + rhs.lpNorm<Eigen::Infinity>());
       ++refine) {
    const Eigen::VectorXd next = sol + lu.solve(rhs - a * sol);
    const double next_err = (a * next - rhs).lpNorm<Eigen::Infinity>();
    if (!next.allFinite() || !(next_err < err)) break;
    sol = next;
    err = next_err;
  }
  if (!(err <= 1e-6 * (1.0 + rhs.lpNorm<Eigen::Infinity>()))) return false;
  d = sol.head(n);
  return true;
}

struct NewtonRun {
  Eigen::VectorXd z;
  bool converged = false;
  int iterations = 0;
  double fb_inf = kInf;
  double nat_inf = kInf;
  double psi = kInf;
};

void trace_line(std::ostream* out, const std::string& start, int it, const Merit& m,
                double step, double nu, const char* dir) {
  if (!out) return;
  nlohmann::json j = {{"start", start}, {"iter", it},     {"fb", m.fb_inf},
                      {"natural", m.nat_inf}, {"psi", m.psi}, {"step", step},
                      {"nu", nu},       {"direction", dir}};
  *out << j.dump() << "\n";
}

NewtonRun newton(const McpInstance& mcp, Eigen::VectorXd z, const SolverConfig& cfg,
                 const std::vector<char>* frozen, const Eigen::VectorXd& target,
                 const std::string& name) {
  NewtonRun run;
  Merit m = merit(mcp, z, frozen, target);
  int gradient_steps = 0;
  for (int it = 0;; ++it) {
    run.iterations = it;
    if (m.fb_inf <= cfg.tolerance && m.nat_inf <= cfg.tolerance) {
      run.converged = true;
      break;
    }
    if (it >= cfg.max_iterations || !std::isfinite(m.psi)) break;

    const Eigen::VectorXd grad =
        m.da.cwiseProduct(m.phi) + mcp.jacobian_transpose_times(z, m.db.cwiseProduct(m.phi));
    double nu = std::clamp(m.fb_inf, cfg.regularization, cfg.regularization_max);
    Eigen::VectorXd d;
    bool have = false;
    for (int attempt = 0; attempt < 6; ++attempt) {
      have = newton_direction(mcp, z, m, nu, d);
      if (have) break;
      nu *= 100.0;
    }
    const char* kind = "newton";
    double slope = have ? grad.dot(d) : 0.0;
    if (!have || !(slope < -1e-14 * std::pow(d.norm(), 2.1))) {
      d = -grad;
      slope = -grad.squaredNorm();
      kind = "gradient";
    }

    auto line_search = [&](const Eigen::VectorXd& dir, double sl, Merit& out,
                           double& step) {
      step = 1.0;
      while (step >= cfg.min_step) {
        out = merit(mcp, z + step * dir, frozen, target);
        if (out.psi <= m.psi + cfg.armijo * step * sl) return true;
        step *= cfg.backtrack;
      }
      return false;
    };
    Merit next;
    double step = 0.0;
    bool ok = line_search(d, slope, next, step);
    if (!ok && std::string(kind) == "newton") {
      d = -grad;
      slope = -grad.squaredNorm();
      kind = "gradient";
      ok = line_search(d, slope, next, step);
    }
    trace_line(cfg.trace, name, it, m, ok ? step : 0.0, nu, kind);
    if (!ok) break;
    if (std::string(kind) == "gradient" && ++gradient_steps > cfg.fallback_after) {
      z += step * d;
      m = std::move(next);
      run.iterations = it + 1;
      break;
    }
    z += step * d;
    m = std::move(next);
  }
  run.z = std::move(z);
  run.fb_inf = m.fb_inf;
  run.nat_inf = m.nat_inf;
  run.psi = m.psi;
  return run;
}

Eigen::VectorXd clamp_to_bounds(const McpInstance& mcp, Eigen::VectorXd z) {
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    z[k] = std::clamp(z[k], mcp.lower[k], mcp.upper[k]);
  }
  return z;
}

}  // namespace

void SolverConfig::validate() const {
  if (!(tolerance > 0.0)) throw ModelError("solver tolerance must be positive");
  if (!(backtrack > 0.0 && backtrack < 1.0)) {
    throw ModelError("backtrack factor must lie in (0, 1)");
  }
  if (!(armijo > 0.0 && armijo < 1.0)) throw ModelError("Armijo slope must lie in (0, 1)");
  if (max_iterations < 1) throw ModelError("maxIterations must be positive");
  if (starts < 1) throw ModelError("need at least one start");
}

SolverConfig solver_config_from_json(const nlohmann::json& j) {
  SolverConfig c;
  c.tolerance = j.value("tolerance", c.tolerance);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.armijo = j.value("armijo", c.armijo);
  c.backtrack = j.value("backtrack", c.backtrack);
  c.regularization = j.value("regularization", c.regularization);
  c.regularization_max = j.value("regularization_max", c.regularization_max);
  c.fallback_after = j.value("fallback_after", c.fallback_after);
  c.starts = j.value("starts", c.starts);
  c.seed = j.value("seed", c.seed);
  c.extragradient_iterations = j.value("extragradient_iterations", c.extragradient_iterations);
  c.extragradient_step = j.value("extragradient_step", c.extragradient_step);
  c.validate();
  return c;
}

std::string status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::FallbackConverged: return "fallback-converged";
    case SolveStatus::Failed: return "failed";
  }
  return "?";
}

nlohmann::json report_to_json(const SolveReport& r) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); };
  nlohmann::json starts = nlohmann::json::array();
  for (const StartOutcome& s : r.starts) {
    starts.push_back({{"name", s.name},
                      {"status", status_name(s.status)},
                      {"iterations", s.iterations},
                      {"residual", num(s.residual)}});
  }
  return {{"status", status_name(r.status)},
          {"iterations", r.iterations},
          {"residual", num(r.residual)},
          {"natural_residual", num(r.natural_residual)},
          {"complementarity", num(r.complementarity)},
          {"wardrop_gap", num(r.wardrop_gap)},
          {"clearing_residual", num(r.clearing_residual)},
          {"wall_seconds", r.wall_seconds},
          {"start", r.start},
          {"starts", starts}};
}

double fischer_burmeister(double a, double b) { return std::hypot(a, b) - a - b; }

Eigen::VectorXd fb_residual(const McpInstance& mcp, const Eigen::VectorXd& z) {
  return merit(mcp, z, nullptr, z).phi;
}

SolveResult solve(const McpInstance& mcp, const SolverConfig& cfg,
                  const std::vector<StartPoint>& given, const std::vector<char>* frozen) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto n = static_cast<Eigen::Index>(mcp.size());

  std::vector<StartPoint> starts = given;
  if (starts.empty()) starts.push_back({"zero", Eigen::VectorXd::Zero(n)});
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Eigen::VectorXd base = starts.front().z;
  while (static_cast<int>(starts.size()) < cfg.starts) {
    Eigen::VectorXd z = base;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (frozen && (*frozen)[k]) continue;
      z[k] += 0.1 * (1.0 + std::abs(z[k])) * noise(rng);
    }
    starts.push_back({"perturbed-" + std::to_string(starts.size()), z});
  }
  if (static_cast<int>(starts.size()) > cfg.starts) starts.resize(cfg.starts);

  SolveResult best;
  best.report.starts.reserve(starts.size());
  NewtonRun best_run;
  int total_iterations = 0;
  std::string best_name;
  for (const StartPoint& sp : starts) {
    if (sp.z.size() != n) throw ModelError("start '" + sp.name + "' has the wrong dimension");
    const Eigen::VectorXd z0 = frozen ? sp.z : clamp_to_bounds(mcp, sp.z);
    NewtonRun run = newton(mcp, z0, cfg, frozen, sp.z, sp.name);
    total_iterations += run.iterations;
    best.report.starts.push_back({sp.name,
                                  run.converged ? SolveStatus::Converged : SolveStatus::Failed,
                                  run.iterations, run.fb_inf});
    const bool better = best_run.z.size() == 0 || (run.converged && !best_run.converged) ||
                        (!best_run.converged && run.psi < best_run.psi);
    if (better && !(best_run.converged)) {
      best_run = run;
      best_name = sp.name;
    }
  }

  SolveStatus status = best_run.converged ? SolveStatus::Converged : SolveStatus::Failed;
  if (!best_run.converged && !frozen) {
    ExtragradientRun eg = extragradient_solve(mcp, best_run.z, cfg, cfg.extragradient_step,
                                              true, cfg.extragradient_iterations);
    total_iterations += eg.iterations;
    NewtonRun polish = newton(mcp, eg.z, cfg, nullptr, eg.z, "fallback");
    total_iterations += polish.iterations;
    if (polish.converged || polish.psi < best_run.psi) {
      best_run = polish;
      best_name = "fallback";
    }
    if (best_run.converged) status = SolveStatus::FallbackConverged;
  }

  best.z = best_run.z;
  best.report.status = status;
  best.report.iterations = total_iterations;
  best.report.start = best_name;
  best.report.residual = best_run.fb_inf;
  best.report.natural_residual = natural_residual(mcp, best.z).lpNorm<Eigen::Infinity>();
  if (frozen) best.report.natural_residual = best_run.nat_inf;
  best.report.complementarity = complementarity_violation(mcp, best.z);
  best.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return best;
}

Projection project_feasible(const McpInstance& mcp, const Eigen::VectorXd& u,
                            const SolverConfig& cfg) {
  const auto nv = static_cast<Eigen::Index>(mcp.primal_size);
  McpInstance qp;
  qp.primal_size = mcp.primal_size;
  qp.eq_size = mcp.eq_size;
  qp.ineq_size = mcp.ineq_size;
  qp.lower = mcp.lower;
  qp.upper = mcp.upper;
  qp.h_const = -u;
  qp.h_linear.resize(nv, nv);
  qp.h_linear.setIdentity();
  qp.link_flow.resize(0, nv);
  qp.link_weight.resize(nv, 0);
  qp.b_eq = mcp.b_eq;
  qp.rhs_eq = mcp.rhs_eq;
  qp.b_ineq = mcp.b_ineq;
  qp.rhs_ineq = mcp.rhs_ineq;
  qp.finalize();

  SolverConfig inner = cfg;
  inner.trace = nullptr;
  inner.starts = 1;
  Eigen::VectorXd z0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(qp.size()));
  z0.head(nv) = u;
  NewtonRun run = newton(qp, clamp_to_bounds(qp, z0), inner, nullptr, z0, "projection");
  if (!run.converged) {
    throw ModelError("projection onto the feasible set failed (residual " +
                     std::to_string(run.fb_inf) + "); the instance may be infeasible");
  }
  Projection p;
  p.v = run.z.head(nv);
  p.lambda = run.z.segment(nv, static_cast<Eigen::Index>(mcp.eq_size));
  p.mu = run.z.tail(static_cast<Eigen::Index>(mcp.ineq_size));
  return p;
}

Eigen::VectorXd extragradient_step(const McpInstance& mcp, const Eigen::VectorXd& z,
                                   double step, const SolverConfig& cfg) {
  const auto nv = static_cast<Eigen::Index>(mcp.primal_size);
  const Eigen::VectorXd v = z.head(nv);
  const Projection bar = project_feasible(mcp, v - step * mcp.primal_map(v), cfg);
  const Projection next = project_feasible(mcp, v - step * mcp.primal_map(bar.v), cfg);
  Eigen::VectorXd out(z.size());
  out.head(nv) = next.v;
  out.segment(nv, static_cast<Eigen::Index>(mcp.eq_size)) = next.lambda / step;
  out.tail(static_cast<Eigen::Index>(mcp.ineq_size)) = next.mu / step;
  return out;
}

ExtragradientRun extragradient_solve(const McpInstance& mcp, const Eigen::VectorXd& z0,
                                     const SolverConfig& cfg, double step, bool adaptive,
                                     int max_iterations) {
  const auto nv = static_cast<Eigen::Index>(mcp.primal_size);
  ExtragradientRun run;
  run.z = z0;
  Eigen::VectorXd v = z0.head(nv);
  double s = step;
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd hv = mcp.primal_map(v);
    Projection bar;
    for (;;) {
      bar = project_feasible(mcp, v - s * hv, cfg);
      if (!adaptive) break;
      const double dv = (v - bar.v).norm();
      const double dh = (hv - mcp.primal_map(bar.v)).norm();
      if (dv == 0.0 || s * dh <= 0.9 * dv || s < 1e-12) break;
      s *= 0.5;
    }
    const Projection next = project_feasible(mcp, v - s * mcp.primal_map(bar.v), cfg);
    run.z.head(nv) = next.v;
    run.z.segment(nv, static_cast<Eigen::Index>(mcp.eq_size)) = next.lambda / s;
    run.z.tail(static_cast<Eigen::Index>(mcp.ineq_size)) = next.mu / s;
    v = next.v;
    run.iterations = it + 1;
    const double res = natural_residual(mcp, run.z).lpNorm<Eigen::Infinity>();
    run.residuals.push_back(res);
    if (res <= cfg.tolerance) {
      run.converged = true;
      break;
    }
  }
  run.final_step = s;
  return run;
}

}  // namespace v2geq
