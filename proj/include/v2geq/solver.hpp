#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "v2geq/mcp.hpp"

namespace v2geq {

struct SolverConfig {
  double tolerance = 1e-8;
  int max_iterations = 300;
  double armijo = 1e-4;
  double backtrack = 0.5;
  double min_step = 1e-14;
  double regularization = 1e-10;      // floor of the diagonal shift
  double regularization_max = 1e-6;   // cap of the residual-scaled shift
  int fallback_after = 60;            // gradient steps tolerated before fallback
  int starts = 3;
  std::uint64_t seed = 20240607;
  int extragradient_iterations = 400;
  double extragradient_step = 1.0;
  std::ostream* trace = nullptr;  // line-delimited JSON, one line per iteration

  void validate() const;
};

SolverConfig solver_config_from_json(const nlohmann::json& j);

enum class SolveStatus { Converged, FallbackConverged, Failed };
std::string status_name(SolveStatus s);

struct StartPoint {
  std::string name;
  Eigen::VectorXd z;
};

struct StartOutcome {
  std::string name;
  SolveStatus status = SolveStatus::Failed;
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
};

struct SolveReport {
  SolveStatus status = SolveStatus::Failed;
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();  // FB, max norm
  double natural_residual = std::numeric_limits<double>::infinity();
  double complementarity = std::numeric_limits<double>::infinity();
  double wardrop_gap = std::numeric_limits<double>::quiet_NaN();
  double clearing_residual = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  std::string start;
  std::vector<StartOutcome> starts;
};

nlohmann::json report_to_json(const SolveReport& r);

struct SolveResult {
  Eigen::VectorXd z;
  SolveReport report;
};

// Semismooth Newton on the Fischer-Burmeister reformulation, from each start
// in turn (missing starts are filled with the zero point and seeded
// perturbations of it). The first converged start wins; if none converges
// the best point goes through the extragradient fallback and a final Newton
// polish. Coordinates flagged in `frozen` stay at their start value.
SolveResult solve(const McpInstance& mcp, const SolverConfig& config,
                  const std::vector<StartPoint>& starts = {},
                  const std::vector<char>* frozen = nullptr);

double fischer_burmeister(double a, double b);
Eigen::VectorXd fb_residual(const McpInstance& mcp, const Eigen::VectorXd& z);

struct Projection {
  Eigen::VectorXd v;
  Eigen::VectorXd lambda;
  Eigen::VectorXd mu;
};

// Euclidean projection of u onto {bounds, B1 v = b1, B2 v <= b2}, solved as
// the KKT system of the projection QP. Throws ModelError when infeasible.
Projection project_feasible(const McpInstance& mcp, const Eigen::VectorXd& u,
                            const SolverConfig& config);

// One double-projection step from z with the given step size. The returned
// multipliers are the projection multipliers divided by the step.
Eigen::VectorXd extragradient_step(const McpInstance& mcp, const Eigen::VectorXd& z,
                                   double step, const SolverConfig& config);

struct ExtragradientRun {
  Eigen::VectorXd z;
  int iterations = 0;
  bool converged = false;
  double final_step = 0.0;
  std::vector<double> residuals;  // natural residual max norm per iteration
};

// Repeated extragradient steps. With `adaptive` the step is halved until
// step * |H(v) - H(vbar)| <= 0.9 |v - vbar|.
ExtragradientRun extragradient_solve(const McpInstance& mcp, const Eigen::VectorXd& z0,
                                     const SolverConfig& config, double step,
                                     bool adaptive, int max_iterations);

}  // namespace v2geq
