#pragma once

#include <string>

#include <Eigen/Dense>

#include "v2geq/assembly.hpp"
#include "v2geq/solver.hpp"

namespace v2geq {

struct OracleResult {
  bool converged = false;
  int rounds = 0;
  double last_change = 0.0;
  std::string message;
  Eigen::VectorXd z;  // full MCP point, prices normalized
};

// Best-response cycling for small instances: the traffic players answer the
// current station prices by path equilibration, the power side (CNO, DSO,
// LSEs and clearing) answers the resulting station energy, and the station
// prices are updated with damping. Prices a player is indifferent to (an
// idle station) are set at the edge of their admissible range. Station
// capacity must not bind; if it does the run reports no convergence.
OracleResult diagonalize_oracle(const Assembly& a, int max_rounds,
                                const SolverConfig& config = {});

}  // namespace v2geq
