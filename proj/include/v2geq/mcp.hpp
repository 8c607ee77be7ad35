#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "v2geq/net_model.hpp"

namespace v2geq {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

// Scalar congestion function of one aggregated link flow.
struct LinkFunction {
  enum class Kind { Bpr, Wait } kind = Kind::Bpr;
  double t0 = 0.0;
  double capacity = 1.0;
  Station station;
  double period_h = 1.0;

  double value(double flow) const;
  double slope(double flow) const;
};

// Mixed complementarity problem over z = [v; lambda; mu]:
//   b1 - B1 v = 0                         (lambda free)
//   0 <= v  ⊥  H(v) + B1' lambda + B2' mu   (bounds on v may be free)
//   0 <= mu ⊥  b2 - B2 v
// with H(v) = c + Q v + W g(R v), g applied link by link.
class McpInstance {
 public:
  std::size_t primal_size = 0;
  std::size_t eq_size = 0;
  std::size_t ineq_size = 0;

  Eigen::VectorXd lower;  // size(); -inf / +inf allowed
  Eigen::VectorXd upper;
  std::vector<std::string> labels;

  Eigen::VectorXd h_const;  // primal_size
  SparseMatrix h_linear;    // primal_size x primal_size
  SparseMatrix link_flow;   // links x primal_size
  SparseMatrix link_weight; // primal_size x links
  std::vector<LinkFunction> links;

  SparseMatrix b_eq;  // eq_size x primal_size
  Eigen::VectorXd rhs_eq;
  SparseMatrix b_ineq;  // ineq_size x primal_size
  Eigen::VectorXd rhs_ineq;

  std::size_t size() const { return primal_size + eq_size + ineq_size; }
  std::size_t link_count() const { return links.size(); }

  // Checks dimensions and precomputes the constant Jacobian part.
  void finalize();

  Eigen::VectorXd primal_map(const Eigen::VectorXd& v) const;
  Eigen::VectorXd evaluate(const Eigen::VectorXd& z) const;
  Eigen::VectorXd link_flows(const Eigen::VectorXd& z) const;
  Eigen::VectorXd link_slopes(const Eigen::VectorXd& z) const;

  // J(z) = S + Wf diag(g'(R v)) Rf with S constant.
  const SparseMatrix& constant_jacobian() const { return constant_; }
  const SparseMatrix& weight_full() const { return weight_full_; }  // size() x links
  const SparseMatrix& flow_full() const { return flow_full_; }      // links x size()
  SparseMatrix jacobian(const Eigen::VectorXd& z) const;
  // J(z)' x without forming J.
  Eigen::VectorXd jacobian_transpose_times(const Eigen::VectorXd& z,
                                           const Eigen::VectorXd& x) const;

 private:
  SparseMatrix constant_;
  SparseMatrix weight_full_;
  SparseMatrix flow_full_;
};

// z_k - clamp(z_k - G_k, l_k, u_k): zero iff z solves the MCP. Needs only the
// map G, not any solver state.
Eigen::VectorXd natural_residual(const McpInstance& mcp, const Eigen::VectorXd& z);

// max_k |(z_k - l_k) G_k| over lower-bounded rows, likewise for upper bounds.
double complementarity_violation(const McpInstance& mcp, const Eigen::VectorXd& z);

}  // namespace v2geq
