#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "v2geq/error.hpp"
#include "v2geq/link_costs.hpp"
#include "v2geq/mcp.hpp"

namespace v2geq {

double LinkFunction::value(double flow) const {
  return kind == Kind::Bpr ? bpr_time(t0, capacity, flow)
                           : smoothed_wait(station, period_h, flow);
}

double LinkFunction::slope(double flow) const {
  return kind == Kind::Bpr ? bpr_slope(t0, capacity, flow)
                           : smoothed_wait_slope(station, period_h, flow);
}

void McpInstance::finalize() {
  const std::size_t n = size();
  const std::size_t nv = primal_size;
  const std::size_t k = links.size();
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ModelError("MCP dimension mismatch in " + what);
  };
  check(static_cast<std::size_t>(lower.size()) == n &&
            static_cast<std::size_t>(upper.size()) == n, "bounds");
  check(labels.empty() || labels.size() == n, "labels");
  check(static_cast<std::size_t>(h_const.size()) == nv, "H constant");
  check(static_cast<std::size_t>(h_linear.rows()) == nv &&
            static_cast<std::size_t>(h_linear.cols()) == nv, "H linear");
  check(static_cast<std::size_t>(link_flow.rows()) == k &&
            static_cast<std::size_t>(link_flow.cols()) == nv, "link flow map");
  check(static_cast<std::size_t>(link_weight.rows()) == nv &&
            static_cast<std::size_t>(link_weight.cols()) == k, "link weight map");
  check(static_cast<std::size_t>(b_eq.rows()) == eq_size &&
            static_cast<std::size_t>(b_eq.cols()) == nv, "equality block");
  check(static_cast<std::size_t>(rhs_eq.size()) == eq_size, "equality rhs");
  check(static_cast<std::size_t>(b_ineq.rows()) == ineq_size &&
            static_cast<std::size_t>(b_ineq.cols()) == nv, "inequality block");
  check(static_cast<std::size_t>(rhs_ineq.size()) == ineq_size, "inequality rhs");
  for (std::size_t i = nv; i < nv + eq_size; ++i) {
    check(std::isinf(lower[i]) && std::isinf(upper[i]), "equality multiplier bounds");
  }
  for (std::size_t i = nv + eq_size; i < n; ++i) {
    check(lower[i] == 0.0 && std::isinf(upper[i]), "inequality multiplier bounds");
  }

  Triplets t;
  t.reserve(h_linear.nonZeros() + 2 * (b_eq.nonZeros() + b_ineq.nonZeros()));
  for (int c = 0; c < h_linear.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(h_linear, c); it; ++it) {
      t.emplace_back(it.row(), it.col(), it.value());
    }
  }
  auto add_block = [&](const SparseMatrix& b, std::size_t row_offset) {
    for (int c = 0; c < b.outerSize(); ++c) {
      for (SparseMatrix::InnerIterator it(b, c); it; ++it) {
        const auto r = static_cast<int>(row_offset) + it.row();
        t.emplace_back(it.col(), r, it.value());   // B' in the primal rows
        t.emplace_back(r, it.col(), -it.value());  // -B in the dual rows
      }
    }
  };
  add_block(b_eq, nv);
  add_block(b_ineq, nv + eq_size);
  constant_.resize(static_cast<int>(n), static_cast<int>(n));
  constant_.setFromTriplets(t.begin(), t.end());

  Triplets tw, tf;
  for (int c = 0; c < link_weight.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(link_weight, c); it; ++it) {
      tw.emplace_back(it.row(), it.col(), it.value());
    }
  }
  for (int c = 0; c < link_flow.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(link_flow, c); it; ++it) {
      tf.emplace_back(it.row(), it.col(), it.value());
    }
  }
  weight_full_.resize(static_cast<int>(n), static_cast<int>(k));
  weight_full_.setFromTriplets(tw.begin(), tw.end());
  flow_full_.resize(static_cast<int>(k), static_cast<int>(n));
  flow_full_.setFromTriplets(tf.begin(), tf.end());
}

Eigen::VectorXd McpInstance::primal_map(const Eigen::VectorXd& v) const {
  Eigen::VectorXd h = h_const + h_linear * v;
  if (!links.empty()) {
    const Eigen::VectorXd x = link_flow * v;
    Eigen::VectorXd g(x.size());
    for (Eigen::Index a = 0; a < x.size(); ++a) g[a] = links[a].value(x[a]);
    h += link_weight * g;
  }
  return h;
}

Eigen::VectorXd McpInstance::evaluate(const Eigen::VectorXd& z) const {
  const auto nv = static_cast<Eigen::Index>(primal_size);
  const auto ne = static_cast<Eigen::Index>(eq_size);
  const auto ni = static_cast<Eigen::Index>(ineq_size);
  const Eigen::VectorXd v = z.head(nv);
  Eigen::VectorXd g(z.size());
  g.head(nv) = primal_map(v) + b_eq.transpose() * z.segment(nv, ne) +
               b_ineq.transpose() * z.segment(nv + ne, ni);
  g.segment(nv, ne) = rhs_eq - b_eq * v;
  g.segment(nv + ne, ni) = rhs_ineq - b_ineq * v;
  return g;
}

Eigen::VectorXd McpInstance::link_flows(const Eigen::VectorXd& z) const {
  return link_flow * z.head(static_cast<Eigen::Index>(primal_size));
}

Eigen::VectorXd McpInstance::link_slopes(const Eigen::VectorXd& z) const {
  const Eigen::VectorXd x = link_flows(z);
  Eigen::VectorXd d(x.size());
  for (Eigen::Index a = 0; a < x.size(); ++a) d[a] = links[a].slope(x[a]);
  return d;
}

SparseMatrix McpInstance::jacobian(const Eigen::VectorXd& z) const {
  if (links.empty()) return constant_;
  const Eigen::VectorXd d = link_slopes(z);
  SparseMatrix scaled = flow_full_;
  for (int c = 0; c < scaled.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(scaled, c); it; ++it) it.valueRef() *= d[it.row()];
  }
  SparseMatrix coupling = weight_full_ * scaled;
  return constant_ + coupling;
}

Eigen::VectorXd McpInstance::jacobian_transpose_times(const Eigen::VectorXd& z,
                                                      const Eigen::VectorXd& x) const {
  Eigen::VectorXd out = constant_.transpose() * x;
  if (!links.empty()) {
    const Eigen::VectorXd d = link_slopes(z);
    const Eigen::VectorXd y = d.cwiseProduct(weight_full_.transpose() * x);
    out += flow_full_.transpose() * y;
  }
  return out;
}

Eigen::VectorXd natural_residual(const McpInstance& mcp, const Eigen::VectorXd& z) {
  const Eigen::VectorXd g = mcp.evaluate(z);
  Eigen::VectorXd r(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    r[k] = z[k] - std::clamp(z[k] - g[k], mcp.lower[k], mcp.upper[k]);
  }
  return r;
}

double complementarity_violation(const McpInstance& mcp, const Eigen::VectorXd& z) {
  const Eigen::VectorXd g = mcp.evaluate(z);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    if (std::isfinite(mcp.lower[k])) {
      worst = std::max(worst, std::abs((z[k] - mcp.lower[k]) * std::max(g[k], 0.0)));
    }
    if (std::isfinite(mcp.upper[k])) {
      worst = std::max(worst, std::abs((mcp.upper[k] - z[k]) * std::min(g[k], 0.0)));
    }
  }
  return worst;
}

}  // namespace v2geq
