#include <algorithm>
#include <cmath>

#include "v2geq/error.hpp"
#include "v2geq/mcp_builder.hpp"

namespace v2geq {

namespace {

bool is_primal(BlockKind k) { return k == BlockKind::Primal; }
bool is_equality(BlockKind k) {
  return k == BlockKind::Price || k == BlockKind::EqualityMultiplier;
}

}  // namespace

void McpBuilder::begin_block(std::string name, BlockKind kind) {
  for (const auto& b : blocks_) {
    if (b.name == name) throw ModelError("duplicate catalog block " + name);
  }
  current_name_ = std::move(name);
  current_kind_ = kind;
}

void McpBuilder::note(BlockKind kind, std::size_t index) {
  if (current_name_.empty()) throw ModelError("symbol added outside a catalog block");
  const bool same_segment = (is_primal(kind) && is_primal(current_kind_)) ||
                            (is_equality(kind) && is_equality(current_kind_)) ||
                            (kind == BlockKind::InequalityMultiplier &&
                             current_kind_ == BlockKind::InequalityMultiplier);
  if (!same_segment) {
    throw ModelError("block " + current_name_ + " received a symbol of the wrong kind");
  }
  if (!blocks_.empty() && blocks_.back().name == current_name_) {
    blocks_.back().end = index + 1;
    return;
  }
  blocks_.push_back({current_name_, current_kind_, index, index + 1});
}

std::size_t McpBuilder::add_primal(std::string label, double lower, double upper) {
  if (!eq_labels_.empty() || !ineq_labels_.empty()) {
    throw ModelError("primal variable " + label + " declared after the first row");
  }
  const std::size_t idx = primal_labels_.size();
  note(BlockKind::Primal, idx);
  primal_labels_.push_back(std::move(label));
  lower_.push_back(lower);
  upper_.push_back(upper);
  return idx;
}

std::size_t McpBuilder::add_eq_row(std::string label, double rhs) {
  const std::size_t idx = eq_labels_.size();
  note(BlockKind::Price, idx);
  eq_labels_.push_back(std::move(label));
  rhs_eq_.push_back(rhs);
  return idx;
}

std::size_t McpBuilder::add_ineq_row(std::string label, double rhs) {
  const std::size_t idx = ineq_labels_.size();
  note(BlockKind::InequalityMultiplier, idx);
  ineq_labels_.push_back(std::move(label));
  rhs_ineq_.push_back(rhs);
  return idx;
}

void McpBuilder::eq_coef(std::size_t row, std::size_t var, double value) {
  if (row >= eq_count() || var >= primal_count()) {
    throw ModelError("equality coefficient out of range in block " + current_name_);
  }
  if (value != 0.0) eq_.emplace_back(static_cast<int>(row), static_cast<int>(var), value);
}

void McpBuilder::ineq_coef(std::size_t row, std::size_t var, double value) {
  if (row >= ineq_count() || var >= primal_count()) {
    throw ModelError("inequality coefficient out of range in block " + current_name_);
  }
  if (value != 0.0) ineq_.emplace_back(static_cast<int>(row), static_cast<int>(var), value);
}

void McpBuilder::add_h_const(std::size_t var, double value) {
  if (var >= primal_count()) throw ModelError("H constant out of range");
  h_const_.emplace_back(var, value);
}

void McpBuilder::add_h_linear(std::size_t row_var, std::size_t col_var, double value) {
  if (row_var >= primal_count() || col_var >= primal_count()) {
    throw ModelError("H linear term out of range");
  }
  if (value != 0.0) {
    h_linear_.emplace_back(static_cast<int>(row_var), static_cast<int>(col_var), value);
  }
}

std::size_t McpBuilder::add_link(const LinkFunction& f) {
  links_.push_back(f);
  return links_.size() - 1;
}

void McpBuilder::link_flow(std::size_t link, std::size_t var, double coef) {
  if (link >= links_.size() || var >= primal_count()) throw ModelError("link flow out of range");
  if (coef != 0.0) flow_.emplace_back(static_cast<int>(link), static_cast<int>(var), coef);
}

void McpBuilder::link_weight(std::size_t var, std::size_t link, double coef) {
  if (link >= links_.size() || var >= primal_count()) throw ModelError("link weight out of range");
  if (coef != 0.0) weight_.emplace_back(static_cast<int>(var), static_cast<int>(link), coef);
}

McpInstance McpBuilder::build(VariableCatalog& catalog) const {
  const std::size_t nv = primal_count();
  const std::size_t ne = eq_count();
  const std::size_t ni = ineq_count();
  const auto inv = static_cast<int>(nv);
  McpInstance m;
  m.primal_size = nv;
  m.eq_size = ne;
  m.ineq_size = ni;
  const std::size_t n = nv + ne + ni;
  const double inf = kInf;
  m.lower.resize(static_cast<Eigen::Index>(n));
  m.upper.resize(static_cast<Eigen::Index>(n));
  m.labels.reserve(n);
  for (std::size_t i = 0; i < nv; ++i) {
    m.lower[static_cast<Eigen::Index>(i)] = lower_[i];
    m.upper[static_cast<Eigen::Index>(i)] = upper_[i];
    m.labels.push_back(primal_labels_[i]);
  }
  for (std::size_t i = 0; i < ne; ++i) {
    m.lower[static_cast<Eigen::Index>(nv + i)] = -inf;
    m.upper[static_cast<Eigen::Index>(nv + i)] = inf;
    m.labels.push_back(eq_labels_[i]);
  }
  for (std::size_t i = 0; i < ni; ++i) {
    m.lower[static_cast<Eigen::Index>(nv + ne + i)] = 0.0;
    m.upper[static_cast<Eigen::Index>(nv + ne + i)] = inf;
    m.labels.push_back(ineq_labels_[i]);
  }

  m.h_const = Eigen::VectorXd::Zero(inv);
  for (const auto& [var, value] : h_const_) m.h_const[static_cast<Eigen::Index>(var)] += value;
  m.h_linear.resize(inv, inv);
  m.h_linear.setFromTriplets(h_linear_.begin(), h_linear_.end());
  const auto k = static_cast<int>(links_.size());
  m.links = links_;
  m.link_flow.resize(k, inv);
  m.link_flow.setFromTriplets(flow_.begin(), flow_.end());
  m.link_weight.resize(inv, k);
  m.link_weight.setFromTriplets(weight_.begin(), weight_.end());
  m.b_eq.resize(static_cast<int>(ne), inv);
  m.b_eq.setFromTriplets(eq_.begin(), eq_.end());
  m.rhs_eq = Eigen::Map<const Eigen::VectorXd>(rhs_eq_.data(), static_cast<Eigen::Index>(ne));
  m.b_ineq.resize(static_cast<int>(ni), inv);
  m.b_ineq.setFromTriplets(ineq_.begin(), ineq_.end());
  m.rhs_ineq =
      Eigen::Map<const Eigen::VectorXd>(rhs_ineq_.data(), static_cast<Eigen::Index>(ni));
  m.finalize();

  catalog.blocks.clear();
  for (const auto& b : blocks_) {
    std::size_t offset = b.begin;
    if (is_equality(b.kind)) offset += nv;
    if (b.kind == BlockKind::InequalityMultiplier) offset += nv + ne;
    catalog.blocks.push_back({b.name, b.kind, offset, b.end - b.begin});
  }
  std::stable_sort(catalog.blocks.begin(), catalog.blocks.end(),
                   [](const CatalogBlock& x, const CatalogBlock& y) { return x.offset < y.offset; });
  return m;
}

}  // namespace v2geq
