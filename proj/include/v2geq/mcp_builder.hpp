#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "v2geq/assembly.hpp"
#include "v2geq/mcp.hpp"

namespace v2geq {

// Incremental construction of an McpInstance. All primal variables must be
// declared before the first row; row indices are returned relative to their
// own block (equalities or inequalities) and mapped into z by `eq_z` /
// `ineq_z` once the row counts are final.
class McpBuilder {
 public:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  void begin_block(std::string name, BlockKind kind);

  std::size_t add_primal(std::string label, double lower, double upper);
  std::size_t add_eq_row(std::string label, double rhs = 0.0);
  std::size_t add_ineq_row(std::string label, double rhs = 0.0);

  void eq_coef(std::size_t row, std::size_t var, double value);
  void ineq_coef(std::size_t row, std::size_t var, double value);
  void add_h_const(std::size_t var, double value);
  void add_h_linear(std::size_t row_var, std::size_t col_var, double value);
  std::size_t add_link(const LinkFunction& f);
  void link_flow(std::size_t link, std::size_t var, double coef);
  void link_weight(std::size_t var, std::size_t link, double coef);

  std::size_t primal_count() const { return primal_labels_.size(); }
  std::size_t eq_count() const { return eq_labels_.size(); }
  std::size_t ineq_count() const { return ineq_labels_.size(); }
  std::size_t eq_z(std::size_t row) const { return primal_count() + row; }
  std::size_t ineq_z(std::size_t row) const { return primal_count() + eq_count() + row; }

  McpInstance build(VariableCatalog& catalog) const;

 private:
  struct PendingBlock {
    std::string name;
    BlockKind kind;
    std::size_t begin;  // within its own segment
    std::size_t end;
  };
  std::vector<PendingBlock> blocks_;
  std::string current_name_;
  BlockKind current_kind_ = BlockKind::Primal;

  std::vector<std::string> primal_labels_, eq_labels_, ineq_labels_;
  std::vector<double> lower_, upper_;
  std::vector<double> rhs_eq_, rhs_ineq_;
  Triplets eq_, ineq_, h_linear_, flow_, weight_;
  std::vector<std::pair<std::size_t, double>> h_const_;
  std::vector<LinkFunction> links_;

  void note(BlockKind kind, std::size_t index);
};

}  // namespace v2geq
