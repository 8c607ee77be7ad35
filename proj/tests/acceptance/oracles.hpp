#pragma once

// Reference implementations the acceptance run checks the library against.
// They share data types with the library but none of its algorithms.

#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "v2geq/net_model.hpp"
#include "v2geq/paths.hpp"

namespace oracles {

using v2geq::EvParams;
using v2geq::NodeId;
using v2geq::OdPair;
using v2geq::TransportNetwork;

// Canonical path key: "1-2-4|c@1;d@2" (kind and node-sequence index per action).
std::string path_key(const std::vector<NodeId>& nodes,
                     const std::vector<std::pair<std::size_t, bool>>& actions);
std::string path_key(const v2geq::ExpandedPath& p);

// Depth-first enumeration of every simple r-s path.
std::vector<std::vector<NodeId>> all_simple_paths(const TransportNetwork& net, NodeId r, NodeId s);

// Every simple path times every admissible station pattern with at most two
// actions, kept when each segment between consecutive stops satisfies the
// departure/arrival energy inequality literally. Values are the action
// energies in path order.
std::map<std::string, std::vector<double>> brute_force_paths(const TransportNetwork& net, OdPair od,
                                                             const EvParams& ev, bool v2g);

// Strongly connected random network on at most 8 nodes with up to two
// stations and one OD pair; arc energy beta * d is drawn per arc.
struct RandomGraph {
  TransportNetwork net;
  OdPair od;
};
RandomGraph random_graph(std::mt19937_64& rng);

// All solutions of the LCP 0 <= z, Mz + q >= 0, z'(Mz + q) = 0 found by
// trying every complementary basis.
std::vector<Eigen::VectorXd> lcp_by_bases(const Eigen::MatrixXd& M, const Eigen::VectorXd& q);

}  // namespace oracles
