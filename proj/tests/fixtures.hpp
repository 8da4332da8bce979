#pragma once

#include <random>
#include <sstream>
#include <string>

#include "gridcharge/allocation.hpp"
#include "gridcharge/network.hpp"

namespace fixture {

using gridcharge::alloc::Occupancy;
using gridcharge::net::NetworkSpec;
using gridcharge::net::RootedTree;
using gridcharge::net::SubtreeIndex;

struct Net {
  RootedTree tree;
  SubtreeIndex idx;

  explicit Net(const NetworkSpec& spec)
      : tree(gridcharge::net::validate_tree(spec)), idx(gridcharge::net::subtree_index(tree)) {}
};

inline Net from_text(const std::string& text) {
  std::istringstream in(text);
  return Net(gridcharge::net::parse_network(in));
}

inline Net from_file(const std::string& path) {
  auto spec = gridcharge::net::parse_network_file(path);
  return Net(gridcharge::net::prune_nodes(spec, gridcharge::net::prune_list(spec)));
}

inline NetworkSpec random_spec(std::mt19937_64& rng, int n, double rlo = 0.01, double rhi = 0.3) {
  NetworkSpec spec;
  std::uniform_real_distribution<double> imp(rlo, rhi);
  spec.nodes.insert(1);
  for (int k = 2; k <= n; ++k) {
    std::uniform_int_distribution<int> pick(1, k - 1);
    const double r = imp(rng);
    const double x = imp(rng);
    spec.edges.push_back({pick(rng), k, r, x});
    spec.nodes.insert(k);
  }
  return spec;
}

/// Each non-root node gets 0..max_count vehicles; at least one overall.
inline Occupancy random_occupancy(std::mt19937_64& rng, std::size_t n, int max_count = 3) {
  Occupancy occ(n);
  std::uniform_int_distribution<int> count(0, max_count);
  for (std::size_t j = 1; j < n; ++j) occ.set(j, count(rng));
  if (occ.empty()) occ.set(1 + rng() % (n - 1), 1);
  return occ;
}

}  // namespace fixture
