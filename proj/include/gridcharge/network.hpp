#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridcharge::net {

using NodeId = int;

/// A branch between two buses. Impedances are per-unit.
struct EdgeSpec {
  NodeId from_node = 0;
  NodeId to_node = 0;
  double resistance = 0.0;
  double reactance = 0.0;

  bool operator==(const EdgeSpec&) const = default;
};

/// Unvalidated network description as read from a file.
struct NetworkSpec {
  std::set<NodeId> nodes;
  std::vector<EdgeSpec> edges;
  NodeId root = 1;
  double nominal_voltage = 1.0;
  /// Free-form `key=value` header entries other than root/voltage
  /// (for example `prune=13,17,19`).
  std::map<std::string, std::string> metadata;

  bool operator==(const NetworkSpec&) const = default;
};

class NetworkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public NetworkError {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Reads the CSV edge-list format:
///
///     # root=<id> voltage=<float> [key=value ...]
///     from,to,resistance,reactance
///
/// Other lines starting with `#` are comments. Blank lines are skipped.
/// No topology checks happen here; see validate_tree().
NetworkSpec parse_network(std::istream& in);
NetworkSpec parse_network_file(const std::string& path);

/// Writes `spec` back in the format accepted by parse_network().
std::string serialize_network(const NetworkSpec& spec);

/// Removes `remove` and every incident edge. The remaining edges must still
/// reach every retained node from the root.
NetworkSpec prune_nodes(const NetworkSpec& spec, const std::set<NodeId>& remove);

/// Node list stored under the `prune` header key, empty if absent.
std::set<NodeId> prune_list(const NetworkSpec& spec);

/// A validated, root-oriented tree. Nodes are addressed by a dense index in
/// breadth-first order from the root (index 0 is the root), so parents always
/// precede children.
class RootedTree {
 public:
  struct Edge {
    std::size_t parent = 0;  // index of from_node
    std::size_t child = 0;   // index of to_node
    double resistance = 0.0;
    double reactance = 0.0;
  };

  std::size_t size() const { return ids_.size(); }
  std::size_t root() const { return 0; }
  NodeId id(std::size_t index) const { return ids_[index]; }
  std::size_t index_of(NodeId id) const;
  bool contains(NodeId id) const { return index_.count(id) != 0; }

  /// Parent index; undefined for the root.
  std::size_t parent(std::size_t index) const { return parent_[index]; }
  std::size_t depth(std::size_t index) const { return depth_[index]; }
  const std::vector<std::size_t>& children(std::size_t index) const {
    return children_[index];
  }

  /// Edge entering node `child`. Edge ids equal child indices minus one,
  /// so edges are also in breadth-first order.
  const Edge& edge_into(std::size_t child) const { return edges_[child - 1]; }
  const std::vector<Edge>& edges() const { return edges_; }
  static std::size_t edge_id(std::size_t child) { return child - 1; }

  double nominal_voltage() const { return nominal_voltage_; }
  const std::vector<NodeId>& ids() const { return ids_; }

 private:
  friend RootedTree validate_tree(const NetworkSpec& spec);

  std::vector<NodeId> ids_;
  std::map<NodeId, std::size_t> index_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> depth_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<Edge> edges_;
  double nominal_voltage_ = 1.0;
};

/// Orients every edge away from the root and checks the tree invariants:
/// connected, acyclic, exactly |nodes| - 1 edges.
RootedTree validate_tree(const NetworkSpec& spec);

/// Node and edge sets of the subtree rooted at each node, in tree indices.
struct SubtreeIndex {
  std::vector<std::vector<std::size_t>> nodes;  // V(j), sorted
  std::vector<std::vector<std::size_t>> edges;  // E(j) as child indices, sorted
};

/// Builds the index in one post-order pass.
SubtreeIndex subtree_index(const RootedTree& tree);

}  // namespace gridcharge::net
