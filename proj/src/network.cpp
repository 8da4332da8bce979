#include "gridcharge/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <utility>

#include "gridcharge/format.hpp"

namespace gridcharge::net {

ParseError::ParseError(std::size_t line, const std::string& what)
    : NetworkError("line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(s);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::set<NodeId> parse_id_list(const std::string& text) {
  std::set<NodeId> ids;
  for (const auto& part : split(text, ',')) {
    if (trim(part).empty()) continue;
    NodeId id = 0;
    if (!parse_number(part, id))
      throw NetworkError("bad node id '" + part + "' in list '" + text + "'");
    ids.insert(id);
  }
  return ids;
}

void parse_header(const std::string& line, std::size_t lineno,
                  NetworkSpec& spec) {
  std::istringstream words(line.substr(1));
  std::string word;
  while (words >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ParseError(lineno, "header entry '" + word + "' is not key=value");
    const std::string key = word.substr(0, eq);
    const std::string value = word.substr(eq + 1);
    if (key == "root") {
      if (!parse_number(value, spec.root) || spec.root <= 0)
        throw ParseError(lineno, "root must be a positive integer");
    } else if (key == "voltage") {
      if (!parse_number(value, spec.nominal_voltage) ||
          !std::isfinite(spec.nominal_voltage) || spec.nominal_voltage <= 0)
        throw ParseError(lineno, "voltage must be a positive number");
    } else {
      spec.metadata[key] = value;
    }
  }
}

}  // namespace

NetworkSpec parse_network(std::istream& in) {
  NetworkSpec spec;
  bool have_header = false;
  std::set<std::pair<NodeId, NodeId>> seen;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (!have_header && line.find('=') != std::string::npos) {
        parse_header(line, lineno, spec);
        have_header = true;
      }
      continue;
    }
    if (!have_header)
      throw ParseError(lineno, "missing '# root=<id> voltage=<v>' header");

    const auto fields = split(line, ',');
    if (fields.size() != 4)
      throw ParseError(lineno, "expected from,to,resistance,reactance");
    EdgeSpec e;
    if (!parse_number(fields[0], e.from_node) ||
        !parse_number(fields[1], e.to_node) || e.from_node <= 0 ||
        e.to_node <= 0)
      throw ParseError(lineno, "node ids must be positive integers");
    if (!parse_number(fields[2], e.resistance) ||
        !parse_number(fields[3], e.reactance) ||
        !std::isfinite(e.resistance) || !std::isfinite(e.reactance))
      throw ParseError(lineno, "impedance must be a finite decimal");
    if (e.from_node == e.to_node)
      throw ParseError(lineno, "self-loop on node " + std::to_string(e.from_node));
    if (e.resistance < 0 || e.reactance < 0)
      throw ParseError(lineno, "negative impedance");
    if (e.resistance == 0 && e.reactance == 0)
      throw ParseError(lineno, "zero impedance");
    const auto key = std::minmax(e.from_node, e.to_node);
    if (!seen.insert(key).second)
      throw ParseError(lineno, "duplicate edge " + std::to_string(key.first) +
                                   "-" + std::to_string(key.second));
    spec.nodes.insert(e.from_node);
    spec.nodes.insert(e.to_node);
    spec.edges.push_back(e);
  }
  if (!have_header)
    throw ParseError(lineno, "missing '# root=<id> voltage=<v>' header");
  spec.nodes.insert(spec.root);
  return spec;
}

NetworkSpec parse_network_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NetworkError("cannot open network file '" + path + "'");
  return parse_network(in);
}

std::string serialize_network(const NetworkSpec& spec) {
  std::string out = "# root=" + std::to_string(spec.root) +
                    " voltage=" + format_double(spec.nominal_voltage);
  for (const auto& [key, value] : spec.metadata) out += " " + key + "=" + value;
  out += '\n';
  for (const auto& e : spec.edges) {
    out += std::to_string(e.from_node) + "," + std::to_string(e.to_node) + "," +
           format_double(e.resistance) + "," + format_double(e.reactance) + "\n";
  }
  return out;
}

std::set<NodeId> prune_list(const NetworkSpec& spec) {
  const auto it = spec.metadata.find("prune");
  if (it == spec.metadata.end()) return {};
  return parse_id_list(it->second);
}

NetworkSpec prune_nodes(const NetworkSpec& spec, const std::set<NodeId>& remove) {
  if (remove.count(spec.root))
    throw NetworkError("cannot remove root node " + std::to_string(spec.root));
  NetworkSpec out = spec;
  out.metadata.erase("prune");
  out.nodes.clear();
  out.edges.clear();
  for (NodeId n : spec.nodes)
    if (!remove.count(n)) out.nodes.insert(n);
  for (const auto& e : spec.edges)
    if (!remove.count(e.from_node) && !remove.count(e.to_node))
      out.edges.push_back(e);

  // Every retained node must still be reachable from the root.
  std::map<NodeId, std::vector<NodeId>> adj;
  for (const auto& e : out.edges) {
    adj[e.from_node].push_back(e.to_node);
    adj[e.to_node].push_back(e.from_node);
  }
  std::set<NodeId> reached{out.root};
  std::deque<NodeId> queue{out.root};
  while (!queue.empty()) {
    const NodeId n = queue.front();
    queue.pop_front();
    for (NodeId m : adj[n])
      if (reached.insert(m).second) queue.push_back(m);
  }
  for (NodeId n : out.nodes)
    if (!reached.count(n))
      throw NetworkError("removal disconnects retained node " + std::to_string(n));
  return out;
}

std::size_t RootedTree::index_of(NodeId id) const {
  const auto it = index_.find(id);
  if (it == index_.end())
    throw NetworkError("node " + std::to_string(id) + " is not in the tree");
  return it->second;
}

RootedTree validate_tree(const NetworkSpec& spec) {
  if (!spec.nodes.count(spec.root))
    throw NetworkError("root " + std::to_string(spec.root) + " is not a node");

  struct Arc {
    NodeId to;
    std::size_t edge;
  };
  std::map<NodeId, std::vector<Arc>> adj;
  for (std::size_t k = 0; k < spec.edges.size(); ++k) {
    const auto& e = spec.edges[k];
    for (NodeId n : {e.from_node, e.to_node})
      if (!spec.nodes.count(n))
        throw NetworkError("edge endpoint " + std::to_string(n) +
                           " is not a declared node");
    if (e.from_node == e.to_node)
      throw NetworkError("self-loop on node " + std::to_string(e.from_node));
    if (!(e.resistance >= 0) || !(e.reactance >= 0) ||
        !std::isfinite(e.resistance) || !std::isfinite(e.reactance) ||
        (e.resistance == 0 && e.reactance == 0))
      throw NetworkError("edge " + std::to_string(e.from_node) + "-" +
                         std::to_string(e.to_node) + " has invalid impedance");
    adj[e.from_node].push_back({e.to_node, k});
    adj[e.to_node].push_back({e.from_node, k});
  }
  // Sorting neighbours makes the index assignment independent of how the
  // edge records were ordered or oriented.
  for (auto& [node, arcs] : adj)
    std::sort(arcs.begin(), arcs.end(),
              [](const Arc& a, const Arc& b) { return a.to < b.to; });

  RootedTree tree;
  tree.nominal_voltage_ = spec.nominal_voltage;
  std::vector<std::size_t> via_edge;
  auto visit = [&](NodeId id, std::size_t parent, std::size_t depth,
                   std::size_t edge) {
    const std::size_t idx = tree.ids_.size();
    tree.ids_.push_back(id);
    tree.index_[id] = idx;
    tree.parent_.push_back(parent);
    tree.depth_.push_back(depth);
    tree.children_.emplace_back();
    via_edge.push_back(edge);
    return idx;
  };
  visit(spec.root, 0, 0, 0);
  for (std::size_t head = 0; head < tree.ids_.size(); ++head) {
    const NodeId n = tree.ids_[head];
    for (const Arc& arc : adj[n]) {
      if (head != 0 && arc.edge == via_edge[head]) continue;
      if (tree.index_.count(arc.to))
        throw NetworkError("cycle detected through edge " + std::to_string(n) +
                           "-" + std::to_string(arc.to));
      const std::size_t child = visit(arc.to, head, tree.depth_[head] + 1, arc.edge);
      tree.children_[head].push_back(child);
    }
  }
  if (tree.ids_.size() != spec.nodes.size()) {
    for (NodeId n : spec.nodes)
      if (!tree.index_.count(n))
        throw NetworkError("node " + std::to_string(n) +
                           " is disconnected from root " +
                           std::to_string(spec.root));
  }
  if (spec.edges.size() != spec.nodes.size() - 1)
    throw NetworkError("multiple parents: " + std::to_string(spec.edges.size()) +
                       " edges for " + std::to_string(spec.nodes.size()) +
                       " nodes");

  tree.edges_.resize(tree.size() - 1);
  for (std::size_t c = 1; c < tree.size(); ++c) {
    const auto& e = spec.edges[via_edge[c]];
    tree.edges_[c - 1] = {tree.parent_[c], c, e.resistance, e.reactance};
  }
  return tree;
}

SubtreeIndex subtree_index(const RootedTree& tree) {
  const std::size_t n = tree.size();
  SubtreeIndex idx;
  idx.nodes.resize(n);
  idx.edges.resize(n);
  // Breadth-first indices: iterating backwards visits children before parents.
  for (std::size_t j = n; j-- > 0;) {
    auto& nodes = idx.nodes[j];
    auto& edges = idx.edges[j];
    nodes.push_back(j);
    for (std::size_t c : tree.children(j)) {
      nodes.insert(nodes.end(), idx.nodes[c].begin(), idx.nodes[c].end());
      edges.push_back(c);
      edges.insert(edges.end(), idx.edges[c].begin(), idx.edges[c].end());
    }
    std::sort(nodes.begin(), nodes.end());
    std::sort(edges.begin(), edges.end());
  }
  return idx;
}

}  // namespace gridcharge::net
