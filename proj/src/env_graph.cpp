#include "dialnav/env_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "dialnav/error.hpp"

namespace dialnav {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using json = nlohmann::json;

const json& require(const json& obj, const char* key, const std::string& locus) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(Errc::malformed, std::string("missing field '") + key + "'", locus);
  }
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& locus) {
  const json& v = require(obj, key, locus);
  if (!v.is_string()) {
    throw Error(Errc::malformed, std::string("field '") + key + "' must be a string", locus);
  }
  return v.get<std::string>();
}

double require_number(const json& obj, const char* key, const std::string& locus) {
  const json& v = require(obj, key, locus);
  if (!v.is_number()) {
    throw Error(Errc::malformed, std::string("field '") + key + "' must be a number", locus);
  }
  double d = v.get<double>();
  if (!std::isfinite(d)) {
    throw Error(Errc::malformed, std::string("field '") + key + "' must be finite", locus);
  }
  return d;
}

std::vector<std::string> string_list(const json& obj, const char* key, const std::string& locus) {
  std::vector<std::string> out;
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return out;
  if (!it->is_array()) {
    throw Error(Errc::malformed, std::string("field '") + key + "' must be an array", locus);
  }
  for (const auto& v : *it) {
    if (!v.is_string()) {
      throw Error(Errc::malformed, std::string("field '") + key + "' must hold strings", locus);
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::optional<std::string> optional_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::malformed: return "malformed";
    case Errc::dangling_endpoint: return "dangling_endpoint";
    case Errc::disconnected: return "disconnected";
    case Errc::duplicate_id: return "duplicate_id";
    case Errc::unknown_node: return "unknown_node";
    case Errc::unknown_room: return "unknown_room";
    case Errc::invalid_edge: return "invalid_edge";
    case Errc::not_adjacent: return "not_adjacent";
    case Errc::empty_region: return "empty_region";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::inconsistent_dialog: return "inconsistent_dialog";
    case Errc::goal_not_reached: return "goal_not_reached";
    case Errc::wrong_phase: return "wrong_phase";
    case Errc::budget_exhausted: return "budget_exhausted";
    case Errc::guess_disabled: return "guess_disabled";
    case Errc::missing_graph: return "missing_graph";
    case Errc::io: return "io";
  }
  return "unknown";
}

void to_json(nlohmann::json& j, const NodeId& id) { j = id.str(); }
void from_json(const nlohmann::json& j, NodeId& id) { id = NodeId(j.get<std::string>()); }

double euclidean(const Position& a, const Position& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool lengths_tie(double a, double b) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) <= 1e-9 * scale;
}

bool GoalRegion::contains(const NodeId& id) const {
  return std::binary_search(node_ids.begin(), node_ids.end(), id);
}

GoalRegion make_goal(std::vector<NodeId> nodes, std::optional<std::string> room) {
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return GoalRegion{std::move(nodes), std::move(room)};
}

EnvironmentGraph::EnvironmentGraph(std::string scan_id, std::vector<Node> nodes,
                                   std::vector<Room> rooms, std::vector<EnvEdge> edges)
    : scan_id_(std::move(scan_id)), nodes_(std::move(nodes)), edges_(std::move(edges)) {
  if (nodes_.empty()) {
    throw Error(Errc::malformed, "graph has no nodes", scan_id_);
  }
  for (auto& room : rooms) {
    const std::string id = room.room_id;
    if (id.empty()) throw Error(Errc::malformed, "room with empty room_id", scan_id_);
    if (!rooms_.emplace(id, std::move(room)).second) {
      throw Error(Errc::duplicate_id, "duplicate room_id '" + id + "'", "room " + id);
    }
  }

  std::sort(nodes_.begin(), nodes_.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.id.empty()) throw Error(Errc::malformed, "node with empty id", scan_id_);
    if (!index_.emplace(n.id.str(), i).second) {
      throw Error(Errc::duplicate_id, "duplicate node id '" + n.id.str() + "'", "node " + n.id.str());
    }
    if (!std::isfinite(n.position.x) || !std::isfinite(n.position.y) ||
        !std::isfinite(n.position.z)) {
      throw Error(Errc::malformed, "non-finite position", "node " + n.id.str());
    }
    if (!rooms_.contains(n.annotation.room_id)) {
      throw Error(Errc::unknown_room,
                  "node '" + n.id.str() + "' references unknown room '" + n.annotation.room_id + "'",
                  "node " + n.id.str());
    }
  }

  adjacency_.resize(nodes_.size());
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    EnvEdge& edge = edges_[e];
    const std::string locus = "edge " + std::to_string(e) + " (" + edge.a.str() + "-" + edge.b.str() + ")";
    for (const NodeId* end : {&edge.a, &edge.b}) {
      if (!index_.contains(end->str())) {
        throw Error(Errc::dangling_endpoint, "edge endpoint '" + end->str() + "' is not a node", locus);
      }
    }
    const std::size_t a = index_.at(edge.a.str());
    const std::size_t b = index_.at(edge.b.str());
    if (a == b) throw Error(Errc::invalid_edge, "self-loop edge", locus);
    if (!(edge.length > 0.0) || !std::isfinite(edge.length)) {
      throw Error(Errc::invalid_edge, "edge length must be positive and finite", locus);
    }
    if (!seen.emplace(std::min(a, b), std::max(a, b)).second) {
      throw Error(Errc::duplicate_id, "duplicate edge", locus);
    }
    adjacency_[a].push_back({b, edge.length});
    adjacency_[b].push_back({a, edge.length});
  }
  for (auto& adj : adjacency_) {
    std::sort(adj.begin(), adj.end(), [](const Neighbor& x, const Neighbor& y) { return x.index < y.index; });
  }

  // Connectivity.
  std::vector<bool> reached(nodes_.size(), false);
  std::vector<std::size_t> stack{0};
  reached[0] = true;
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    for (const auto& nb : adjacency_[cur]) {
      if (!reached[nb.index]) {
        reached[nb.index] = true;
        stack.push_back(nb.index);
      }
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!reached[i]) {
      throw Error(Errc::disconnected,
                  "graph is disconnected: '" + nodes_[i].id.str() + "' unreachable from '" +
                      nodes_[0].id.str() + "'",
                  "node " + nodes_[i].id.str());
    }
  }

  compute_geodesics();
}

void EnvironmentGraph::compute_geodesics() {
  const std::size_t n = nodes_.size();
  dist_.assign(n * n, kInf);
  using Item = std::pair<double, std::size_t>;
  std::vector<double> d(n);
  for (std::size_t src = 0; src < n; ++src) {
    std::fill(d.begin(), d.end(), kInf);
    d[src] = 0.0;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    heap.emplace(0.0, src);
    while (!heap.empty()) {
      auto [du, u] = heap.top();
      heap.pop();
      if (du > d[u]) continue;
      for (const auto& nb : adjacency_[u]) {
        const double cand = du + nb.length;
        if (cand < d[nb.index]) {
          d[nb.index] = cand;
          heap.emplace(cand, nb.index);
        }
      }
    }
    // Keep the matrix exactly symmetric: the lower-indexed source wins.
    for (std::size_t t = src; t < n; ++t) {
      dist_[src * n + t] = d[t];
      dist_[t * n + src] = d[t];
    }
  }
}

bool EnvironmentGraph::has_node(const NodeId& id) const { return index_.contains(id.str()); }

std::size_t EnvironmentGraph::index_of(const NodeId& id) const {
  auto it = index_.find(id.str());
  if (it == index_.end()) {
    throw Error(Errc::unknown_node, "unknown node '" + id.str() + "'", "node " + id.str());
  }
  return it->second;
}

std::vector<NodeId> EnvironmentGraph::neighbor_ids(const NodeId& id) const {
  std::vector<NodeId> out;
  for (const auto& nb : adjacency_[index_of(id)]) out.push_back(nodes_[nb.index].id);
  return out;
}

std::optional<double> EnvironmentGraph::edge_length(std::size_t a, std::size_t b) const {
  const auto& adj = adjacency_.at(a);
  auto it = std::lower_bound(adj.begin(), adj.end(), b,
                             [](const Neighbor& nb, std::size_t v) { return nb.index < v; });
  if (it == adj.end() || it->index != b) return std::nullopt;
  return it->length;
}

bool EnvironmentGraph::adjacent(const NodeId& a, const NodeId& b) const {
  return edge_length(index_of(a), index_of(b)).has_value();
}

const Room& EnvironmentGraph::room(const std::string& room_id) const {
  auto it = rooms_.find(room_id);
  if (it == rooms_.end()) throw Error(Errc::unknown_room, "unknown room '" + room_id + "'", room_id);
  return it->second;
}

double EnvironmentGraph::geodesic_distance(const NodeId& a, const NodeId& b) const {
  return geodesic(index_of(a), index_of(b));
}

double EnvironmentGraph::euclidean_distance(const NodeId& a, const NodeId& b) const {
  return euclidean(node(a).position, node(b).position);
}

void EnvironmentGraph::validate_region(const GoalRegion& region) const {
  if (region.node_ids.empty()) throw Error(Errc::empty_region, "goal region is empty");
  for (const auto& id : region.node_ids) index_of(id);
}

double EnvironmentGraph::distance_to_region(const NodeId& from, const GoalRegion& region) const {
  validate_region(region);
  const std::size_t s = index_of(from);
  double best = kInf;
  for (const auto& id : region.node_ids) best = std::min(best, geodesic(s, index_of(id)));
  return best;
}

double EnvironmentGraph::euclidean_to_region(const NodeId& from, const GoalRegion& region) const {
  validate_region(region);
  double best = kInf;
  for (const auto& id : region.node_ids) best = std::min(best, euclidean_distance(from, id));
  return best;
}

NodePath EnvironmentGraph::lexicographic_shortest(std::size_t from, std::size_t to) const {
  NodePath path{nodes_[from].id};
  std::size_t cur = from;
  while (cur != to) {
    const double remaining = geodesic(cur, to);
    std::size_t next = cur;
    for (const auto& nb : adjacency_[cur]) {
      if (lengths_tie(nb.length + geodesic(nb.index, to), remaining)) {
        next = nb.index;
        break;
      }
    }
    cur = next;
    path.push_back(nodes_[cur].id);
  }
  return path;
}

NodePath EnvironmentGraph::shortest_path(const NodeId& from, const NodeId& to) const {
  return lexicographic_shortest(index_of(from), index_of(to));
}

NodePath EnvironmentGraph::shortest_path_to_region(const NodeId& start, const GoalRegion& region) const {
  validate_region(region);
  const std::size_t s = index_of(start);
  double best = kInf;
  for (const auto& id : region.node_ids) best = std::min(best, geodesic(s, index_of(id)));
  // node_ids are sorted, so the first tying member is the smallest NodeId.
  for (const auto& id : region.node_ids) {
    const std::size_t t = index_of(id);
    if (lengths_tie(geodesic(s, t), best)) return lexicographic_shortest(s, t);
  }
  return {start};
}

double EnvironmentGraph::path_length(std::span<const NodeId> path) const {
  double total = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const std::size_t cur = index_of(path[i]);
    if (i == 0) continue;
    const std::size_t prev = index_of(path[i - 1]);
    auto len = edge_length(prev, cur);
    if (!len) {
      throw Error(Errc::not_adjacent,
                  "'" + path[i - 1].str() + "' and '" + path[i].str() + "' are not adjacent",
                  "index " + std::to_string(i));
    }
    total += *len;
  }
  return total;
}

HouseSummary EnvironmentGraph::house_summary(const GoalRegion& region) const {
  validate_region(region);
  HouseSummary summary;
  std::set<int> floors;
  std::map<std::string, double> room_dist;
  for (const auto& n : nodes_) {
    const double d = distance_to_region(n.id, region);
    auto [it, inserted] = room_dist.emplace(n.annotation.room_id, d);
    if (!inserted) it->second = std::min(it->second, d);
  }
  for (const auto& [id, room] : rooms_) {
    floors.insert(room.floor);
    RoomDistance rd{room.room_id, room.room_type, room.floor, room.area, room.objects, std::nullopt};
    if (auto it = room_dist.find(id); it != room_dist.end()) rd.distance = it->second;
    summary.room_list.push_back(std::move(rd));
  }
  std::stable_sort(summary.room_list.begin(), summary.room_list.end(),
                   [](const RoomDistance& a, const RoomDistance& b) {
                     return a.distance.value_or(kInf) < b.distance.value_or(kInf);
                   });
  summary.floors = static_cast<int>(floors.size());
  summary.rooms = static_cast<int>(rooms_.size());
  return summary;
}

nlohmann::json to_json(const HouseSummary& summary) {
  json rooms = json::array();
  for (const auto& r : summary.room_list) {
    json j{{"room_id", r.room_id},
           {"room_type", r.room_type},
           {"floor", r.floor},
           {"objects", r.objects}};
    j["area"] = r.area ? json(*r.area) : json(nullptr);
    j["distance"] = r.distance ? json(*r.distance) : json(nullptr);
    rooms.push_back(std::move(j));
  }
  return json{{"floors", summary.floors}, {"rooms", summary.rooms}, {"room_list", std::move(rooms)}};
}

nlohmann::json EnvironmentGraph::to_json() const {
  json nodes = json::array();
  for (const auto& n : nodes_) {
    json j{{"id", n.id.str()},
           {"x", n.position.x},
           {"y", n.position.y},
           {"z", n.position.z},
           {"room_id", n.annotation.room_id},
           {"objects", n.annotation.objects}};
    if (n.annotation.caption) j["caption"] = *n.annotation.caption;
    if (n.annotation.image_ref) j["image_ref"] = *n.annotation.image_ref;
    nodes.push_back(std::move(j));
  }
  json rooms = json::array();
  for (const auto& [id, r] : rooms_) {
    json j{{"room_id", id}, {"room_type", r.room_type}, {"floor", r.floor}, {"objects", r.objects}};
    if (r.area) j["area"] = *r.area;
    rooms.push_back(std::move(j));
  }
  json edges = json::array();
  for (const auto& e : edges_) edges.push_back({{"a", e.a.str()}, {"b", e.b.str()}, {"length", e.length}});
  return json{{"scan_id", scan_id_}, {"nodes", nodes}, {"rooms", rooms}, {"edges", edges}};
}

EnvironmentGraph load_graph(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(Errc::malformed, "graph document must be an object");
  const std::string scan_id = require_string(doc, "scan_id", "document");

  std::vector<Room> rooms;
  if (auto it = doc.find("rooms"); it != doc.end()) {
    if (!it->is_array()) throw Error(Errc::malformed, "'rooms' must be an array", scan_id);
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& r = (*it)[i];
      const std::string locus = "rooms[" + std::to_string(i) + "]";
      if (!r.is_object()) throw Error(Errc::malformed, "room entry must be an object", locus);
      Room room;
      room.room_id = require_string(r, "room_id", locus);
      room.room_type = r.contains("room_type") ? require_string(r, "room_type", locus) : std::string();
      if (auto f = r.find("floor"); f != r.end()) {
        if (!f->is_number_integer()) throw Error(Errc::malformed, "'floor' must be an integer", locus);
        room.floor = f->get<int>();
      }
      if (auto a = r.find("area"); a != r.end() && !a->is_null()) room.area = require_number(r, "area", locus);
      room.objects = string_list(r, "objects", locus);
      rooms.push_back(std::move(room));
    }
  }

  const json& jnodes = require(doc, "nodes", scan_id);
  if (!jnodes.is_array()) throw Error(Errc::malformed, "'nodes' must be an array", scan_id);
  std::vector<EnvironmentGraph::Node> nodes;
  std::unordered_map<std::string, Position> positions;
  for (std::size_t i = 0; i < jnodes.size(); ++i) {
    const json& jn = jnodes[i];
    std::string locus = "nodes[" + std::to_string(i) + "]";
    if (!jn.is_object()) throw Error(Errc::malformed, "node entry must be an object", locus);
    EnvironmentGraph::Node n;
    n.id = NodeId(require_string(jn, "id", locus));
    locus = "node " + n.id.str();
    n.position = {require_number(jn, "x", locus), require_number(jn, "y", locus),
                  require_number(jn, "z", locus)};
    n.annotation.room_id = require_string(jn, "room_id", locus);
    n.annotation.objects = string_list(jn, "objects", locus);
    n.annotation.caption = optional_string(jn, "caption");
    n.annotation.image_ref = optional_string(jn, "image_ref");
    if (!positions.emplace(n.id.str(), n.position).second) {
      throw Error(Errc::duplicate_id, "duplicate node id '" + n.id.str() + "'", locus);
    }
    nodes.push_back(std::move(n));
  }

  const json& jedges = require(doc, "edges", scan_id);
  if (!jedges.is_array()) throw Error(Errc::malformed, "'edges' must be an array", scan_id);
  std::vector<EnvEdge> edges;
  for (std::size_t i = 0; i < jedges.size(); ++i) {
    const json& je = jedges[i];
    const std::string locus = "edges[" + std::to_string(i) + "]";
    if (!je.is_object()) throw Error(Errc::malformed, "edge entry must be an object", locus);
    EnvEdge e{NodeId(require_string(je, "a", locus)), NodeId(require_string(je, "b", locus)), 0.0};
    for (const NodeId* end : {&e.a, &e.b}) {
      if (!positions.contains(end->str())) {
        throw Error(Errc::dangling_endpoint, "edge endpoint '" + end->str() + "' is not a node",
                    locus + " (" + e.a.str() + "-" + e.b.str() + ")");
      }
    }
    if (auto l = je.find("length"); l != je.end() && !l->is_null()) {
      e.length = require_number(je, "length", locus);
    } else {
      e.length = euclidean(positions.at(e.a.str()), positions.at(e.b.str()));
    }
    edges.push_back(std::move(e));
  }

  return EnvironmentGraph(scan_id, std::move(nodes), std::move(rooms), std::move(edges));
}

EnvironmentGraph load_graph(std::istream& source) {
  json doc;
  try {
    doc = json::parse(source);
  } catch (const json::parse_error& e) {
    throw Error(Errc::malformed, std::string("graph syntax error: ") + e.what(),
                "byte " + std::to_string(e.byte));
  }
  return load_graph(doc);
}

EnvironmentGraph load_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open graph file", path);
  try {
    return load_graph(in);
  } catch (const Error& e) {
    throw Error(e.code(), e.what(), path + ": " + e.locus());
  }
}

}  // namespace dialnav
