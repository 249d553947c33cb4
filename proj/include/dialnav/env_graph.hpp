#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace dialnav {

/// Opaque viewpoint identifier, unique within one graph.
class NodeId {
 public:
  NodeId() = default;
  explicit NodeId(std::string value) : value_(std::move(value)) {}

  const std::string& str() const noexcept { return value_; }
  bool empty() const noexcept { return value_.empty(); }

  friend auto operator<=>(const NodeId&, const NodeId&) = default;

 private:
  std::string value_;
};

void to_json(nlohmann::json& j, const NodeId& id);
void from_json(const nlohmann::json& j, NodeId& id);

using NodePath = std::vector<NodeId>;

struct Position {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Position&, const Position&) = default;
};

double euclidean(const Position& a, const Position& b);

struct NodeAnnotation {
  std::string room_id;
  std::optional<std::string> caption;
  std::vector<std::string> objects;
  std::optional<std::string> image_ref;
};

struct Room {
  std::string room_id;
  std::string room_type;
  int floor = 0;
  std::optional<double> area;
  std::vector<std::string> objects;
};

struct EnvEdge {
  NodeId a;
  NodeId b;
  double length = 0.0;
};

struct GoalRegion {
  std::vector<NodeId> node_ids;  // sorted, unique
  std::optional<std::string> region_room_id;

  bool contains(const NodeId& id) const;

  friend bool operator==(const GoalRegion&, const GoalRegion&) = default;
};

GoalRegion make_goal(std::vector<NodeId> nodes, std::optional<std::string> room = std::nullopt);

struct RoomDistance {
  std::string room_id;
  std::string room_type;
  int floor = 0;
  std::optional<double> area;
  std::vector<std::string> objects;
  std::optional<double> distance;  // absent when the room has no nodes
};

struct HouseSummary {
  int floors = 0;
  int rooms = 0;
  std::vector<RoomDistance> room_list;  // ascending distance to the goal region
};

nlohmann::json to_json(const HouseSummary& summary);

/// A house as an undirected, connected, weighted navigation graph.
///
/// Immutable once built. All-pairs geodesics are computed at construction so
/// every query is a pure lookup and the object can be shared across threads.
/// Node indices follow lexicographic NodeId order, so index comparisons are
/// NodeId comparisons.
class EnvironmentGraph {
 public:
  struct Node {
    NodeId id;
    Position position;
    NodeAnnotation annotation;
  };

  struct Neighbor {
    std::size_t index;
    double length;
  };

  EnvironmentGraph(std::string scan_id, std::vector<Node> nodes, std::vector<Room> rooms,
                   std::vector<EnvEdge> edges);

  const std::string& scan_id() const noexcept { return scan_id_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  bool has_node(const NodeId& id) const;
  /// Throws Error(unknown_node).
  std::size_t index_of(const NodeId& id) const;
  const Node& node(std::size_t index) const { return nodes_.at(index); }
  const Node& node(const NodeId& id) const { return nodes_[index_of(id)]; }
  std::span<const Node> nodes() const noexcept { return nodes_; }
  std::span<const EnvEdge> edges() const noexcept { return edges_; }
  std::span<const Neighbor> neighbors(std::size_t index) const { return adjacency_.at(index); }
  std::vector<NodeId> neighbor_ids(const NodeId& id) const;
  bool adjacent(const NodeId& a, const NodeId& b) const;
  std::optional<double> edge_length(std::size_t a, std::size_t b) const;

  const std::map<std::string, Room>& rooms() const noexcept { return rooms_; }
  const Room& room(const std::string& room_id) const;
  const Room& room_of(const NodeId& id) const { return room(node(id).annotation.room_id); }

  double geodesic(std::size_t a, std::size_t b) const { return dist_[a * nodes_.size() + b]; }
  double geodesic_distance(const NodeId& a, const NodeId& b) const;
  double euclidean_distance(const NodeId& a, const NodeId& b) const;
  /// Geodesic to the nearest member of the region.
  double distance_to_region(const NodeId& from, const GoalRegion& region) const;
  double euclidean_to_region(const NodeId& from, const GoalRegion& region) const;

  /// Minimum-length path from start to the nearest region node. Ties go to the
  /// lexicographically smallest terminal, then the lexicographically smallest
  /// sequence.
  NodePath shortest_path_to_region(const NodeId& start, const GoalRegion& region) const;
  NodePath shortest_path(const NodeId& from, const NodeId& to) const;

  /// Sum of edge lengths; throws Error(not_adjacent) naming the offending index.
  double path_length(std::span<const NodeId> path) const;

  HouseSummary house_summary(const GoalRegion& region) const;

  void validate_region(const GoalRegion& region) const;

  nlohmann::json to_json() const;

 private:
  NodePath lexicographic_shortest(std::size_t from, std::size_t to) const;
  void compute_geodesics();

  std::string scan_id_;
  std::vector<Node> nodes_;
  std::map<std::string, Room> rooms_;
  std::vector<EnvEdge> edges_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<Neighbor>> adjacency_;
  std::vector<double> dist_;
};

/// Tolerance used when comparing path lengths for ties.
bool lengths_tie(double a, double b);

EnvironmentGraph load_graph(std::istream& source);
EnvironmentGraph load_graph(const nlohmann::json& doc);
EnvironmentGraph load_graph_file(const std::string& path);

}  // namespace dialnav

template <>
struct std::hash<dialnav::NodeId> {
  std::size_t operator()(const dialnav::NodeId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
