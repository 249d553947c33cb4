#include "dialnav/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "dialnav/error.hpp"

namespace dialnav {

namespace {

using json = nlohmann::json;

std::string get_string(const json& doc, const char* key, const std::string& locus, bool required = true) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) {
    if (required) throw Error(Errc::malformed, std::string("missing field '") + key + "'", locus);
    return {};
  }
  if (!it->is_string()) {
    throw Error(Errc::malformed, std::string("field '") + key + "' must be a string", locus);
  }
  return it->get<std::string>();
}

NodeId node_field(const json& doc, const char* key, const std::string& locus, const EnvironmentGraph& g) {
  NodeId id(get_string(doc, key, locus));
  if (!g.has_node(id)) {
    throw Error(Errc::unknown_node, "unknown node '" + id.str() + "' in field '" + key + "'", locus);
  }
  return id;
}

void report(ValidationMode mode, std::vector<Issue>& warnings, Errc code, std::string message,
            std::string locus) {
  if (mode == ValidationMode::strict) throw Error(code, std::move(message), std::move(locus));
  warnings.push_back(Issue{std::string(errc_name(code)), std::move(message), std::move(locus), false});
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open file", path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::malformed, std::string("syntax error: ") + e.what(), path.string());
  }
}

std::map<std::string, EpisodeAdapter>& adapter_registry() {
  static std::map<std::string, EpisodeAdapter> registry{
      {"canonical", [](const json& doc) { return doc; }}};
  return registry;
}

std::mutex& adapter_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val_seen: return "val_seen";
    case Split::val_unseen: return "val_unseen";
    case Split::test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view name) {
  for (Split s : kAllSplits) {
    if (split_name(s) == name) return s;
  }
  return std::nullopt;
}

bool operator==(const Episode& a, const Episode& b) {
  return a.episode_id == b.episode_id && a.scan_id == b.scan_id && a.start == b.start &&
         a.goal == b.goal && a.instruction == b.instruction && a.trajectory == b.trajectory &&
         a.dialog == b.dialog && a.split == b.split && a.scores == b.scores;
}

ParsedEpisode parse_episode(const nlohmann::json& doc, const EnvironmentGraph& g, ValidationMode mode) {
  if (!doc.is_object()) throw Error(Errc::malformed, "episode document must be an object");
  ParsedEpisode out;
  Episode& e = out.episode;
  e.episode_id = get_string(doc, "episode_id", "document");
  const std::string locus = "episode " + e.episode_id;
  e.scan_id = get_string(doc, "scan", locus);
  if (e.scan_id != g.scan_id()) {
    throw Error(Errc::missing_graph, "episode scan '" + e.scan_id + "' does not match graph '" +
                                         g.scan_id() + "'", locus);
  }
  if (auto split = get_string(doc, "split", locus, false); !split.empty()) {
    auto s = parse_split(split);
    if (!s) throw Error(Errc::malformed, "unknown split '" + split + "'", locus);
    e.split = *s;
  }
  e.start = node_field(doc, "start_node", locus, g);
  e.instruction = get_string(doc, "instruction", locus, false);

  auto goal_it = doc.find("goal");
  if (goal_it == doc.end() || !goal_it->is_object()) {
    throw Error(Errc::malformed, "missing object field 'goal'", locus);
  }
  auto gn = goal_it->find("nodes");
  if (gn == goal_it->end() || !gn->is_array()) {
    throw Error(Errc::malformed, "goal.nodes must be an array", locus);
  }
  std::vector<NodeId> goal_nodes;
  for (const auto& v : *gn) {
    if (!v.is_string()) throw Error(Errc::malformed, "goal.nodes must hold strings", locus);
    NodeId id(v.get<std::string>());
    if (!g.has_node(id)) throw Error(Errc::unknown_node, "unknown goal node '" + id.str() + "'", locus);
    goal_nodes.push_back(std::move(id));
  }
  if (goal_nodes.empty()) throw Error(Errc::empty_region, "goal region is empty", locus);
  std::optional<std::string> goal_room;
  if (auto r = goal_it->find("room"); r != goal_it->end() && r->is_string()) goal_room = r->get<std::string>();
  e.goal = make_goal(std::move(goal_nodes), std::move(goal_room));

  auto traj = doc.find("trajectory");
  if (traj == doc.end() || !traj->is_array() || traj->empty()) {
    throw Error(Errc::malformed, "trajectory must be a non-empty array", locus);
  }
  for (std::size_t i = 0; i < traj->size(); ++i) {
    const json& v = (*traj)[i];
    const std::string at = locus + " trajectory[" + std::to_string(i) + "]";
    if (!v.is_string()) throw Error(Errc::malformed, "trajectory entries must be strings", at);
    NodeId id(v.get<std::string>());
    if (!g.has_node(id)) throw Error(Errc::unknown_node, "unknown node '" + id.str() + "'", at);
    if (i > 0 && !g.adjacent(e.trajectory.back(), id)) {
      throw Error(Errc::not_adjacent,
                  "'" + e.trajectory.back().str() + "' and '" + id.str() + "' are not adjacent",
                  locus + " index " + std::to_string(i));
    }
    e.trajectory.push_back(std::move(id));
  }
  if (e.trajectory.front() != e.start) {
    throw Error(Errc::invalid_argument, "trajectory must begin at start_node", locus + " index 0");
  }
  if (!e.goal.contains(e.trajectory.back())) {
    report(mode, out.warnings, Errc::goal_not_reached,
           "trajectory ends at '" + e.trajectory.back().str() + "' outside the goal region", locus);
  }

  if (auto d = doc.find("dialog"); d != doc.end() && !d->is_null()) {
    if (!d->is_array()) throw Error(Errc::malformed, "dialog must be an array", locus);
    std::size_t position = 0;
    for (std::size_t i = 0; i < d->size(); ++i) {
      const json& jt = (*d)[i];
      const std::string at = locus + " dialog[" + std::to_string(i) + "]";
      if (!jt.is_object()) throw Error(Errc::malformed, "dialog entries must be objects", at);
      DialogTurn turn;
      turn.turn_index = static_cast<int>(i) + 1;
      turn.question = get_string(jt, "question", at);
      if (turn.question.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(Errc::malformed, "question must be non-empty", at);
      }
      turn.answer = get_string(jt, "answer", at, false);
      turn.node = node_field(jt, "node", at, g);
      if (auto est = jt.find("estimated_node"); est != jt.end() && !est->is_null()) {
        turn.estimated_node = node_field(jt, "estimated_node", at, g);
      }

      std::optional<std::size_t> resolved;
      if (auto ti = jt.find("trajectory_index"); ti != jt.end() && !ti->is_null()) {
        if (!ti->is_number_integer() || ti->get<std::int64_t>() < 0) {
          throw Error(Errc::malformed, "trajectory_index must be a non-negative integer", at);
        }
        const auto idx = ti->get<std::size_t>();
        if (idx < e.trajectory.size() && idx >= position && e.trajectory[idx] == turn.node) resolved = idx;
      } else {
        for (std::size_t p = position; p < e.trajectory.size(); ++p) {
          if (e.trajectory[p] == turn.node) {
            resolved = p;
            break;
          }
        }
      }
      if (!resolved) {
        report(mode, out.warnings, Errc::inconsistent_dialog,
               "dialog node '" + turn.node.str() +
                   "' is not the last visited node at this point of the trajectory",
               at);
        resolved = position;
      }
      position = *resolved;
      turn.trajectory_index = position;
      e.dialog.push_back(std::move(turn));
    }
  }

  if (auto sc = doc.find("scores"); sc != doc.end() && sc->is_object()) {
    Scores scores;
    for (const char* key : {"navigator", "guide"}) {
      auto v = sc->find(key);
      if (v == sc->end() || v->is_null()) continue;
      if (!v->is_number_integer() || v->get<int>() < 1 || v->get<int>() > 5) {
        throw Error(Errc::malformed, std::string("scores.") + key + " must be an integer in 1..5", locus);
      }
      (std::string_view(key) == "navigator" ? scores.navigator : scores.guide) = v->get<int>();
    }
    e.scores = scores;
  }
  return out;
}

ParsedEpisode parse_episode(std::istream& source, const EnvironmentGraph& g, ValidationMode mode) {
  json doc;
  try {
    doc = json::parse(source);
  } catch (const json::parse_error& e) {
    throw Error(Errc::malformed, std::string("episode syntax error: ") + e.what(),
                "byte " + std::to_string(e.byte));
  }
  return parse_episode(doc, g, mode);
}

nlohmann::json serialize_episode(const Episode& e) {
  json dialog = json::array();
  for (const auto& t : e.dialog) {
    json jt{{"question", t.question},
            {"answer", t.answer},
            {"node", t.node.str()},
            {"trajectory_index", t.trajectory_index}};
    if (t.estimated_node) jt["estimated_node"] = t.estimated_node->str();
    dialog.push_back(std::move(jt));
  }
  json goal{{"nodes", e.goal.node_ids}};
  if (e.goal.region_room_id) goal["room"] = *e.goal.region_room_id;
  json doc{{"episode_id", e.episode_id},
           {"scan", e.scan_id},
           {"split", split_name(e.split)},
           {"start_node", e.start.str()},
           {"goal", goal},
           {"instruction", e.instruction},
           {"trajectory", e.trajectory},
           {"dialog", dialog}};
  if (e.scores) {
    json s = json::object();
    if (e.scores->navigator) s["navigator"] = *e.scores->navigator;
    if (e.scores->guide) s["guide"] = *e.scores->guide;
    doc["scores"] = s;
  }
  return doc;
}

std::vector<SegmentInstance> to_segments(const Episode& e) {
  std::vector<SegmentInstance> out;
  out.reserve(e.dialog.size() + 1);
  for (std::size_t k = 0; k <= e.dialog.size(); ++k) {
    SegmentInstance s;
    s.episode_id = e.episode_id;
    s.scan_id = e.scan_id;
    s.instruction = e.instruction;
    s.goal = e.goal;
    s.segment_index = static_cast<int>(k);
    s.has_dialog = k > 0;
    s.split = e.split;
    const std::size_t end = k == 0 ? 0 : e.dialog[k - 1].trajectory_index;
    s.trajectory_prefix.assign(e.trajectory.begin(), e.trajectory.begin() + static_cast<std::ptrdiff_t>(end) + 1);
    s.dialog_prefix.assign(e.dialog.begin(), e.dialog.begin() + static_cast<std::ptrdiff_t>(k));
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json serialize_segment(const SegmentInstance& s) {
  json dialog = json::array();
  for (const auto& t : s.dialog_prefix) {
    json jt{{"turn_index", t.turn_index}, {"question", t.question}, {"answer", t.answer}, {"node", t.node.str()}};
    if (t.estimated_node) jt["estimated_node"] = t.estimated_node->str();
    dialog.push_back(std::move(jt));
  }
  json goal{{"nodes", s.goal.node_ids}};
  if (s.goal.region_room_id) goal["room"] = *s.goal.region_room_id;
  return json{{"episode_id", s.episode_id},
              {"scan", s.scan_id},
              {"split", split_name(s.split)},
              {"segment_index", s.segment_index},
              {"has_dialog", s.has_dialog},
              {"instruction", s.instruction},
              {"goal", goal},
              {"trajectory_prefix", s.trajectory_prefix},
              {"dialog_prefix", dialog}};
}

std::size_t count_words(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

void GraphStore::add(std::shared_ptr<const EnvironmentGraph> g) {
  std::lock_guard lock(mutex_);
  cache_[g->scan_id()] = std::move(g);
}

std::shared_ptr<const EnvironmentGraph> GraphStore::get(const std::string& scan_id) const {
  std::lock_guard lock(mutex_);
  if (auto it = cache_.find(scan_id); it != cache_.end()) return it->second;
  if (dir_.empty()) throw Error(Errc::missing_graph, "no graph for scan '" + scan_id + "'", scan_id);
  const auto path = dir_ / (scan_id + ".json");
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::missing_graph, "no graph for scan '" + scan_id + "'", path.string());
  }
  auto g = std::make_shared<const EnvironmentGraph>(load_graph_file(path.string()));
  cache_[scan_id] = g;
  return g;
}

StatsReport compute_statistics(std::span<const Episode> episodes, const GraphStore& graphs) {
  StatsReport r;
  r.episode_count = episodes.size();
  for (Split s : kAllSplits) r.split_counts[s] = 0;
  if (episodes.empty()) return r;

  r.shortest.min = r.human.min = std::numeric_limits<double>::infinity();
  double short_sum = 0, short_nodes = 0, human_sum = 0, human_nodes = 0, detour_sum = 0;
  std::size_t detour_n = 0, qa_sum = 0, questions = 0, answers = 0, q_words = 0, a_words = 0;
  for (const Episode& e : episodes) {
    auto g = graphs.get(e.scan_id);
    ++r.split_counts[e.split];
    const NodePath sp = g->shortest_path_to_region(e.start, e.goal);
    const double sl = g->path_length(sp);
    const double hl = g->path_length(e.trajectory);
    r.shortest.min = std::min(r.shortest.min, sl);
    r.shortest.max = std::max(r.shortest.max, sl);
    r.human.min = std::min(r.human.min, hl);
    r.human.max = std::max(r.human.max, hl);
    short_sum += sl;
    short_nodes += static_cast<double>(sp.size());
    human_sum += hl;
    human_nodes += static_cast<double>(e.trajectory.size());
    if (sl > 0.0) {
      detour_sum += hl / sl;
      ++detour_n;
    } else {
      ++r.detour_excluded;
    }
    const int qa = static_cast<int>(e.dialog.size());
    ++r.qa_histogram[qa];
    qa_sum += e.dialog.size();
    r.max_qa = std::max(r.max_qa, qa);
    if (qa == 0) ++r.zero_dialog;
    for (const auto& t : e.dialog) {
      ++questions;
      q_words += count_words(t.question);
      ++answers;
      a_words += count_words(t.answer);
    }
  }
  const double n = static_cast<double>(episodes.size());
  r.shortest.mean = short_sum / n;
  r.shortest.mean_nodes = short_nodes / n;
  r.human.mean = human_sum / n;
  r.human.mean_nodes = human_nodes / n;
  r.mean_detour_ratio = detour_n ? detour_sum / static_cast<double>(detour_n) : 0.0;
  r.mean_qa = static_cast<double>(qa_sum) / n;
  r.mean_question_words = questions ? static_cast<double>(q_words) / static_cast<double>(questions) : 0.0;
  r.mean_answer_words = answers ? static_cast<double>(a_words) / static_cast<double>(answers) : 0.0;
  return r;
}

nlohmann::json to_json(const StatsReport& r) {
  auto lengths = [](const LengthStats& s) {
    return json{{"min_m", s.min}, {"mean_m", s.mean}, {"max_m", s.max}, {"mean_nodes", s.mean_nodes}};
  };
  json splits = json::object();
  for (const auto& [s, c] : r.split_counts) splits[std::string(split_name(s))] = c;
  json hist = json::object();
  for (const auto& [k, c] : r.qa_histogram) hist[std::to_string(k)] = c;
  return json{{"episode_count", r.episode_count},
              {"split_counts", splits},
              {"shortest_path", lengths(r.shortest)},
              {"human_trajectory", lengths(r.human)},
              {"mean_detour_ratio", r.mean_detour_ratio},
              {"detour_excluded", r.detour_excluded},
              {"qa_histogram", hist},
              {"mean_qa", r.mean_qa},
              {"max_qa", r.max_qa},
              {"zero_dialog", r.zero_dialog},
              {"mean_question_words", r.mean_question_words},
              {"mean_answer_words", r.mean_answer_words}};
}

std::string render_text(const StatsReport& r) {
  std::ostringstream out;
  char buf[256];
  out << "episodes: " << r.episode_count << "\n";
  for (const auto& [s, c] : r.split_counts) out << "  " << split_name(s) << ": " << c << "\n";
  auto line = [&](const char* label, const LengthStats& s) {
    std::snprintf(buf, sizeof buf, "%s: min %.2f m, mean %.2f m, max %.2f m, mean nodes %.2f\n", label,
                  s.min, s.mean, s.max, s.mean_nodes);
    out << buf;
  };
  line("shortest path", r.shortest);
  line("human trajectory", r.human);
  std::snprintf(buf, sizeof buf, "mean detour ratio: %.3f (excluded %zu)\n", r.mean_detour_ratio,
                r.detour_excluded);
  out << buf;
  std::snprintf(buf, sizeof buf, "QA per episode: mean %.2f, max %d, zero-dialog %zu\n", r.mean_qa,
                r.max_qa, r.zero_dialog);
  out << buf;
  out << "QA histogram:";
  for (const auto& [k, c] : r.qa_histogram) out << " " << k << ":" << c;
  out << "\n";
  std::snprintf(buf, sizeof buf, "mean words: question %.2f, answer %.2f\n", r.mean_question_words,
                r.mean_answer_words);
  out << buf;
  return out.str();
}

DatasetManifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw Error(Errc::malformed, "manifest must be an object");
  DatasetManifest m;
  m.graph_dir = base_dir / get_string(doc, "graph_dir", "manifest");
  if (auto f = doc.find("format"); f != doc.end() && f->is_string()) m.format = f->get<std::string>();
  auto eps = doc.find("episodes");
  if (eps == doc.end() || !eps->is_array()) throw Error(Errc::malformed, "manifest.episodes must be an array");
  for (std::size_t i = 0; i < eps->size(); ++i) {
    const json& je = (*eps)[i];
    const std::string at = "manifest.episodes[" + std::to_string(i) + "]";
    if (!je.is_object()) throw Error(Errc::malformed, "manifest entries must be objects", at);
    ManifestEntry entry;
    entry.file = base_dir / get_string(je, "file", at);
    const std::string split = get_string(je, "split", at);
    auto s = parse_split(split);
    if (!s) throw Error(Errc::malformed, "unknown split '" + split + "'", at);
    entry.split = *s;
    m.entries.push_back(std::move(entry));
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_json_file(path), path.parent_path());
}

void register_episode_adapter(const std::string& format, EpisodeAdapter adapter) {
  std::lock_guard lock(adapter_mutex());
  adapter_registry()[format] = std::move(adapter);
}

const EpisodeAdapter& episode_adapter(const std::string& format) {
  std::lock_guard lock(adapter_mutex());
  auto& reg = adapter_registry();
  auto it = reg.find(format);
  if (it == reg.end()) throw Error(Errc::invalid_argument, "unknown episode format '" + format + "'");
  return it->second;
}

std::size_t LoadedDataset::error_count() const {
  return static_cast<std::size_t>(
      std::count_if(issues.begin(), issues.end(), [](const Issue& i) { return i.fatal; }));
}

LoadedDataset load_dataset(const DatasetManifest& manifest, ValidationMode mode) {
  LoadedDataset out;
  out.graphs = std::make_shared<GraphStore>(manifest.graph_dir);
  const EpisodeAdapter& adapt = episode_adapter(manifest.format);
  auto fail = [&](const Error& e, const std::string& where) {
    out.issues.push_back(Issue{std::string(errc_name(e.code())), e.what(),
                               e.locus().empty() ? where : where + ": " + e.locus(), true});
  };
  for (const ManifestEntry& entry : manifest.entries) {
    const std::string where = entry.file.string();
    json doc;
    try {
      doc = read_json_file(entry.file);
    } catch (const Error& e) {
      fail(e, where);
      continue;
    }
    std::vector<json> docs;
    if (doc.is_array()) {
      for (auto& d : doc) docs.push_back(std::move(d));
    } else {
      docs.push_back(std::move(doc));
    }
    for (const json& raw : docs) {
      try {
        json canonical = adapt(raw);
        if (!canonical.contains("split")) canonical["split"] = split_name(entry.split);
        const std::string scan = canonical.is_object() && canonical.contains("scan") && canonical["scan"].is_string()
                                     ? canonical["scan"].get<std::string>()
                                     : std::string();
        auto g = out.graphs->get(scan);
        ParsedEpisode parsed = parse_episode(canonical, *g, mode);
        if (parsed.episode.split != entry.split) {
          throw Error(Errc::invalid_argument,
                      "episode split '" + std::string(split_name(parsed.episode.split)) +
                          "' differs from manifest split '" + std::string(split_name(entry.split)) + "'",
                      "episode " + parsed.episode.episode_id);
        }
        for (auto& w : parsed.warnings) {
          w.locus = where + ": " + w.locus;
          out.issues.push_back(std::move(w));
        }
        out.episodes.push_back(std::move(parsed.episode));
      } catch (const Error& e) {
        fail(e, where);
      }
    }
  }
  std::stable_sort(out.episodes.begin(), out.episodes.end(),
                   [](const Episode& a, const Episode& b) { return a.episode_id < b.episode_id; });
  return out;
}

SplitTable split_table(std::span<const Episode> episodes) {
  SplitTable t;
  for (Split s : kAllSplits) t.by_split[s] = {};
  for (const Episode& e : episodes) {
    SplitCounts& c = t.by_split[e.split];
    ++c.episodes;
    c.segments += e.dialog.size() + 1;
    c.with_dialog += e.dialog.size();
  }
  for (const auto& [s, c] : t.by_split) {
    t.total.episodes += c.episodes;
    t.total.segments += c.segments;
    t.total.with_dialog += c.with_dialog;
  }
  return t;
}

SplitTable split_table(const DatasetManifest& manifest) {
  LoadedDataset data = load_dataset(manifest, ValidationMode::lenient);
  for (const Issue& i : data.issues) {
    if (i.fatal) throw Error(Errc::io, "unresolvable manifest entry: " + i.message, i.locus);
  }
  return split_table(data.episodes);
}

nlohmann::json to_json(const SplitTable& t) {
  auto counts = [](const SplitCounts& c) {
    return json{{"episodes", c.episodes}, {"segments", c.segments}, {"with_dialog", c.with_dialog}};
  };
  json out = json::object();
  for (const auto& [s, c] : t.by_split) out[std::string(split_name(s))] = counts(c);
  out["total"] = counts(t.total);
  return out;
}

}  // namespace dialnav
