#include "dialnav/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "dialnav/error.hpp"

namespace dialnav {

using json = nlohmann::json;

std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::stop: return "stop";
    case Termination::guess: return "guess";
    case Termination::budget: return "budget";
    case Termination::disconnect: return "disconnect";
    case Termination::timeout: return "timeout";
  }
  return "stop";
}

std::optional<Termination> parse_termination(std::string_view name) {
  for (auto t : {Termination::stop, Termination::guess, Termination::budget, Termination::disconnect,
                 Termination::timeout}) {
    if (termination_name(t) == name) return t;
  }
  return std::nullopt;
}

json to_json(const EpisodeOutcome& o) {
  json records = json::array();
  for (const auto& r : o.localization_records) {
    records.push_back({{"turn_index", r.turn_index},
                       {"true_node", r.true_node.str()},
                       {"estimated_node", r.estimated_node.str()}});
  }
  return json{{"episode_id", o.episode_id},
              {"scan_id", o.scan_id},
              {"start", o.start.str()},
              {"goal", o.goal.node_ids},
              {"visited", o.visited},
              {"stopped", o.stopped},
              {"termination", termination_name(o.termination)},
              {"dialog_turns", o.dialog_turns},
              {"localization_records", records}};
}

LocalizationSummary localization_error(std::span<const LocalizationRecord> records,
                                       const EnvironmentGraph& g) {
  LocalizationSummary s;
  if (records.empty()) return s;
  double sum = 0.0;
  std::size_t hits = 0;
  for (const auto& r : records) {
    const double err = g.euclidean_distance(r.true_node, r.estimated_node);
    sum += err;
    if (err <= kLocalizationMargin) ++hits;
  }
  s.count = records.size();
  s.mean_error = sum / static_cast<double>(records.size());
  s.accuracy = static_cast<double>(hits) / static_cast<double>(records.size());
  return s;
}

MetricReport score_episode(const EpisodeOutcome& o, const EnvironmentGraph& g) {
  if (o.visited.empty()) throw Error(Errc::invalid_argument, "outcome has no visited nodes", o.episode_id);
  g.validate_region(o.goal);
  const NodeId& last = o.visited.back();

  MetricReport r;
  r.episode_id = o.episode_id;
  r.success = (o.stopped && o.goal.contains(last)) ? 1 : 0;
  r.oracle_success =
      std::any_of(o.visited.begin(), o.visited.end(), [&](const NodeId& n) { return o.goal.contains(n); }) ? 1 : 0;
  r.shortest_length = g.distance_to_region(o.start, o.goal);
  r.path_length = g.path_length(o.visited);
  if (r.shortest_length == 0.0) {
    r.spl = r.success;
  } else {
    r.spl = r.success * r.shortest_length / std::max(r.path_length, r.shortest_length);
  }
  r.nav_error = g.distance_to_region(last, o.goal);
  r.nav_error_euclidean = g.euclidean_to_region(last, o.goal);
  r.nsc = static_cast<int>(o.visited.size()) - 1;
  r.dtc = o.dialog_turns;
  r.goal_progress = r.shortest_length - r.nav_error;
  const LocalizationSummary le = localization_error(o.localization_records, g);
  r.le_mean = le.mean_error;
  r.le_accuracy = le.accuracy;
  r.le_count = le.count;
  return r;
}

json to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"episode_id", r.episode_id},
              {"success", r.success},
              {"oracle_success", r.oracle_success},
              {"spl", r.spl},
              {"nav_error", r.nav_error},
              {"nav_error_euclidean", r.nav_error_euclidean},
              {"nsc", r.nsc},
              {"dtc", r.dtc},
              {"le_mean", opt(r.le_mean)},
              {"le_accuracy_3m", opt(r.le_accuracy)},
              {"le_count", r.le_count},
              {"goal_progress", r.goal_progress},
              {"path_length", r.path_length},
              {"shortest_length", r.shortest_length},
              {"conventions",
               {{"nav_error", kNavErrorConvention},
                {"goal_progress", kGoalProgressConvention},
                {"localization_error", kLocalizationConvention}}}};
}

SummaryRow aggregate(std::span<const MetricReport> reports) {
  if (reports.empty()) throw Error(Errc::invalid_argument, "cannot aggregate an empty report list");
  SummaryRow row;
  row.episodes = reports.size();
  double le_sum = 0.0, a3_sum = 0.0;
  std::size_t le_n = 0;
  for (const auto& r : reports) {
    row.sr += r.success;
    row.osr += r.oracle_success;
    row.spl += r.spl;
    row.ne += r.nav_error;
    row.nsc += r.nsc;
    row.dtc += r.dtc;
    row.gp += r.goal_progress;
    if (r.le_mean && r.le_count > 0) {
      le_sum += *r.le_mean * static_cast<double>(r.le_count);
      a3_sum += r.le_accuracy.value_or(0.0) * static_cast<double>(r.le_count);
      le_n += r.le_count;
    }
  }
  const double n = static_cast<double>(reports.size());
  row.sr = 100.0 * row.sr / n;
  row.osr = 100.0 * row.osr / n;
  row.spl = 100.0 * row.spl / n;
  row.ne /= n;
  row.nsc /= n;
  row.dtc /= n;
  row.gp /= n;
  if (le_n > 0) {
    row.le = le_sum / static_cast<double>(le_n);
    row.a3 = 100.0 * a3_sum / static_cast<double>(le_n);
  }
  return row;
}

json to_json(const SummaryRow& row) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"episodes", row.episodes}, {"SR", row.sr},   {"OSR", row.osr}, {"SPL", row.spl},
              {"NE", row.ne},             {"NSC", row.nsc}, {"DTC", row.dtc}, {"LE", opt(row.le)},
              {"A@3", opt(row.a3)},       {"GP", row.gp}};
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_header() { return "episode_id,SR,OSR,SPL,NE,NSC,DTC,LE,GP"; }

std::string csv_row(const MetricReport& r) {
  std::string out = r.episode_id;
  out += "," + std::to_string(r.success);
  out += "," + std::to_string(r.oracle_success);
  out += "," + format_number(r.spl);
  out += "," + format_number(r.nav_error);
  out += "," + std::to_string(r.nsc);
  out += "," + std::to_string(r.dtc);
  out += "," + (r.le_mean ? format_number(*r.le_mean) : std::string());
  out += "," + format_number(r.goal_progress);
  return out;
}

std::string summary_csv_header() { return "split,episodes,SR,OSR,SPL,NE,NSC,DTC,LE,A@3,GP"; }

std::string summary_csv_row(const std::string& label, const SummaryRow& row) {
  std::string out = label + "," + std::to_string(row.episodes);
  for (double v : {row.sr, row.osr, row.spl, row.ne, row.nsc, row.dtc}) out += "," + format_number(v);
  out += "," + (row.le ? format_number(*row.le) : std::string());
  out += "," + (row.a3 ? format_number(*row.a3) : std::string());
  out += "," + format_number(row.gp);
  return out;
}

}  // namespace dialnav
