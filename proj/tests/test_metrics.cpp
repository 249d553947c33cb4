#include <random>

#include <gtest/gtest.h>

#include "dialnav/error.hpp"
#include "dialnav/metrics.hpp"
#include "support/oracles.hpp"

using namespace dialnav;

namespace {

NodePath path_of(const std::string& letters) {
  NodePath p;
  for (char c : letters) p.emplace_back(std::string(1, c));
  return p;
}

EpisodeOutcome outcome(const std::string& start, const std::vector<std::string>& goal, const std::string& visited,
                       bool stopped = true) {
  EpisodeOutcome o;
  o.episode_id = "e";
  o.scan_id = "line";
  o.start = NodeId(start);
  std::vector<NodeId> ids(goal.begin(), goal.end());
  o.goal = make_goal(ids);
  o.visited = path_of(visited);
  o.stopped = stopped;
  o.termination = stopped ? Termination::stop : Termination::budget;
  return o;
}

}  // namespace

TEST(Score, ShortestPathIsPerfect) {
  const auto g = oracle::line_graph(5, 1.5);
  const auto r = score_episode(outcome("A", {"D"}, "ABCD"), g);
  EXPECT_EQ(r.success, 1);
  EXPECT_EQ(r.oracle_success, 1);
  EXPECT_DOUBLE_EQ(r.spl, 1.0);
  EXPECT_DOUBLE_EQ(r.nav_error, 0.0);
  EXPECT_EQ(r.nsc, 3);
  EXPECT_DOUBLE_EQ(r.goal_progress, 4.5);
}

TEST(Score, DetourHalvesSpl) {
  const auto g = oracle::line_graph(7, 1.0);  // A..G, G is 6 m from A
  const auto r = score_episode(outcome("A", {"G"}, "ABCDCBABCDEFG"), g);
  EXPECT_DOUBLE_EQ(r.shortest_length, 6.0);
  EXPECT_DOUBLE_EQ(r.path_length, 12.0);
  EXPECT_DOUBLE_EQ(r.spl, 0.5);
  EXPECT_EQ(r.nsc, 12);
}

TEST(Score, GoalProgressFromSixToTwo) {
  const auto g = oracle::line_graph(7, 1.0);
  const auto r = score_episode(outcome("A", {"G"}, "ABCDE", false), g);
  EXPECT_DOUBLE_EQ(r.nav_error, 2.0);
  EXPECT_DOUBLE_EQ(r.goal_progress, 4.0);
  EXPECT_EQ(r.success, 0);
  EXPECT_DOUBLE_EQ(r.spl, 0.0);
}

TEST(Score, PassingThroughIsOracleSuccessOnly) {
  const auto g = oracle::line_graph(5, 1.0);
  const auto r = score_episode(outcome("A", {"C"}, "ABCD"), g);
  EXPECT_EQ(r.success, 0);
  EXPECT_EQ(r.oracle_success, 1);
  EXPECT_DOUBLE_EQ(r.nav_error, 1.0);

  const auto unstopped = score_episode(outcome("A", {"C"}, "ABC", false), g);
  EXPECT_EQ(unstopped.success, 0);
  EXPECT_EQ(unstopped.oracle_success, 1);
}

TEST(Score, StartInsideRegion) {
  const auto g = oracle::line_graph(3, 1.0);
  EXPECT_DOUBLE_EQ(score_episode(outcome("B", {"B"}, "B"), g).spl, 1.0);
  EXPECT_DOUBLE_EQ(score_episode(outcome("B", {"B"}, "B", false), g).spl, 0.0);
  EXPECT_DOUBLE_EQ(score_episode(outcome("B", {"B"}, "BCB"), g).spl, 1.0);
}

TEST(Score, RejectsBadOutcomes) {
  const auto g = oracle::line_graph(3, 1.0);
  EXPECT_THROW(score_episode(outcome("A", {"C"}, ""), g), Error);
  EXPECT_THROW(score_episode(outcome("A", {"C"}, "AC"), g), Error);
  EXPECT_THROW(score_episode(outcome("A", {"Q"}, "AB"), g), Error);
}

TEST(Localization, ErrorsZeroTwoFiveThirteen) {
  const auto g = oracle::line_graph(14, 1.0);
  std::vector<LocalizationRecord> recs;
  int k = 1;
  for (const char* est : {"A", "C", "F", "N"}) recs.push_back({k++, NodeId("A"), NodeId(est)});
  const auto s = localization_error(recs, g);
  EXPECT_EQ(s.count, 4u);
  EXPECT_DOUBLE_EQ(*s.mean_error, 5.0);
  EXPECT_DOUBLE_EQ(*s.accuracy, 0.5);
  EXPECT_FALSE(localization_error({}, g).mean_error);
}

TEST(Localization, ThreeMetresIsInclusive) {
  const auto g = oracle::line_graph(5, 1.0);
  std::vector<LocalizationRecord> recs{{1, NodeId("A"), NodeId("D")}};
  EXPECT_DOUBLE_EQ(*localization_error(recs, g).accuracy, 1.0);
}

TEST(Aggregate, MeansAndPercentages) {
  const auto g = oracle::line_graph(14, 1.0);
  auto good = outcome("A", {"D"}, "ABCD");
  good.dialog_turns = 2;
  good.localization_records = {{1, NodeId("A"), NodeId("A")}, {2, NodeId("A"), NodeId("C")}};
  auto bad = outcome("A", {"D"}, "AB", false);
  bad.localization_records = {{1, NodeId("A"), NodeId("F")}, {2, NodeId("A"), NodeId("N")}};
  auto silent = outcome("A", {"D"}, "ABCDC");
  std::vector<MetricReport> rs{score_episode(good, g), score_episode(bad, g), score_episode(silent, g)};
  const auto row = aggregate(rs);
  EXPECT_EQ(row.episodes, 3u);
  EXPECT_NEAR(row.sr, 100.0 / 3.0, 1e-12);
  EXPECT_NEAR(row.osr, 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(row.spl, 100.0 / 3.0, 1e-12);
  EXPECT_NEAR(row.ne, (0.0 + 2.0 + 1.0) / 3.0, 1e-12);
  EXPECT_NEAR(row.nsc, (3.0 + 1.0 + 4.0) / 3.0, 1e-12);
  EXPECT_NEAR(row.dtc, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(row.gp, (3.0 + 1.0 + 2.0) / 3.0, 1e-12);
  ASSERT_TRUE(row.le);
  EXPECT_DOUBLE_EQ(*row.le, 5.0);
  EXPECT_DOUBLE_EQ(*row.a3, 50.0);

  const std::vector<MetricReport> shuffled{rs[2], rs[0], rs[1]};
  EXPECT_EQ(to_json(aggregate(shuffled)), to_json(row));
  EXPECT_THROW(aggregate(std::span<const MetricReport>{}), Error);
}

TEST(Csv, ColumnsAndFormatting) {
  const auto g = oracle::line_graph(7, 1.0);
  auto r = score_episode(outcome("A", {"G"}, "ABCDCBABCDEFG"), g);
  EXPECT_EQ(csv_header(), "episode_id,SR,OSR,SPL,NE,NSC,DTC,LE,GP");
  EXPECT_EQ(csv_row(r), "e,1,1,0.500000,0.000000,12,0,,6.000000");
  const std::vector<MetricReport> one{r};
  EXPECT_EQ(summary_csv_row("all", aggregate(one)),
            "all,1,100.000000,100.000000,50.000000,0.000000,12.000000,0.000000,,,6.000000");
}

TEST(Json, ReportAndOutcome) {
  const auto g = oracle::line_graph(3, 1.0);
  auto o = outcome("A", {"C"}, "ABC");
  o.localization_records = {{1, NodeId("B"), NodeId("A")}};
  const auto j = to_json(score_episode(o, g));
  EXPECT_EQ(j["success"], 1);
  EXPECT_EQ(j["le_mean"], 1.0);
  EXPECT_EQ(j["conventions"]["localization_error"], "euclidean");
  const auto jo = to_json(o);
  EXPECT_EQ(jo["termination"], "stop");
  EXPECT_EQ(jo["visited"].size(), 3u);
  for (auto t : {Termination::stop, Termination::guess, Termination::budget, Termination::disconnect,
                 Termination::timeout}) {
    EXPECT_EQ(parse_termination(termination_name(t)), t);
  }
}

TEST(Laws, RandomOutcomesOnRandomGraphs) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = oracle::random_graph(rng, {9, 0.3, false, 1.0});
    const double c = 0.5 + 3.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    const auto big = oracle::scaled(g, c);
    std::uniform_int_distribution<std::size_t> pick(0, g.node_count() - 1);
    EpisodeOutcome o;
    o.start = g.node(pick(rng)).id;
    o.goal = make_goal({g.node(pick(rng)).id, g.node(pick(rng)).id});
    o.visited = {o.start};
    const int steps = static_cast<int>(pick(rng));
    for (int s = 0; s < steps; ++s) {
      const auto nb = g.neighbor_ids(o.visited.back());
      o.visited.push_back(nb[std::uniform_int_distribution<std::size_t>(0, nb.size() - 1)(rng)]);
    }
    o.stopped = trial % 3 != 0;
    o.dialog_turns = trial % 4;
    o.localization_records = {{1, o.visited.back(), g.node(pick(rng)).id}};

    const auto r = score_episode(o, g);
    const auto d = oracle::floyd(g);
    EXPECT_LE(r.spl, r.success + 1e-12);
    EXPECT_LE(r.success, r.oracle_success);
    EXPECT_EQ(r.nav_error == 0.0, o.goal.contains(o.visited.back()));
    EXPECT_LE(r.goal_progress, r.shortest_length + 1e-12);
    EXPECT_EQ(r.nsc, steps);

    std::size_t si = 0, li = 0;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      if (g.node(i).id == o.start) si = i;
      if (g.node(i).id == o.visited.back()) li = i;
    }
    double ls = 1e18, le = 1e18;
    for (const auto& t : o.goal.node_ids) {
      for (std::size_t i = 0; i < g.node_count(); ++i) {
        if (g.node(i).id != t) continue;
        ls = std::min(ls, d[si][i]);
        le = std::min(le, d[li][i]);
      }
    }
    EXPECT_NEAR(r.shortest_length, ls, 1e-9);
    EXPECT_NEAR(r.nav_error, le, 1e-9);

    const auto rb = score_episode(o, big);
    EXPECT_EQ(rb.success, r.success);
    EXPECT_EQ(rb.oracle_success, r.oracle_success);
    EXPECT_EQ(rb.nsc, r.nsc);
    EXPECT_EQ(rb.dtc, r.dtc);
    EXPECT_NEAR(rb.spl, r.spl, 1e-9);
    EXPECT_NEAR(rb.nav_error, c * r.nav_error, 1e-9 * c * (1 + r.nav_error));
    EXPECT_NEAR(rb.goal_progress, c * r.goal_progress, 1e-9 * c * (1 + std::abs(r.goal_progress)));
    EXPECT_NEAR(rb.path_length, c * r.path_length, 1e-9 * c * (1 + r.path_length));
    EXPECT_NEAR(*rb.le_mean, c * *r.le_mean, 1e-9 * c * (1 + *r.le_mean));
  }
}
