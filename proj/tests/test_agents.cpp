#include <algorithm>
#include <fstream>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "dialnav/agents.hpp"
#include "dialnav/error.hpp"
#include "dialnav/rollout.hpp"
#include "support/oracles.hpp"

using namespace dialnav;
using nlohmann::json;

namespace {

Task task_on(std::shared_ptr<const EnvironmentGraph> g, const std::string& start, std::vector<NodeId> goal) {
  Task t;
  t.episode_id = "task";
  t.graph = std::move(g);
  t.start = NodeId(start);
  t.goal = make_goal(std::move(goal));
  t.instruction = "go";
  return t;
}

Task bath_task(const std::string& start) {
  auto t = task_on(oracle::house_a(), start, {NodeId("n09"), NodeId("n10")});
  t.goal.region_room_id = "bath";
  return t;
}

ActionDistribution uniform(std::size_t n) {
  ActionDistribution d;
  for (std::size_t i = 0; i < n; ++i) d.entries.emplace_back(NavAction::move(NodeId("x" + std::to_string(i))), 1.0 / n);
  return d;
}

/// Moves to its first neighbor for `moves` steps, then stops.
class ForcedWalker : public NavigatorPolicy {
 public:
  explicit ForcedWalker(int moves) : left_(moves) {}
  ActionDistribution act(const Observation& obs) override {
    if (left_ == 0) return {{{NavAction::stop(), 1.0}}};
    return {{{NavAction::move(obs.neighbors.front().id), 1.0}}};
  }
  NavAction choose(const ActionDistribution& d) override {
    if (left_ > 0) --left_;
    return d.argmax();
  }

 private:
  int left_;
};

}  // namespace

TEST(Seeds, DeriveSeedIsStableAndKeyed) {
  EXPECT_EQ(derive_seed(1, "ep"), derive_seed(1, "ep"));
  EXPECT_NE(derive_seed(1, "ep"), derive_seed(2, "ep"));
  EXPECT_NE(derive_seed(1, "ep"), derive_seed(1, "eq"));
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  Rng c(3);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(c.index(7), 7u);
}

TEST(Distribution, StatisticsAndValidation) {
  const auto u4 = uniform(4);
  EXPECT_DOUBLE_EQ(u4.max_probability(), 0.25);
  EXPECT_NEAR(u4.entropy_confidence(), 0.0, 1e-12);
  const ActionDistribution one{{{NavAction::stop(), 1.0}}};
  EXPECT_DOUBLE_EQ(one.entropy_confidence(), 1.0);
  EXPECT_NO_THROW(u4.validate());
  ActionDistribution bad{{{NavAction::stop(), 0.4}}};
  EXPECT_THROW(bad.validate(), Error);
  ActionDistribution asks{{{NavAction::ask("q"), 1.0}}};
  EXPECT_THROW(asks.validate(), Error);
  EXPECT_EQ(u4.argmax(), u4.entries.front().first);

  Rng rng(11);
  std::map<std::string, int> hist;
  for (int i = 0; i < 4000; ++i) ++hist[u4.sample(rng).node.str()];
  for (const auto& [k, v] : hist) EXPECT_NEAR(v, 1000, 150) << k;
}

TEST(OracleNavigator, NextHopsFollowBruteForcePaths) {
  const auto line = oracle::line_graph(3, 1.0);
  EXPECT_EQ(oracle_navigator_act(line, NodeId("A"), make_goal({NodeId("C")})).argmax(), NavAction::move(NodeId("B")));
  EXPECT_EQ(oracle_navigator_act(line, NodeId("C"), make_goal({NodeId("C")})).argmax(), NavAction::stop());

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = oracle::random_graph(rng, {10, 0.3, true, 1.0});
    const std::vector<NodeId> region{g.node(0).id, g.node(g.node_count() - 1).id};
    for (const auto& n : g.nodes()) {
      const auto d = oracle_navigator_act(g, n.id, make_goal(region));
      ASSERT_EQ(d.entries.size(), 1u);
      const auto expected = oracle::brute_path_to_region(g, n.id, region);
      if (expected.size() == 1) {
        EXPECT_EQ(d.argmax(), NavAction::stop());
      } else {
        EXPECT_EQ(d.argmax(), NavAction::move(expected[1]));
      }
    }
  }
}

TEST(RandomNavigator, UniformOverNeighborsAndStop) {
  const auto& g = *oracle::house_a();
  const auto d = random_navigator_act(g, NodeId("n02"));  // n01, n03, n05
  ASSERT_EQ(d.entries.size(), 4u);
  for (const auto& [a, p] : d.entries) EXPECT_DOUBLE_EQ(p, 0.25);
  EXPECT_EQ(d.entries.back().first, NavAction::stop());
  d.validate();
}

TEST(RandomNavigator, SameSeedSameRollout) {
  TemplateGuide guide;
  RandomNavigator a(99), b(99);
  const auto ra = run_episode(bath_task("n01"), {}, a, guide, {});
  const auto rb = run_episode(bath_task("n01"), {}, b, guide, {});
  EXPECT_EQ(ra.visited, rb.visited);
  EXPECT_EQ(ra.event_log, rb.event_log);
}

TEST(RandomNavigator, GoalProgressMatchesMarkovChain) {
  // Absorbing-chain expectation built from the edge list: stop w.p. 1/(deg+1),
  // otherwise move to a uniform neighbour; forced end after the step budget.
  const auto g = oracle::house_a();
  const GoalRegion goal = make_goal({NodeId("n09"), NodeId("n10")});
  const auto d = oracle::floyd(*g);
  const std::size_t n = g->node_count();
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx[g->node(i).id.str()] = i;
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& e : g->edges()) {
    adj[idx[e.a.str()]].push_back(idx[e.b.str()]);
    adj[idx[e.b.str()]].push_back(idx[e.a.str()]);
  }
  auto to_goal = [&](std::size_t i) { return std::min(d[i][idx["n09"]], d[i][idx["n10"]]); };

  const int budget = 80;
  const std::size_t start = idx["n04"];
  std::vector<double> alive(n, 0.0), final_dist(n, 0.0);
  alive[start] = 1.0;
  for (int step = 0; step < budget; ++step) {
    std::vector<double> next(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (alive[i] == 0.0) continue;
      const double q = alive[i] / static_cast<double>(adj[i].size() + 1);
      final_dist[i] += q;
      for (auto j : adj[i]) next[j] += q;
    }
    alive = next;
  }
  double expected_end = 0.0;
  for (std::size_t i = 0; i < n; ++i) expected_end += (final_dist[i] + alive[i]) * to_goal(i);
  const double expected_gp = to_goal(start) - expected_end;

  TemplateGuide guide;
  double total = 0.0;
  const int rollouts = 1000;
  EngineConfig cfg;
  cfg.max_nav_steps = budget;
  for (int r = 0; r < rollouts; ++r) {
    RandomNavigator nav(derive_seed(2024, "rollout" + std::to_string(r)));
    const auto s = run_episode(bath_task("n04"), cfg, nav, guide, {});
    total += score_episode(finalize(s), *g).goal_progress;
  }
  EXPECT_NEAR(total / rollouts, expected_gp, 0.5);
}

TEST(Wta, DecisionRules) {
  WtaConfig c;
  WtaState st;
  const auto u4 = uniform(4);
  const ActionDistribution hot{{{NavAction::stop(), 1.0}}};
  EXPECT_FALSE(wta_decide(c, st, u4));
  c.strategy = WtaStrategy::always;
  EXPECT_TRUE(wta_decide(c, st, hot));
  c.strategy = WtaStrategy::confidence_threshold;
  c.tau = 0.5;
  EXPECT_TRUE(wta_decide(c, st, u4));
  EXPECT_FALSE(wta_decide(c, st, hot));
  c.statistic = ConfidenceStatistic::entropy;
  EXPECT_TRUE(wta_decide(c, st, u4));
  EXPECT_FALSE(wta_decide(c, st, hot));
  c.strategy = WtaStrategy::fixed_interval;
  c.k = 3;
  for (int i = 0; i < 3; ++i) {
    EXPECT_FALSE(wta_decide(c, st, u4));
    st.on_move();
  }
  EXPECT_TRUE(wta_decide(c, st, u4));
  st.on_answer();
  EXPECT_FALSE(wta_decide(c, st, u4));
  c.strategy = WtaStrategy::external;
  EXPECT_FALSE(wta_decide(c, st, u4));
  EXPECT_TRUE(wta_decide(c, st, u4, true));
}

TEST(Wta, ConfigJson) {
  const auto c = wta_config_from_json(json{{"strategy", "fixed_interval"}, {"k", 4}});
  EXPECT_EQ(c.strategy, WtaStrategy::fixed_interval);
  EXPECT_EQ(c.k, 4);
  const auto back = wta_config_from_json(to_json(c));
  EXPECT_EQ(back.k, 4);
  EXPECT_THROW(wta_config_from_json(json{{"strategy", "sometimes"}}), Error);
  EXPECT_THROW(wta_config_from_json(json{{"strategy", "fixed_interval"}, {"k", 0}}), Error);
  EXPECT_THROW(wta_config_from_json(json{{"tau", 1.5}}), Error);
  EXPECT_THROW(wta_config_from_json(json{{"statistic", "gini"}}), Error);
}

TEST(Wta, TwelveStepsEveryFiveAsksTwice) {
  const auto g = std::make_shared<const EnvironmentGraph>(oracle::line_graph(3, 1.0));
  ForcedWalker nav(12);
  TemplateGuide guide;
  EngineConfig cfg;
  cfg.max_nav_steps = 100;
  WtaConfig w;
  w.strategy = WtaStrategy::fixed_interval;
  w.k = 5;
  const auto s = run_episode(task_on(g, "A", {NodeId("C")}), cfg, nav, guide, w);
  EXPECT_EQ(s.nav_steps_used, 12);
  EXPECT_EQ(s.dialog_turns_used, 2);
  ASSERT_EQ(s.dialog.size(), 2u);
  EXPECT_EQ(s.dialog[0].trajectory_index, 5u);
  EXPECT_EQ(s.dialog[1].trajectory_index, 10u);
}

TEST(Wta, AlwaysAsksOncePerDecisionPointWithinBudget) {
  OracleNavigator nav(*oracle::house_a(), make_goal({NodeId("n09"), NodeId("n10")}));
  TemplateGuide guide;
  WtaConfig w;
  w.strategy = WtaStrategy::always;
  auto s = run_episode(bath_task("n01"), {}, nav, guide, w);
  EXPECT_EQ(s.dialog_turns_used, 4);  // n01 n06 n07 n10 each ask once
  EngineConfig tight;
  tight.max_dialog_turns = 2;
  s = run_episode(bath_task("n01"), tight, nav, guide, w);
  EXPECT_EQ(s.dialog_turns_used, 2);
  EXPECT_TRUE(finalize(s).stopped);
}

TEST(Templates, QuestionFormat) {
  const auto line = oracle::line_graph(2, 1.0);
  EXPECT_EQ(template_question(observe(line, NodeId("A"))), "I'm in a hallway.");
  const auto& g = *oracle::house_a();
  EXPECT_EQ(template_question(observe(g, NodeId("n09"))), "I'm in a bathroom. I can see bathtub, towel.");

  Observation many = observe(g, NodeId("n09"));
  many.annotation.objects = {"a", "b", "c", "d", "e", "f", "g"};
  EXPECT_EQ(template_question(many), "I'm in a bathroom. I can see a, b, c, d, e.");
  many.annotation.objects.clear();
  many.room_type.clear();
  EXPECT_EQ(template_question(many), "I'm not sure where I am.");

  for (const auto& n : g.nodes()) {
    const auto q = tokenize(template_question(observe(g, n.id)));
    const auto rt = tokenize(g.room_of(n.id).room_type);
    const auto hits = std::search(q.begin(), q.end(), rt.begin(), rt.end()) != q.end();
    EXPECT_TRUE(hits) << n.id.str();
  }
}

TEST(Templates, AnswerNamesRoomSequence) {
  const auto& g = *oracle::house_a();
  const GoalRegion goal = make_goal({NodeId("n09"), NodeId("n10")});
  EXPECT_EQ(template_answer(g, NodeId("n10"), goal), kAlreadyThere);
  const std::string a = template_answer(g, NodeId("n03"), goal);
  EXPECT_EQ(a, "Go from the kitchen to the hallway, then to the living room, then to the bedroom, then to the "
               "bathroom; that is the goal room.");
  for (const auto& n : g.nodes()) {
    const auto text = template_answer(g, n.id, goal);
    if (goal.contains(n.id)) continue;
    ASSERT_GE(text.size(), kGoalRoomSuffix.size());
    EXPECT_EQ(text.substr(text.size() - kGoalRoomSuffix.size()), kGoalRoomSuffix);
  }
}

TEST(Lexical, RankingAndTies) {
  const auto& g = *oracle::house_a();
  EXPECT_EQ(lexical_localize("Bathtub!", g).front(), NodeId("n09"));
  const auto none = lexical_localize("zzz qqq", g);
  ASSERT_EQ(none.size(), g.node_count());
  EXPECT_TRUE(std::is_sorted(none.begin(), none.end()));
  EXPECT_EQ(lexical_localize("fridge stove kitchen", g), lexical_localize("kitchen stove fridge", g));
  EXPECT_EQ(lexical_score("Sink! TOILET", g, NodeId("n10")), 2u);
  EXPECT_EQ(tokenize("I'm at the Stairs."), (std::vector<std::string>{"i", "m", "at", "the", "stairs"}));

  // Exhaustive check against a hand-rolled scorer.
  const std::string q = "a lamp near the stairs and a sink";
  std::set<std::string> qt;
  for (auto& t : tokenize(q)) qt.insert(t);
  std::vector<std::pair<int, std::string>> expected;
  for (const auto& n : g.nodes()) {
    std::set<std::string> nt;
    for (auto& t : tokenize(g.room_of(n.id).room_type)) nt.insert(t);
    for (const auto& o : n.annotation.objects)
      for (auto& t : tokenize(o)) nt.insert(t);
    if (n.annotation.caption)
      for (auto& t : tokenize(*n.annotation.caption)) nt.insert(t);
    int s = 0;
    for (const auto& t : qt) s += static_cast<int>(nt.count(t));
    expected.emplace_back(-s, n.id.str());
  }
  std::sort(expected.begin(), expected.end());
  const auto got = lexical_localize(q, g);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].str(), expected[i].second);
}

TEST(Guides, TemplateGuideOnTrueDescriptionHitsTheNode) {
  const auto& g = *oracle::house_a();
  TemplateGuide guide;
  OracleNavigator nav(g, make_goal({NodeId("n09"), NodeId("n10")}));
  WtaConfig w;
  w.strategy = WtaStrategy::always;
  const auto s = run_episode(bath_task("n03"), {}, nav, guide, w);
  const auto r = score_episode(finalize(s), g);
  ASSERT_GT(r.le_count, 0u);
  EXPECT_EQ(r.success, 1);
  for (const auto& rec : s.localization_records) {
    EXPECT_EQ(lexical_score(s.dialog[static_cast<std::size_t>(rec.turn_index - 1)].question, g, rec.estimated_node),
              lexical_score(s.dialog[static_cast<std::size_t>(rec.turn_index - 1)].question, g,
                            lexical_localize(s.dialog[static_cast<std::size_t>(rec.turn_index - 1)].question, g)
                                .front()));
  }
}

TEST(Guides, RandomLocalizerIsSeeded) {
  const auto& g = *oracle::house_a();
  RandomLocalizerGuide a(5), b(5);
  auto s = start_episode(bath_task("n01"), {});
  s = navigator_step(s, NavAction::ask("q"));
  const auto view = guide_view(s);
  std::set<std::string> seen;
  for (int i = 0; i < 200; ++i) {
    const auto x = a.localize(view);
    EXPECT_EQ(x, b.localize(view));
    EXPECT_TRUE(g.has_node(x));
    seen.insert(x.str());
  }
  EXPECT_EQ(seen.size(), g.node_count());
}

TEST(Guides, ViewCarriesNoNavigatorPosition) {
  auto s = start_episode(bath_task("n01"), {});
  s = navigator_step(s, NavAction::move(NodeId("n02")));
  s = navigator_step(s, NavAction::ask("hello"));
  const auto v = guide_view(s);
  EXPECT_EQ(v.question, "hello");
  EXPECT_EQ(v.turn_index, 1);
  EXPECT_TRUE(v.history.empty());
}

TEST(Replay, FixtureEpisodesReproduce) {
  const auto& g = oracle::house_a();
  for (const char* name : {"a1", "a2", "a3", "a4"}) {
    std::ifstream in(oracle::fixture_dir() + "/episodes/" + name + ".json");
    const Episode e = parse_episode(in, *g).episode;
    ReplayNavigator nav(e);
    ReplayGuide guide(e.dialog);
    Task t{e.episode_id, g, e.start, e.goal, e.instruction};
    EngineConfig cfg;
    cfg.max_nav_steps = 1000;
    cfg.max_dialog_turns = 1000;
    WtaConfig w;
    w.strategy = WtaStrategy::external;
    const auto s = run_episode(t, cfg, nav, guide, w);
    EXPECT_EQ(s.visited, e.trajectory) << name;
    ASSERT_EQ(s.dialog.size(), e.dialog.size()) << name;
    for (std::size_t i = 0; i < e.dialog.size(); ++i) {
      EXPECT_EQ(s.dialog[i].node, e.dialog[i].node);
      EXPECT_EQ(s.dialog[i].question, e.dialog[i].question);
      EXPECT_EQ(s.dialog[i].answer, e.dialog[i].answer);
      EXPECT_EQ(s.dialog[i].trajectory_index, e.dialog[i].trajectory_index);
    }
    EXPECT_EQ(score_episode(finalize(s), *g).success, 1) << name;
  }
}
