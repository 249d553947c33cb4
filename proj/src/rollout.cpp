#include "dialnav/rollout.hpp"

namespace dialnav {

EpisodeState run_episode(Task task, const EngineConfig& config, NavigatorPolicy& navigator,
                         GuidePolicy& guide, const WtaConfig& wta) {
  wta.validate();
  EpisodeState state = start_episode(std::move(task), config);
  WtaState counter;
  while (state.phase != Phase::terminal) {
    Observation obs = observe(state);
    ActionDistribution dist = navigator.act(obs);
    bool asked_here = false;
    while (state.dialog_turns_used < state.config.max_dialog_turns) {
      if (asked_here && wta.strategy != WtaStrategy::external) break;
      if (!wta_decide(wta, counter, dist, navigator.ask_vote(obs))) break;
      state = navigator_step(state, NavAction::ask(navigator.question(obs)));
      const GuideView view = guide_view(state);
      const NodeId estimate = guide.localize(view);
      state = guide_localize(state, estimate);
      state = guide_answer(state, guide.answer(view, estimate));
      counter.on_answer();
      asked_here = true;
      obs = observe(state);
      dist = navigator.act(obs);
    }
    const NavAction action = navigator.choose(dist);
    state = navigator_step(state, action);
    if (action.kind == NavAction::Kind::move) counter.on_move();
  }
  return state;
}

}  // namespace dialnav
