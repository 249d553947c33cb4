#pragma once

#include "dialnav/agents.hpp"
#include "dialnav/engine.hpp"

namespace dialnav {

/// Drives one episode to termination with in-process policies.
///
/// At each navigator decision point the ask strategy is consulted once; after
/// an answer the navigator re-plans with the new dialog and then acts. Only
/// the External strategy may ask again at the same decision point. Asks are
/// skipped once the dialog budget is spent.
EpisodeState run_episode(Task task, const EngineConfig& config, NavigatorPolicy& navigator,
                         GuidePolicy& guide, const WtaConfig& wta);

}  // namespace dialnav
