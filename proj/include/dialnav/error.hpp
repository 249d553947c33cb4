#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dialnav {

enum class Errc {
  malformed,
  dangling_endpoint,
  disconnected,
  duplicate_id,
  unknown_node,
  unknown_room,
  invalid_edge,
  not_adjacent,
  empty_region,
  invalid_argument,
  inconsistent_dialog,
  goal_not_reached,
  wrong_phase,
  budget_exhausted,
  guess_disabled,
  missing_graph,
  io,
};

std::string_view errc_name(Errc code);

/// Exception carrying a stable machine-readable code and the locus (node,
/// edge, index, file) where the problem was found.
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string message, std::string locus = {})
      : std::runtime_error(std::move(message)), code_(code), locus_(std::move(locus)) {}

  Errc code() const noexcept { return code_; }
  const std::string& locus() const noexcept { return locus_; }

 private:
  Errc code_;
  std::string locus_;
};

}  // namespace dialnav
