#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "coral/planar_sim.hpp"
#include "coral/types.hpp"

namespace coral {

/// One evaluation-world step as the loop saw it.
struct EpisodeStep {
  int attempt = 0;
  int step = 0;  ///< within the attempt
  Control u{0, 0};   ///< planner output for the current interval
  Control nu{0, 0};  ///< applied control after reactive augmentation
  std::size_t stage = 0;
  double blend_score = 0.0;
  double cost = 0.0;
  SimState state;  ///< after the step
};

/// Finger force on object `index` as a world-frame vector.
Vec2 finger_force_vector(const SimState& state, int index);

}  // namespace coral
