#pragma once

#include <string>
#include <vector>

#include "pavad/model.hpp"
#include "pavad/sim.hpp"
#include "pavad/train.hpp"

namespace pavad {

struct RunProfile {
  std::string name;  // sht | ucf | sim
  model::ModelConfig model;
  train::TrainConfig train;
  sim::SimConfig sim;  // used by simulate/ablate
  double vlm_timeout_s = 60.0;
};

// Throws std::invalid_argument for unknown names.
RunProfile load_profile(const std::string& name);
std::vector<std::string> profile_names();

}  // namespace pavad
