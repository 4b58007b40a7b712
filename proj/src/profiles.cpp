#include "pavad/profiles.hpp"

#include <stdexcept>

namespace pavad {

namespace {

loss::LossWeights shared_weights() {
  loss::LossWeights w;
  w.lambda1 = 1.0;
  w.lambda2 = 0.1;
  w.lambda_dist = 0.01;
  w.beta = 1.0;
  w.epsilon = 1e-6;
  return w;
}

}  // namespace

std::vector<std::string> profile_names() { return {"sht", "ucf", "sim"}; }

RunProfile load_profile(const std::string& name) {
  RunProfile p;
  p.name = name;
  p.train.batch_videos_per_stream = 4;
  p.train.weight_decay = 1e-5;
  p.train.loss_weights = shared_weights();
  p.model.tau = 0.1;
  if (name == "sht") {
    p.model.input_dim = 1024;
    p.model.model_dim = 128;
    p.model.heads = 4;
    p.model.abnormal_slots = 100;
    p.model.normal_slots = 100;
    p.train.learning_rate = 1e-4;
    p.train.segment_number = 5;
    p.train.steps = 3000;
    p.train.loss_weights.lambda_da = 0.2;
    p.train.loss_weights.topk = 1;
  } else if (name == "ucf") {
    p.model.input_dim = 1024;
    p.model.model_dim = 128;
    p.model.heads = 4;
    p.model.abnormal_slots = 60;
    p.model.normal_slots = 60;
    p.train.learning_rate = 1e-5;
    p.train.segment_number = 64;
    p.train.steps = 3000;
    p.train.loss_weights.lambda_da = 0.1;
    p.train.loss_weights.topk = 8;
  } else if (name == "sim") {
    p.model.input_dim = p.sim.dim;
    p.model.model_dim = 16;
    p.model.heads = 2;
    p.model.abnormal_slots = 10;
    p.model.normal_slots = 10;
    p.train.learning_rate = 3e-4;
    p.train.segment_number = p.sim.rows_per_video;
    p.train.steps = 600;
    p.train.loss_weights.lambda_da = 1.0;
    p.train.loss_weights.topk = 4;
  } else {
    throw std::invalid_argument("unknown profile '" + name + "' (expected sht, ucf or sim)");
  }
  p.model.validate();
  p.train.validate();
  return p;
}

}  // namespace pavad
