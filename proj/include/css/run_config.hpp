#pragma once

#include <string>

#include "css/mlm.hpp"
#include "css/train.hpp"

namespace css {

// One JSON document driving an experiment: sections "model", "loss",
// "train", "paths", all optional, unknown keys rejected at every level.
// `train.loss` is filled from the "loss" section after parsing.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string corpus_path;
  std::string vocab_path;
  std::string checkpoint_path;
  std::string train_log_path;
  std::string eval_out_path;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text, const std::string& origin);

}  // namespace css
