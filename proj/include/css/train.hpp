#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "css/corpus.hpp"
#include "css/loss.hpp"
#include "css/mlm.hpp"
#include "css/tokenizer.hpp"

namespace css {

struct TrainConfig {
  int epochs = 25;
  int batch_pairs = 4;
  double learning_rate = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossHyper loss;
  uint64_t seed = 1;
  // Epochs between intermediate snapshots to checkpoint_path; 0 saves only
  // through the caller at the end.
  int checkpoint_every = 0;
  std::string checkpoint_path;

  void check() const;
};

struct StepRecord {
  int epoch = 0;
  int step = 0;  // global optimizer step, 1-based
  int pairs = 0;
  double mex = 0.0;
  double cm = 0.0;
  double total = 0.0;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  // Pair-weighted means over the final epoch.
  double final_mex = 0.0;
  double final_cm = 0.0;
  double final_total = 0.0;
};

struct AdamState {
  std::vector<MatD> m;
  std::vector<MatD> v;
  int64_t t = 0;

  static AdamState zeros_like(const ModelParams& params);
};

// Standard bias-corrected update. Moments stay in double; parameters are
// updated in double and stored back as float.
void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps);

struct BatchLoss {
  double mex = 0.0;
  double cm = 0.0;
  double total = 0.0;
};

// Mean loss over the batch; when `grads` is non-null, accumulates parameter
// gradients of that mean. Labels are never consulted.
BatchLoss batch_loss_and_grads(const ModelParams& params,
                               const std::vector<const TwinPair*>& batch,
                               const Vocab& vocab, const LossHyper& hyper,
                               ModelGrads* grads);

// Shuffles pairs each epoch with a generator seeded from (config.seed, epoch)
// and applies one Adam step per batch, including the final partial batch.
TrainLog train(const TrainConfig& config, const Corpus& corpus,
               ModelParams& params, const Vocab& vocab);

// One JSON object per step record.
void save_train_log(const std::string& path, const TrainLog& log);
TrainLog load_train_log(const std::string& path);

}  // namespace css
