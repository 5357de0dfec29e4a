#include "css/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "css/rng.hpp"
#include "css/scorer.hpp"

namespace css {

using nlohmann::json;

void TrainConfig::check() const {
  if (epochs < 1) throw std::runtime_error("epochs must be >= 1");
  if (batch_pairs < 1) throw std::runtime_error("batch_pairs must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::runtime_error("learning_rate must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::runtime_error("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::runtime_error("adam_eps must be > 0");
  if (checkpoint_every < 0)
    throw std::runtime_error("checkpoint_every must be >= 0");
  if (checkpoint_every > 0 && checkpoint_path.empty())
    throw std::runtime_error("checkpoint_every needs a checkpoint path");
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState state;
  params.for_each_tensor([&state](const std::string&, const MatF& t) {
    state.m.push_back(MatD::Zero(t.rows(), t.cols()));
    state.v.push_back(MatD::Zero(t.rows(), t.cols()));
  });
  return state;
}

void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  // Flatten both traversals so tensor k of params lines up with tensor k of
  // grads and of the moment vectors.
  std::vector<MatF*> ps;
  params.for_each_tensor(
      [&ps](const std::string&, MatF& t) { ps.push_back(&t); });
  std::vector<const MatD*> gs;
  grads.for_each_tensor(
      [&gs](const std::string&, const MatD& t) { gs.push_back(&t); });
  if (ps.size() != gs.size() || ps.size() != state.m.size())
    throw std::runtime_error("optimizer tensor count mismatch");

  state.t += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t k = 0; k < ps.size(); ++k) {
    MatF& p = *ps[k];
    const MatD& g = *gs[k];
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw std::runtime_error("optimizer shape mismatch");
    MatD& m = state.m[k];
    MatD& v = state.v[k];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        const double mhat = m(r, c) / c1;
        const double vhat = v(r, c) / c2;
        p(r, c) = static_cast<float>(static_cast<double>(p(r, c)) -
                                     lr * mhat / (std::sqrt(vhat) + eps));
      }
  }
}

BatchLoss batch_loss_and_grads(const ModelParams& params,
                               const std::vector<const TwinPair*>& batch,
                               const Vocab& vocab, const LossHyper& hyper,
                               ModelGrads* grads) {
  if (batch.empty()) throw std::runtime_error("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  for (const TwinPair* pair : batch) {
    std::array<std::array<MaskedQuery, 2>, 2> queries;
    std::array<std::array<ForwardCache, 2>, 2> caches;
    PairProb probs;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        queries[i][j] =
            build_masked_query(pair->sentences[j], pair->candidates[i], vocab,
                               params.config.max_len);
        const MatD rows =
            forward_one(params, queries[i][j], grads ? &caches[i][j] : nullptr);
        probs.p[i][j] =
            std::exp(candidate_log_probability(rows, queries[i][j]));
      }
    const LossValue loss = total_loss(probs, hyper);
    out.mex += loss.mex * inv_n;
    out.cm += loss.cm * inv_n;
    out.total += loss.total * inv_n;
    if (!grads) continue;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        // p = exp(mean log-prob), so d(loss)/d(log-prob at each mask) is
        // dloss/dp · p / k, scaled by the batch mean.
        const double k =
            static_cast<double>(queries[i][j].candidate_ids.size());
        const double u = loss.grad[i][j] * probs.p[i][j] / k * inv_n;
        const std::vector<double> upstream(queries[i][j].candidate_ids.size(),
                                           u);
        backward_one(params, queries[i][j], caches[i][j], upstream, *grads);
      }
  }
  return out;
}

TrainLog train(const TrainConfig& config, const Corpus& corpus,
               ModelParams& params, const Vocab& vocab) {
  config.check();
  params.config.check();
  if (corpus.pairs.empty())
    throw std::runtime_error("cannot train on an empty corpus");
  if (vocab.size() != params.config.vocab_size)
    throw std::runtime_error("vocabulary size does not match model");

  AdamState state = AdamState::zeros_like(params);
  TrainLog log;
  const auto t0 = std::chrono::steady_clock::now();
  const int n = static_cast<int>(corpus.pairs.size());
  int global_step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(config.seed, static_cast<uint64_t>(epoch));
    shuffle(order, rng);

    for (int start = 0; start < n; start += config.batch_pairs) {
      const int end = std::min(n, start + config.batch_pairs);
      std::vector<const TwinPair*> batch;
      batch.reserve(end - start);
      for (int b = start; b < end; ++b)
        batch.push_back(&corpus.pairs[order[b]]);

      ModelGrads grads = ModelGrads::zeros_like(params);
      const BatchLoss loss =
          batch_loss_and_grads(params, batch, vocab, config.loss, &grads);
      adam_step(params, grads, state, config.learning_rate, config.adam_beta1,
                config.adam_beta2, config.adam_eps);

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = ++global_step;
      rec.pairs = end - start;
      rec.mex = loss.mex;
      rec.cm = loss.cm;
      rec.total = loss.total;
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      log.steps.push_back(rec);
    }

    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0)
      save_checkpoint(config.checkpoint_path, params, vocab);
  }

  double pairs_last = 0.0, mex = 0.0, cm = 0.0, total = 0.0;
  for (const StepRecord& rec : log.steps) {
    if (rec.epoch != config.epochs) continue;
    const double w = rec.pairs;
    pairs_last += w;
    mex += rec.mex * w;
    cm += rec.cm * w;
    total += rec.total * w;
  }
  log.final_mex = mex / pairs_last;
  log.final_cm = cm / pairs_last;
  log.final_total = total / pairs_last;
  return log;
}

void save_train_log(const std::string& path, const TrainLog& log) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write train log: " + path);
  for (const StepRecord& rec : log.steps) {
    json line = {{"epoch", rec.epoch}, {"step", rec.step},
                 {"pairs", rec.pairs}, {"mex", rec.mex},
                 {"cm", rec.cm},       {"total", rec.total},
                 {"wall_ms", rec.wall_ms}};
    out << line.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

TrainLog load_train_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open train log: " + path);
  TrainLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    StepRecord rec;
    rec.epoch = j.at("epoch").get<int>();
    rec.step = j.at("step").get<int>();
    rec.pairs = j.at("pairs").get<int>();
    rec.mex = j.at("mex").get<double>();
    rec.cm = j.at("cm").get<double>();
    rec.total = j.at("total").get<double>();
    rec.wall_ms = j.at("wall_ms").get<double>();
    log.steps.push_back(rec);
  }
  return log;
}

}  // namespace css
