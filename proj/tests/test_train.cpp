#include "css/train.hpp"

#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "test_util.hpp"

namespace {

struct Fixture {
  css::Corpus corpus;
  css::Vocab vocab;
  css::ModelConfig model;

  explicit Fixture(int n_pairs = 6, uint64_t corpus_seed = 2) {
    corpus = css::synth_generate(corpus_seed, n_pairs);
    vocab = css::build_vocab(corpus);
    model.vocab_size = vocab.size();
    model.dim = 8;
    model.n_layers = 1;
    model.n_heads = 2;
    model.ff_dim = 16;
    model.max_len = 32;
    model.seed = 1;
  }
};

css::TrainConfig quick_config(int epochs = 1) {
  css::TrainConfig config;
  config.epochs = epochs;
  config.batch_pairs = 4;
  config.learning_rate = 1e-3;
  config.seed = 7;
  return config;
}

bool params_equal(const css::ModelParams& a, const css::ModelParams& b) {
  bool equal = true;
  std::vector<const css::MatF*> ta, tb;
  a.for_each_tensor(
      [&ta](const std::string&, const css::MatF& t) { ta.push_back(&t); });
  b.for_each_tensor(
      [&tb](const std::string&, const css::MatF& t) { tb.push_back(&t); });
  for (size_t i = 0; i < ta.size(); ++i)
    equal = equal && (*ta[i] - *tb[i]).cwiseAbs().maxCoeff() == 0.0f;
  return equal;
}

double epoch_mean_mex(const css::TrainLog& log, int epoch) {
  double sum = 0.0, weight = 0.0;
  for (const auto& rec : log.steps) {
    if (rec.epoch != epoch) continue;
    sum += rec.mex * rec.pairs;
    weight += rec.pairs;
  }
  return sum / weight;
}

}  // namespace

TEST_CASE("train config validation") {
  css::TrainConfig config = quick_config();
  CHECK_NOTHROW(config.check());
  config.epochs = 0;
  CHECK_THROWS_AS(config.check(), std::runtime_error);
  config = quick_config();
  config.learning_rate = 0.0;
  CHECK_THROWS_AS(config.check(), std::runtime_error);
  config = quick_config();
  config.checkpoint_every = 1;  // without a path
  CHECK_THROWS_AS(config.check(), std::runtime_error);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  const Fixture fix;
  css::ModelParams params = css::init_model(fix.model);
  const css::ModelParams before = params;
  css::ModelGrads grads = css::ModelGrads::zeros_like(params);
  css::AdamState state = css::AdamState::zeros_like(params);
  css::adam_step(params, grads, state, 0.1, 0.9, 0.999, 1e-8);
  CHECK(params_equal(params, before));
  CHECK(state.t == 1);
  for (const auto& m : state.m) CHECK(m.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam first step moves a unit-gradient coordinate by about -lr") {
  const Fixture fix;
  css::ModelParams params = css::init_model(fix.model);
  const float before = params.tok_emb(6, 3);
  css::ModelGrads grads = css::ModelGrads::zeros_like(params);
  grads.tok_emb(6, 3) = 1.0;
  css::AdamState state = css::AdamState::zeros_like(params);
  css::adam_step(params, grads, state, 0.1, 0.9, 0.999, 1e-8);

  // mhat = vhat = 1 at step one, so the update is -lr/(1+eps).
  const double moved = static_cast<double>(params.tok_emb(6, 3)) - before;
  CHECK(moved == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-6));

  // Everything else is untouched.
  const css::ModelParams fresh = css::init_model(fix.model);
  CHECK(params.tok_emb(6, 4) == fresh.tok_emb(6, 4));
  CHECK((params.out_w - fresh.out_w).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("adam is deterministic") {
  const Fixture fix;
  css::ModelParams a = css::init_model(fix.model);
  css::ModelParams b = css::init_model(fix.model);
  css::ModelGrads grads = css::ModelGrads::zeros_like(a);
  grads.out_w.setConstant(0.25);
  grads.tok_emb.setConstant(-0.5);
  css::AdamState sa = css::AdamState::zeros_like(a);
  css::AdamState sb = css::AdamState::zeros_like(b);
  for (int i = 0; i < 3; ++i) {
    css::adam_step(a, grads, sa, 1e-2, 0.9, 0.999, 1e-8);
    css::adam_step(b, grads, sb, 1e-2, 0.9, 0.999, 1e-8);
  }
  CHECK(params_equal(a, b));
}

TEST_CASE("batch loss is the pair mean and never reads labels") {
  const Fixture fix;
  const css::ModelParams params = css::init_model(fix.model);
  css::LossHyper hyper;

  const std::vector<const css::TwinPair*> one = {&fix.corpus.pairs[0]};
  const std::vector<const css::TwinPair*> two = {&fix.corpus.pairs[0],
                                                 &fix.corpus.pairs[1]};
  const css::BatchLoss l0 =
      css::batch_loss_and_grads(params, one, fix.vocab, hyper, nullptr);
  const std::vector<const css::TwinPair*> other = {&fix.corpus.pairs[1]};
  const css::BatchLoss l1 =
      css::batch_loss_and_grads(params, other, fix.vocab, hyper, nullptr);
  const css::BatchLoss both =
      css::batch_loss_and_grads(params, two, fix.vocab, hyper, nullptr);
  CHECK(both.total ==
        doctest::Approx((l0.total + l1.total) / 2).epsilon(1e-12));
  CHECK(both.mex + both.cm == doctest::Approx(both.total).epsilon(1e-12));

  CHECK_THROWS_AS(
      css::batch_loss_and_grads(params, {}, fix.vocab, hyper, nullptr),
      std::runtime_error);
}

TEST_CASE("train rejects impossible inputs") {
  const Fixture fix;
  css::ModelParams params = css::init_model(fix.model);

  css::Corpus empty;
  CHECK_THROWS_WITH_AS(
      css::train(quick_config(), empty, params, fix.vocab),
      doctest::Contains("empty corpus"), std::runtime_error);

  std::vector<std::string> small(css::kSpecialTokens,
                                 css::kSpecialTokens + css::kNumSpecials);
  small.push_back("stray");
  const css::Vocab wrong(small);
  CHECK_THROWS_WITH_AS(css::train(quick_config(), fix.corpus, params, wrong),
                       doctest::Contains("does not match"),
                       std::runtime_error);
}

TEST_CASE("one pair for one epoch is exactly one optimizer step") {
  Fixture fix(1);
  css::ModelParams params = css::init_model(fix.model);
  const css::TrainLog log =
      css::train(quick_config(1), fix.corpus, params, fix.vocab);
  REQUIRE(log.steps.size() == 1);
  CHECK(log.steps[0].epoch == 1);
  CHECK(log.steps[0].step == 1);
  CHECK(log.steps[0].pairs == 1);
  CHECK(log.steps[0].total ==
        doctest::Approx(log.steps[0].mex + log.steps[0].cm).epsilon(1e-6));
  CHECK(log.final_total == log.steps[0].total);
}

TEST_CASE("the last partial batch is processed") {
  Fixture fix(5);
  css::ModelParams params = css::init_model(fix.model);
  const css::TrainLog log =
      css::train(quick_config(2), fix.corpus, params, fix.vocab);
  REQUIRE(log.steps.size() == 4);  // per epoch: one batch of 4, one of 1
  CHECK(log.steps[0].pairs == 4);
  CHECK(log.steps[1].pairs == 1);
  CHECK(log.steps[3].step == 4);
}

TEST_CASE("training is deterministic and label-free") {
  Fixture fix(6);
  const css::TrainConfig config = quick_config(2);

  css::ModelParams a = css::init_model(fix.model);
  const css::TrainLog log_a = css::train(config, fix.corpus, a, fix.vocab);

  css::ModelParams b = css::init_model(fix.model);
  const css::TrainLog log_b = css::train(config, fix.corpus, b, fix.vocab);
  CHECK(params_equal(a, b));
  REQUIRE(log_a.steps.size() == log_b.steps.size());
  for (size_t i = 0; i < log_a.steps.size(); ++i)
    CHECK(log_a.steps[i].total == log_b.steps[i].total);

  // Removing the labels changes nothing about the updates.
  css::ModelParams c = css::init_model(fix.model);
  css::train(config, css::strip_labels(fix.corpus), c, fix.vocab);
  CHECK(params_equal(a, c));
}

TEST_CASE("different train seeds shuffle differently") {
  Fixture fix(8);
  css::TrainConfig config = quick_config(2);
  css::ModelParams a = css::init_model(fix.model);
  css::train(config, fix.corpus, a, fix.vocab);

  config.seed = 8;
  css::ModelParams b = css::init_model(fix.model);
  css::train(config, fix.corpus, b, fix.vocab);
  CHECK_FALSE(params_equal(a, b));
}

TEST_CASE("the mex loss trends down on a small corpus") {
  Fixture fix(12, 9);
  css::TrainConfig config = quick_config(6);
  css::ModelParams params = css::init_model(fix.model);
  const css::TrainLog log = css::train(config, fix.corpus, params, fix.vocab);
  CHECK(epoch_mean_mex(log, 6) < epoch_mean_mex(log, 1));
}

TEST_CASE("intermediate snapshots land on the configured cadence") {
  const auto dir = testutil::temp_dir("train_snap");
  Fixture fix(4);
  css::TrainConfig config = quick_config(2);
  config.checkpoint_every = 2;
  config.checkpoint_path = (dir / "snap.ckpt").string();
  css::ModelParams params = css::init_model(fix.model);
  css::train(config, fix.corpus, params, fix.vocab);

  const css::Checkpoint snap = css::load_checkpoint(config.checkpoint_path);
  CHECK(params_equal(snap.params, params));  // epoch 2 of 2 is the final state
}

TEST_CASE("train logs round-trip through JSON lines") {
  const auto dir = testutil::temp_dir("train_log");
  Fixture fix(3);
  css::ModelParams params = css::init_model(fix.model);
  const css::TrainLog log =
      css::train(quick_config(2), fix.corpus, params, fix.vocab);

  const std::string path = (dir / "log.jsonl").string();
  css::save_train_log(path, log);
  const css::TrainLog loaded = css::load_train_log(path);
  REQUIRE(loaded.steps.size() == log.steps.size());
  for (size_t i = 0; i < log.steps.size(); ++i) {
    CHECK(loaded.steps[i].epoch == log.steps[i].epoch);
    CHECK(loaded.steps[i].step == log.steps[i].step);
    CHECK(loaded.steps[i].pairs == log.steps[i].pairs);
    CHECK(loaded.steps[i].mex == log.steps[i].mex);
    CHECK(loaded.steps[i].cm == log.steps[i].cm);
    CHECK(loaded.steps[i].total == log.steps[i].total);
  }
}
