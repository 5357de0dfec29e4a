// Release gate: one check per shipping criterion, each printing a PASS/FAIL
// line with the measured numbers. The desk-scale training arms are memoized
// so later criteria can reuse them.
#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>

#include "css/corpus.hpp"
#include "css/eval.hpp"
#include "css/external_scorer.hpp"
#include "css/gradcheck.hpp"
#include "css/loss.hpp"
#include "css/mlm.hpp"
#include "css/rng.hpp"
#include "css/scorer.hpp"
#include "css/tokenizer.hpp"
#include "css/train.hpp"

#include "test_util.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void criterion(int n, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s — %s\n", n, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  CHECK_MESSAGE(pass, "criterion ", n, ": ", detail);
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

// ---- shared desk-scale experiment -----------------------------------------

struct DeskData {
  css::Corpus train;
  css::Corpus holdout;
  css::Vocab vocab;
  css::ModelConfig model;
  css::TrainConfig trainer;
};

const DeskData& desk() {
  static const DeskData data = [] {
    DeskData d;
    css::Corpus all = css::synth_generate(7, 250);
    d.train = all;
    d.train.pairs.resize(200);
    d.holdout = all;
    d.holdout.pairs.assign(all.pairs.begin() + 200, all.pairs.end());
    d.holdout.name += "-holdout";
    d.vocab = css::build_vocab(d.train);
    d.model.vocab_size = d.vocab.size();
    d.model.seed = 3;
    d.trainer.epochs = 30;
    d.trainer.batch_pairs = 4;
    d.trainer.learning_rate = 1e-3;
    d.trainer.seed = 7;
    return d;
  }();
  return data;
}

struct ArmOutcome {
  css::TrainLog log;
  css::EvalReport report;
  std::string checkpoint_path;
  double seconds = 0.0;
};

ArmOutcome run_arm(bool cm_enabled, const std::string& tag) {
  const DeskData& d = desk();
  const auto dir = testutil::temp_dir("acceptance_" + tag);
  ArmOutcome arm;
  arm.checkpoint_path = (dir / "model.ckpt").string();

  const auto start = Clock::now();
  css::TrainConfig config = d.trainer;
  config.loss.cm_enabled = cm_enabled;
  css::ModelParams params = css::init_model(d.model);
  arm.log = css::train(config, d.train, params, d.vocab);
  css::save_checkpoint(arm.checkpoint_path, params, d.vocab);

  css::MlmBackend backend(params);
  arm.report = css::evaluate(backend, d.holdout, d.vocab, d.model.max_len);
  arm.seconds = seconds_since(start);
  return arm;
}

const ArmOutcome& main_arm() {
  static const ArmOutcome arm = run_arm(true, "main");
  return arm;
}

const ArmOutcome& ablation_arm() {
  static const ArmOutcome arm = run_arm(false, "no_cm");
  return arm;
}

// ---- small label-free experiment, reused by the round-trip checks ---------

struct LabelFreeData {
  std::string labeled_ckpt;
  std::string stripped_ckpt;
  std::string corpus_path;
  css::ModelConfig model;
};

const LabelFreeData& label_free() {
  static const LabelFreeData data = [] {
    LabelFreeData d;
    const auto dir = testutil::temp_dir("acceptance_labelfree");
    const css::Corpus corpus = css::synth_generate(3, 20);
    const css::Vocab vocab = css::build_vocab(corpus);
    d.model.vocab_size = vocab.size();
    d.model.dim = 16;
    d.model.n_layers = 1;
    d.model.n_heads = 2;
    d.model.ff_dim = 32;
    d.model.seed = 5;
    css::TrainConfig config;
    config.epochs = 2;
    config.learning_rate = 1e-3;
    config.seed = 5;

    css::ModelParams with_labels = css::init_model(d.model);
    css::train(config, corpus, with_labels, vocab);
    d.labeled_ckpt = (dir / "labeled.ckpt").string();
    css::save_checkpoint(d.labeled_ckpt, with_labels, vocab);

    css::ModelParams without = css::init_model(d.model);
    css::train(config, css::strip_labels(corpus), without, vocab);
    d.stripped_ckpt = (dir / "stripped.ckpt").string();
    css::save_checkpoint(d.stripped_ckpt, without, vocab);

    d.corpus_path = (dir / "corpus.jsonl").string();
    css::save_corpus(d.corpus_path, corpus);
    return d;
  }();
  return data;
}

int checkpoint_vocab_size(const std::string& path) {
  return css::load_checkpoint(path).vocab.size();
}

}  // namespace

TEST_CASE("logical consistency corners") {
  const auto start = Clock::now();
  int n_true = 0;
  bool corners_right = true;
  for (int bits = 0; bits < 16; ++bits) {
    std::array<std::array<bool, 2>, 2> c;
    c[0][0] = bits & 1;
    c[0][1] = bits & 2;
    c[1][0] = bits & 4;
    c[1][1] = bits & 8;
    const bool truth = css::eval_logical(c);
    n_true += truth;
    const bool expected =
        (c[0][0] && !c[0][1] && !c[1][0] && c[1][1]) ||
        (!c[0][0] && c[0][1] && c[1][0] && !c[1][1]);
    corners_right = corners_right && truth == expected;
  }
  const double secs = seconds_since(start);
  criterion(1, corners_right && n_true == 2 && secs < 1.0,
            fmt("exactly %d of 16 corners accepted in %.3f s", n_true, secs));
}

TEST_CASE("soft relaxation agrees with boolean XOR") {
  const auto start = Clock::now();
  bool ok = css::soft_xor(0.0, 0.0) == 0.0 && css::soft_xor(1.0, 0.0) == 1.0 &&
            css::soft_xor(0.0, 1.0) == 1.0 && css::soft_xor(1.0, 1.0) == 0.0;
  css::Rng rng(2);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.next_double(), b = rng.next_double();
    worst = std::max(worst,
                     std::abs(css::soft_xor(a, b) - css::soft_xor(b, a)));
  }
  const double secs = seconds_since(start);
  ok = ok && worst <= 1e-12 && secs < 1.0;
  criterion(2, ok,
            fmt("corners exact, symmetry gap %.2e over 1000 points, %.3f s",
                worst, secs));
}

TEST_CASE("mutual-exclusivity loss at the reference points") {
  const auto start = Clock::now();
  const auto mex = [](std::array<std::array<double, 2>, 2> p) {
    css::PairProb prob;
    prob.p = p;
    return css::mex_loss(prob, 60.0).value;
  };
  const double corner = mex({{{1.0, 0.0}, {0.0, 1.0}}});
  const double uniform = mex({{{0.5, 0.5}, {0.5, 0.5}}});
  const double ones = mex({{{1.0, 1.0}, {1.0, 1.0}}});
  const double secs = seconds_since(start);
  criterion(3,
            corner == -60.0 && uniform == -22.5 && ones == 0.0 && secs < 1.0,
            fmt("corner %.6g, uniform %.6g, ones %.6g, %.3f s", corner,
                uniform, ones, secs));
}

TEST_CASE("loss gradients match central differences") {
  const auto start = Clock::now();
  css::LossHyper hyper;
  const css::GradCheckReport report = css::grad_check_loss(hyper, 1, 100);
  const double secs = seconds_since(start);
  criterion(4, report.ok() && secs < 1.0,
            fmt("%d/%d coordinates within %g (max rel err %.2e), %.3f s",
                report.n_passed, report.n_checked, report.tolerance,
                report.max_rel_err, secs));
}

TEST_CASE("model gradients match central differences") {
  const auto start = Clock::now();
  css::ModelConfig config;
  config.dim = 8;
  config.n_layers = 1;
  config.n_heads = 2;
  config.ff_dim = 32;
  config.max_len = 32;
  config.seed = 3;
  css::LossHyper hyper;
  const css::GradCheckReport report =
      css::grad_check_model(config, hyper, 3, 500);
  const double secs = seconds_since(start);
  criterion(5, report.ok(0.99) && secs < 60.0,
            fmt("%d/%d coordinates within %g (max rel err %.2e at %s), %.1f s",
                report.n_passed, report.n_checked, report.tolerance,
                report.max_rel_err, report.worst_coord.c_str(), secs));
}

TEST_CASE("training never reads the labels") {
  const LabelFreeData& d = label_free();
  const std::string a = testutil::read_file(d.labeled_ckpt);
  const std::string b = testutil::read_file(d.stripped_ckpt);
  criterion(6, !a.empty() && a == b,
            fmt("checkpoints byte-identical with and without labels "
                "(%zu bytes)",
                a.size()));
}

TEST_CASE("contrastive self-supervision learns the task at desk scale") {
  const ArmOutcome& arm = main_arm();

  css::ModelParams untrained = css::init_model(desk().model);
  css::MlmBackend backend(untrained);
  const css::EvalReport baseline = css::evaluate(
      backend, desk().holdout, desk().vocab, desk().model.max_len);

  const bool pass = arm.report.accuracy >= 0.95 &&
                    arm.report.consistency >= 0.90 &&
                    std::abs(baseline.accuracy - 0.5) <= 0.1 &&
                    arm.seconds <= 300.0;
  criterion(7, pass,
            fmt("holdout accuracy %.3f (>= 0.95), consistency %.3f (>= 0.90), "
                "untrained %.3f (0.5 +/- 0.1), %.1f s (<= 300)",
                arm.report.accuracy, arm.report.consistency,
                baseline.accuracy, arm.seconds));
}

TEST_CASE("dropping the margin term only dents the accuracy") {
  const ArmOutcome& ablated = ablation_arm();

  double worst_gap = 0.0;
  for (const css::TrainLog* log : {&main_arm().log, &ablated.log})
    for (const css::StepRecord& step : log->steps)
      worst_gap = std::max(worst_gap,
                           std::abs(step.total - (step.mex + step.cm)));
  bool cm_all_zero = true;
  for (const css::StepRecord& step : ablated.log.steps)
    cm_all_zero = cm_all_zero && step.cm == 0.0;

  const bool pass = ablated.report.accuracy >= 0.90 && worst_gap <= 1e-6 &&
                    cm_all_zero;
  criterion(8, pass,
            fmt("ablated accuracy %.3f (>= 0.90), worst total-(mex+cm) gap "
                "%.2e, margin term zeroed: %s",
                ablated.report.accuracy, worst_gap,
                cm_all_zero ? "yes" : "no"));
}

TEST_CASE("the desk run repeats bit for bit") {
  const ArmOutcome& first = main_arm();
  const ArmOutcome second = run_arm(true, "repeat");

  const std::string bytes_a = testutil::read_file(first.checkpoint_path);
  const std::string bytes_b = testutil::read_file(second.checkpoint_path);
  const bool same_ckpt = !bytes_a.empty() && bytes_a == bytes_b;
  const bool same_report =
      first.report.accuracy == second.report.accuracy &&
      first.report.consistency == second.report.consistency &&
      first.report.tie_count == second.report.tie_count &&
      first.report.n_pairs == second.report.n_pairs &&
      first.report.n_sentences == second.report.n_sentences;
  criterion(9, same_ckpt && same_report,
            fmt("checkpoint bytes %s, reports %s",
                same_ckpt ? "identical" : "DIFFER",
                same_report ? "identical" : "DIFFER"));
}

TEST_CASE("artifacts round-trip and corruption is diagnosed") {
  const auto dir = testutil::temp_dir("acceptance_roundtrip");

  const css::Corpus corpus = css::synth_generate(5, 12);
  const std::string c1 = (dir / "c1.jsonl").string();
  const std::string c2 = (dir / "c2.jsonl").string();
  css::save_corpus(c1, corpus);
  css::save_corpus(c2, css::load_corpus(c1));
  const bool corpus_ok = testutil::read_file(c1) == testutil::read_file(c2);

  const css::Vocab vocab = css::build_vocab(corpus);
  const std::string v1 = (dir / "v1.txt").string();
  const std::string v2 = (dir / "v2.txt").string();
  css::save_vocab(v1, vocab);
  css::save_vocab(v2, css::load_vocab(v1));
  const bool vocab_ok = testutil::read_file(v1) == testutil::read_file(v2);

  const std::string k1 = label_free().labeled_ckpt;
  const std::string k2 = (dir / "k2.ckpt").string();
  const css::Checkpoint loaded = css::load_checkpoint(k1);
  css::save_checkpoint(k2, loaded.params, loaded.vocab);
  const bool ckpt_ok = testutil::read_file(k1) == testutil::read_file(k2);

  const std::string raw = testutil::read_file(k1);
  const auto expect_error = [&](std::string bytes,
                                const std::string& needle) {
    const std::string path = (dir / "corrupt.ckpt").string();
    testutil::write_file(path, bytes);
    try {
      css::load_checkpoint(path);
      return false;
    } catch (const std::runtime_error& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
  };
  std::string bad_magic = raw;
  bad_magic[0] = 'X';
  std::string bad_version = raw;
  bad_version[4] = 9;
  const bool corruption_ok =
      expect_error(bad_magic, "bad magic") &&
      expect_error(bad_version, "version mismatch") &&
      expect_error(raw.substr(0, raw.size() - 4), "truncated tensor data");

  criterion(10, corpus_ok && vocab_ok && ckpt_ok && corruption_ok,
            fmt("corpus %s, vocab %s, checkpoint %s, diagnostics %s",
                corpus_ok ? "ok" : "DIFFER", vocab_ok ? "ok" : "DIFFER",
                ckpt_ok ? "ok" : "DIFFER",
                corruption_ok ? "ok" : "WRONG"));
}

TEST_CASE("the external protocol interoperates end to end") {
  std::vector<std::string> tokens(css::kSpecialTokens,
                                  css::kSpecialTokens + css::kNumSpecials);
  for (const char* w : {"the", "key", "opened", "lock", "because", "it",
                        "was", "small", "."})
    tokens.push_back(w);
  const css::Vocab vocab(tokens);
  const std::string stub_cmd = std::string(UNIFORM_SCORER_PATH) +
                               " --vocab-size " +
                               std::to_string(vocab.size());

  css::ExternalScorer scorer(stub_cmd, vocab);
  const css::SchemaSentence sentence{
      "the key opened the lock because _ was small .", std::nullopt};
  const css::MaskedQuery query =
      css::build_masked_query(sentence, "key", vocab);
  const double p = css::candidate_probability(scorer, query);
  const double gap = std::abs(p - 1.0 / vocab.size());

  const LabelFreeData& d = label_free();
  const std::string peer = std::string(UNIFORM_SCORER_PATH) +
                           " --vocab-size " +
                           std::to_string(checkpoint_vocab_size(d.labeled_ckpt));
  const std::string cmd = std::string(CSS_CLI_PATH) + " eval --checkpoint " +
                          d.labeled_ckpt + " --corpus " + d.corpus_path +
                          " --external-scorer '" + peer + "' > /dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  const int code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;

  criterion(11, gap <= 1e-15 && code == 0,
            fmt("single-token candidate off uniform by %.2e (<= 1e-15), "
                "full eval over the peer exited %d",
                gap, code));
}
