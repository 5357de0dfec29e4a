#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "css/corpus.hpp"
#include "css/eval.hpp"
#include "css/external_scorer.hpp"
#include "css/gradcheck.hpp"
#include "css/loss.hpp"
#include "css/mlm.hpp"
#include "css/run_config.hpp"
#include "css/scorer.hpp"
#include "css/tokenizer.hpp"
#include "css/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int run_validate(const std::string& corpus_path) {
  const css::Corpus corpus = css::parse_corpus(corpus_path);
  const css::ValidationReport report = css::validate(corpus);
  std::printf("pairs: %zu\n", report.n_pairs);
  std::printf("labeled: %.1f%%\n", 100.0 * report.labeled_fraction);
  for (const css::Violation& v : report.violations)
    std::printf("pair \"%s\": %s\n", v.pair_id.c_str(), v.reason.c_str());
  std::printf("clean: %s\n", report.clean() ? "yes" : "no");
  return report.clean() ? kExitOk : kExitData;
}

int run_synth(uint64_t seed, int n_pairs, int n_templates,
              const std::string& out_path, int holdout,
              const std::string& holdout_path) {
  css::Corpus corpus = css::synth_generate(seed, n_pairs + holdout,
                                           n_templates);
  if (holdout > 0) {
    css::Corpus held = corpus;
    held.pairs.assign(corpus.pairs.begin() + n_pairs, corpus.pairs.end());
    held.name += "-holdout";
    corpus.pairs.resize(n_pairs);
    css::save_corpus(holdout_path, held);
    std::printf("wrote %d holdout pairs to %s\n", holdout,
                holdout_path.c_str());
  }
  css::save_corpus(out_path, corpus);
  std::printf("wrote %d pairs to %s\n", n_pairs, out_path.c_str());
  return kExitOk;
}

int run_build_vocab(const std::string& corpus_path, const std::string& out,
                    int min_freq) {
  const css::Corpus corpus = css::load_corpus(corpus_path);
  const css::Vocab vocab = css::build_vocab(corpus, min_freq);
  css::save_vocab(out, vocab);
  std::printf("wrote %d tokens to %s\n", vocab.size(), out.c_str());
  return kExitOk;
}

int run_train(css::RunConfig config) {
  if (config.corpus_path.empty())
    throw std::runtime_error("train needs paths.corpus in the config");
  if (config.vocab_path.empty())
    throw std::runtime_error("train needs paths.vocab in the config");
  if (config.checkpoint_path.empty())
    throw std::runtime_error("train needs paths.checkpoint in the config");

  const css::Corpus corpus = css::load_corpus(config.corpus_path);
  const css::Vocab vocab = css::load_vocab(config.vocab_path);
  if (config.model.vocab_size != 0 &&
      config.model.vocab_size != vocab.size())
    throw std::runtime_error("config vocab_size does not match vocab file");
  config.model.vocab_size = vocab.size();
  config.train.checkpoint_path = config.checkpoint_path;

  css::ModelParams params = css::init_model(config.model);
  const css::TrainLog log =
      css::train(config.train, corpus, params, vocab);
  css::save_checkpoint(config.checkpoint_path, params, vocab);
  if (!config.train_log_path.empty())
    css::save_train_log(config.train_log_path, log);

  std::printf("steps: %zu\n", log.steps.size());
  std::printf("final mex: %.6f\n", log.final_mex);
  std::printf("final cm: %.6f\n", log.final_cm);
  std::printf("final total: %.6f\n", log.final_total);
  std::printf("wall_ms: %.0f\n",
              log.steps.empty() ? 0.0 : log.steps.back().wall_ms);
  std::printf("checkpoint: %s\n", config.checkpoint_path.c_str());
  return kExitOk;
}

int run_eval(const std::string& checkpoint_path,
             const std::string& corpus_path, const std::string& external,
             int timeout_ms, const std::string& out_path) {
  const css::Checkpoint ckpt = css::load_checkpoint(checkpoint_path);
  const css::Corpus corpus = css::load_corpus(corpus_path);

  css::EvalReport report;
  if (external.empty()) {
    css::MlmBackend backend(ckpt.params);
    report = css::evaluate(backend, corpus, ckpt.vocab,
                           ckpt.params.config.max_len);
  } else {
    css::ExternalScorer backend(external, ckpt.vocab, timeout_ms);
    report = css::evaluate(backend, corpus, ckpt.vocab);
  }

  const std::string text = css::eval_report_json(report);
  if (out_path.empty()) {
    std::printf("%s\n", text.c_str());
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write report: " + out_path);
    out << text << "\n";
    std::printf("wrote report to %s\n", out_path.c_str());
  }
  return kExitOk;
}

int run_score(const std::string& checkpoint_path, const std::string& sentence,
              const std::string& candidates_arg) {
  const size_t bar = candidates_arg.find('|');
  if (bar == std::string::npos || candidates_arg.find('|', bar + 1) !=
                                      std::string::npos) {
    std::fprintf(stderr, "error: --candidates wants exactly \"first|second\"\n");
    return kExitUsage;
  }
  const std::array<std::string, 2> candidates = {
      candidates_arg.substr(0, bar), candidates_arg.substr(bar + 1)};

  const css::Checkpoint ckpt = css::load_checkpoint(checkpoint_path);
  css::MlmBackend backend(ckpt.params);
  const css::SchemaSentence probe{sentence, std::nullopt};
  const css::ResolveResult res =
      css::resolve(backend, probe, candidates, ckpt.vocab,
                   ckpt.params.config.max_len);
  for (int i = 0; i < 2; ++i)
    std::printf("p[%d] (\"%s\") = %.9g\n", i, candidates[i].c_str(),
                res.prob[i]);
  std::printf("chosen: %d%s\n", res.chosen, res.tie ? " (tie)" : "");
  return kExitOk;
}

int run_grad_check(const std::string& config_path, int trials) {
  css::RunConfig config;
  if (!config_path.empty()) config = css::load_run_config(config_path);

  const css::GradCheckReport loss_report = css::grad_check_loss(
      config.train.loss, config.model.seed, trials);
  std::printf("loss gradients: %d/%d within %g (max rel err %.3g at %s)\n",
              loss_report.n_passed, loss_report.n_checked,
              loss_report.tolerance, loss_report.max_rel_err,
              loss_report.worst_coord.c_str());

  const css::GradCheckReport model_report = css::grad_check_model(
      config.model, config.train.loss, config.model.seed, 5 * trials);
  std::printf("model gradients: %d/%d within %g (max rel err %.3g at %s)\n",
              model_report.n_passed, model_report.n_checked,
              model_report.tolerance, model_report.max_rel_err,
              model_report.worst_coord.c_str());

  const bool ok = loss_report.ok() && model_report.ok(0.99);
  std::printf("%s\n", ok ? "gradients verified" : "gradient check FAILED");
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Twin-sentence pronoun disambiguation: self-supervised trainer and "
      "evaluator over a masked-language-model candidate scorer."};
  app.require_subcommand(1);

  std::string v_corpus;
  CLI::App* validate =
      app.add_subcommand("validate", "Check a JSONL corpus and report violations");
  validate->add_option("corpus", v_corpus, "corpus JSONL file")->required();

  uint64_t s_seed = 1;
  int s_pairs = 100;
  int s_templates = css::synth_template_count();
  int s_holdout = 0;
  std::string s_out, s_holdout_out;
  CLI::App* synth =
      app.add_subcommand("synth", "Generate a synthetic twin-pair corpus");
  synth->add_option("--seed", s_seed, "generator seed")->capture_default_str();
  synth->add_option("--pairs", s_pairs, "number of pairs")
      ->capture_default_str();
  synth->add_option("--templates", s_templates,
                    "template families to draw from")
      ->check(CLI::Range(1, css::synth_template_count()))
      ->capture_default_str();
  synth->add_option("--out", s_out, "output JSONL path")->required();
  synth->add_option("--holdout", s_holdout,
                    "extra pairs written to a separate file")
      ->capture_default_str();
  synth->add_option("--holdout-out", s_holdout_out,
                    "path for the held-out pairs");

  std::string bv_corpus, bv_out;
  int bv_min_freq = 1;
  CLI::App* build_vocab = app.add_subcommand(
      "build-vocab", "Write the vocabulary file for a corpus");
  build_vocab->add_option("corpus", bv_corpus, "corpus JSONL file")
      ->required();
  build_vocab->add_option("--out", bv_out, "output vocab path")->required();
  build_vocab->add_option("--min-freq", bv_min_freq, "minimum token count")
      ->capture_default_str();

  std::string t_config;
  bool t_no_cm = false;
  std::string t_cm_variant;
  std::string t_corpus_override, t_vocab_override, t_checkpoint_override,
      t_log_override;
  int t_epochs = 0;
  double t_lr = 0.0;
  uint64_t t_seed = 0;
  bool t_seed_set = false, t_epochs_set = false, t_lr_set = false;
  CLI::App* train = app.add_subcommand("train", "Train from a JSON config");
  train->add_option("--config", t_config, "run config JSON")->required();
  train->add_flag("--no-cm", t_no_cm,
                  "disable the contrastive margin term (ablation)");
  train->add_option("--cm-variant", t_cm_variant,
                    "contrastive margin form: verbatim or hinge");
  train->add_option("--corpus", t_corpus_override, "override paths.corpus");
  train->add_option("--vocab", t_vocab_override, "override paths.vocab");
  train->add_option("--checkpoint", t_checkpoint_override,
                    "override paths.checkpoint");
  train->add_option("--train-log", t_log_override,
                    "override paths.train_log");
  train->add_option("--epochs", t_epochs, "override train.epochs")
      ->each([&t_epochs_set](const std::string&) { t_epochs_set = true; });
  train->add_option("--lr", t_lr, "override train.learning_rate")
      ->each([&t_lr_set](const std::string&) { t_lr_set = true; });
  train->add_option("--seed", t_seed, "override train.seed")
      ->each([&t_seed_set](const std::string&) { t_seed_set = true; });

  std::string e_checkpoint, e_corpus, e_external, e_out;
  int e_timeout = 30000;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Score a labeled corpus and report metrics");
  eval_cmd->add_option("--checkpoint", e_checkpoint, "model checkpoint")
      ->required();
  eval_cmd->add_option("--corpus", e_corpus, "labeled corpus JSONL")
      ->required();
  eval_cmd->add_option("--external-scorer", e_external,
                       "shell command for a peer scorer process");
  eval_cmd->add_option("--timeout-ms", e_timeout,
                       "per-response timeout for the peer")
      ->capture_default_str();
  eval_cmd->add_option("--out", e_out, "write the JSON report here");

  std::string sc_checkpoint, sc_sentence, sc_candidates;
  CLI::App* score =
      app.add_subcommand("score", "Score one sentence with two candidates");
  score->add_option("--checkpoint", sc_checkpoint, "model checkpoint")
      ->required();
  score->add_option("--sentence", sc_sentence,
                    "sentence with a _ placeholder")
      ->required();
  score->add_option("--candidates", sc_candidates,
                    "the two candidates as \"first|second\"")
      ->required();

  std::string g_config;
  int g_trials = 100;
  CLI::App* grad_check = app.add_subcommand(
      "grad-check", "Finite-difference verification of the gradients");
  grad_check->add_option("--config", g_config, "run config JSON");
  grad_check
      ->add_option("--trials", g_trials,
                   "loss points to test (model coordinates: 5x)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand(validate)) return run_validate(v_corpus);
    if (app.got_subcommand(synth)) {
      if (s_pairs < 1 || s_holdout < 0) {
        std::fprintf(stderr, "error: --pairs must be >= 1, --holdout >= 0\n");
        return kExitUsage;
      }
      if (s_holdout > 0 && s_holdout_out.empty()) {
        std::fprintf(stderr, "error: --holdout needs --holdout-out\n");
        return kExitUsage;
      }
      return run_synth(s_seed, s_pairs, s_templates, s_out, s_holdout,
                       s_holdout_out);
    }
    if (app.got_subcommand(build_vocab))
      return run_build_vocab(bv_corpus, bv_out, bv_min_freq);
    if (app.got_subcommand(train)) {
      css::RunConfig config = css::load_run_config(t_config);
      if (t_no_cm) config.train.loss.cm_enabled = false;
      if (!t_cm_variant.empty())
        config.train.loss.cm_variant =
            css::cm_variant_from_string(t_cm_variant);
      if (!t_corpus_override.empty()) config.corpus_path = t_corpus_override;
      if (!t_vocab_override.empty()) config.vocab_path = t_vocab_override;
      if (!t_checkpoint_override.empty())
        config.checkpoint_path = t_checkpoint_override;
      if (!t_log_override.empty()) config.train_log_path = t_log_override;
      if (t_epochs_set) config.train.epochs = t_epochs;
      if (t_lr_set) config.train.learning_rate = t_lr;
      if (t_seed_set) config.train.seed = t_seed;
      return run_train(std::move(config));
    }
    if (app.got_subcommand(eval_cmd))
      return run_eval(e_checkpoint, e_corpus, e_external, e_timeout, e_out);
    if (app.got_subcommand(score))
      return run_score(sc_checkpoint, sc_sentence, sc_candidates);
    if (app.got_subcommand(grad_check))
      return run_grad_check(g_config, g_trials);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
