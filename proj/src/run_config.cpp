#include "css/run_config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace css {

using nlohmann::json;

namespace {

void expect_keys(const json& j, const std::string& where,
                 std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::runtime_error(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* name : allowed)
      if (key == name) {
        known = true;
        break;
      }
    if (!known)
      throw std::runtime_error("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void take(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& text,
                           const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error("config parse failure in " + origin + ": " +
                             e.what());
  }
  expect_keys(doc, origin, {"model", "loss", "train", "paths"});

  RunConfig config;
  if (doc.contains("model")) {
    const json& m = doc.at("model");
    expect_keys(m, "the model section",
                {"vocab_size", "dim", "n_layers", "n_heads", "ff_dim",
                 "max_len", "seed"});
    take(m, "vocab_size", config.model.vocab_size);
    take(m, "dim", config.model.dim);
    take(m, "n_layers", config.model.n_layers);
    take(m, "n_heads", config.model.n_heads);
    take(m, "ff_dim", config.model.ff_dim);
    take(m, "max_len", config.model.max_len);
    take(m, "seed", config.model.seed);
  }
  if (doc.contains("loss")) {
    const json& l = doc.at("loss");
    expect_keys(l, "the loss section",
                {"gamma", "alpha", "beta", "cm_enabled", "cm_variant"});
    take(l, "gamma", config.train.loss.gamma);
    take(l, "alpha", config.train.loss.alpha);
    take(l, "beta", config.train.loss.beta);
    take(l, "cm_enabled", config.train.loss.cm_enabled);
    if (l.contains("cm_variant"))
      config.train.loss.cm_variant =
          cm_variant_from_string(l.at("cm_variant").get<std::string>());
  }
  if (doc.contains("train")) {
    const json& t = doc.at("train");
    expect_keys(t, "the train section",
                {"epochs", "batch_pairs", "learning_rate", "adam_beta1",
                 "adam_beta2", "adam_eps", "seed", "checkpoint_every"});
    take(t, "epochs", config.train.epochs);
    take(t, "batch_pairs", config.train.batch_pairs);
    take(t, "learning_rate", config.train.learning_rate);
    take(t, "adam_beta1", config.train.adam_beta1);
    take(t, "adam_beta2", config.train.adam_beta2);
    take(t, "adam_eps", config.train.adam_eps);
    take(t, "seed", config.train.seed);
    take(t, "checkpoint_every", config.train.checkpoint_every);
  }
  if (doc.contains("paths")) {
    const json& p = doc.at("paths");
    expect_keys(p, "the paths section",
                {"corpus", "vocab", "checkpoint", "train_log", "eval_out"});
    take(p, "corpus", config.corpus_path);
    take(p, "vocab", config.vocab_path);
    take(p, "checkpoint", config.checkpoint_path);
    take(p, "train_log", config.train_log_path);
    take(p, "eval_out", config.eval_out_path);
  }
  config.train.checkpoint_path = config.checkpoint_path;
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path);
}

}  // namespace css
