#pragma once

#include <array>
#include <string>

#include "css/corpus.hpp"
#include "css/scoring_types.hpp"
#include "css/tokenizer.hpp"

namespace css {

struct ResolveResult {
  int chosen = 0;  // argmax candidate; ties go to 0
  bool tie = false;
  std::array<double, 2> prob{0.0, 0.0};
};

ResolveResult resolve(ScorerBackend& backend, const SchemaSentence& sentence,
                      const std::array<std::string, 2>& candidates,
                      const Vocab& vocab, int max_len = 0);

struct EvalReport {
  std::string dataset;
  int n_sentences = 0;
  int n_pairs = 0;
  int tie_count = 0;
  double accuracy = 0.0;     // per sentence
  double consistency = 0.0;  // per pair, both sentences correct
};

// Requires a fully labeled corpus; never mutates the backend.
EvalReport evaluate(ScorerBackend& backend, const Corpus& corpus,
                    const Vocab& vocab, int max_len = 0);

std::string eval_report_json(const EvalReport& report);

}  // namespace css
