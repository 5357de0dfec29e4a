#include "css/eval.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "css/scorer.hpp"

namespace css {

ResolveResult resolve(ScorerBackend& backend, const SchemaSentence& sentence,
                      const std::array<std::string, 2>& candidates,
                      const Vocab& vocab, int max_len) {
  std::vector<MaskedQuery> queries;
  queries.reserve(2);
  for (int i = 0; i < 2; ++i)
    queries.push_back(
        build_masked_query(sentence, candidates[i], vocab, max_len));
  const std::vector<MatD> rows = backend.score(queries);
  if (rows.size() != 2)
    throw std::runtime_error("backend returned wrong result count");

  ResolveResult out;
  for (int i = 0; i < 2; ++i)
    out.prob[i] = std::exp(candidate_log_probability(rows[i], queries[i]));
  out.tie = out.prob[0] == out.prob[1];
  out.chosen = out.prob[1] > out.prob[0] ? 1 : 0;
  return out;
}

EvalReport evaluate(ScorerBackend& backend, const Corpus& corpus,
                    const Vocab& vocab, int max_len) {
  if (corpus.pairs.empty())
    throw std::runtime_error("cannot evaluate an empty corpus");
  if (!corpus.labeled)
    throw std::runtime_error("evaluation needs a fully labeled corpus");

  EvalReport report;
  report.dataset = corpus.name;
  int correct_sentences = 0;
  int consistent_pairs = 0;
  for (const TwinPair& pair : corpus.pairs) {
    int correct_here = 0;
    for (int j = 0; j < 2; ++j) {
      const ResolveResult res =
          resolve(backend, pair.sentences[j], pair.candidates, vocab, max_len);
      if (res.tie) ++report.tie_count;
      if (res.chosen == *pair.sentences[j].label) ++correct_here;
    }
    correct_sentences += correct_here;
    if (correct_here == 2) ++consistent_pairs;
  }
  report.n_pairs = static_cast<int>(corpus.pairs.size());
  report.n_sentences = 2 * report.n_pairs;
  report.accuracy =
      static_cast<double>(correct_sentences) / report.n_sentences;
  report.consistency =
      static_cast<double>(consistent_pairs) / report.n_pairs;
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  const nlohmann::json j = {{"dataset", report.dataset},
                            {"n_sentences", report.n_sentences},
                            {"n_pairs", report.n_pairs},
                            {"tie_count", report.tie_count},
                            {"accuracy", report.accuracy},
                            {"consistency", report.consistency}};
  return j.dump(2);
}

}  // namespace css
