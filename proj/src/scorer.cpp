#include "css/scorer.hpp"

#include <cmath>
#include <stdexcept>

namespace css {

MaskedQuery build_masked_query(const SchemaSentence& sentence,
                               const std::string& candidate,
                               const Vocab& vocab, int max_len) {
  const size_t pos = sentence.text.find('_');
  if (pos == std::string::npos)
    throw std::runtime_error("sentence has no placeholder");
  if (sentence.text.find('_', pos + 1) != std::string::npos)
    throw std::runtime_error("sentence has multiple placeholders");

  const std::vector<int> cand_ids = encode(candidate, vocab);
  if (cand_ids.empty())
    throw std::runtime_error("candidate tokenizes to zero tokens");

  MaskedQuery query;
  query.ids.push_back(kClsId);
  for (const int id : encode(sentence.text.substr(0, pos), vocab))
    query.ids.push_back(id);
  for (size_t m = 0; m < cand_ids.size(); ++m) {
    query.mask_positions.push_back(static_cast<int>(query.ids.size()));
    query.ids.push_back(kMaskId);
  }
  for (const int id : encode(sentence.text.substr(pos + 1), vocab))
    query.ids.push_back(id);
  query.ids.push_back(kSepId);
  query.candidate_ids = cand_ids;

  if (max_len > 0 && static_cast<int>(query.ids.size()) > max_len)
    throw std::runtime_error("masked sentence length " +
                             std::to_string(query.ids.size()) +
                             " exceeds max_len " + std::to_string(max_len));
  return query;
}

double candidate_log_probability(const MatD& log_prob_rows,
                                 const MaskedQuery& query) {
  const auto k = query.candidate_ids.size();
  if (static_cast<size_t>(log_prob_rows.rows()) != k)
    throw std::runtime_error("log-prob row count does not match mask count");
  double sum = 0.0;
  for (size_t m = 0; m < k; ++m) {
    const int id = query.candidate_ids[m];
    if (id < 0 || id >= log_prob_rows.cols())
      throw std::runtime_error("candidate id outside backend vocabulary");
    sum += log_prob_rows(static_cast<Eigen::Index>(m), id);
  }
  return sum / static_cast<double>(k);
}

double candidate_probability(ScorerBackend& backend,
                             const MaskedQuery& query) {
  const std::vector<MatD> rows = backend.score({query});
  return std::exp(candidate_log_probability(rows.at(0), query));
}

PairProb pair_probabilities(ScorerBackend& backend, const TwinPair& pair,
                            const Vocab& vocab, int max_len) {
  std::vector<MaskedQuery> queries;
  queries.reserve(4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      queries.push_back(build_masked_query(pair.sentences[j],
                                           pair.candidates[i], vocab,
                                           max_len));
  const std::vector<MatD> rows = backend.score(queries);
  if (rows.size() != 4)
    throw std::runtime_error("backend returned wrong result count");
  PairProb out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      out.p[i][j] =
          std::exp(candidate_log_probability(rows[i * 2 + j], queries[i * 2 + j]));
  return out;
}

}  // namespace css
