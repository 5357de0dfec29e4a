#pragma once

#include "css/corpus.hpp"
#include "css/scoring_types.hpp"
#include "css/tokenizer.hpp"

namespace css {

// Replaces the sentence's placeholder with one [MASK] per candidate token and
// wraps the result in [CLS]/[SEP]. A positive max_len bounds the final length.
MaskedQuery build_masked_query(const SchemaSentence& sentence,
                               const std::string& candidate,
                               const Vocab& vocab, int max_len = 0);

// Mean of the per-mask candidate-token log-probs; rows come from a backend.
double candidate_log_probability(const MatD& log_prob_rows,
                                 const MaskedQuery& query);

double candidate_probability(ScorerBackend& backend, const MaskedQuery& query);

// The four mask-fill likelihoods p[candidate][sentence] for a twin pair,
// fetched as one backend batch.
PairProb pair_probabilities(ScorerBackend& backend, const TwinPair& pair,
                            const Vocab& vocab, int max_len = 0);

}  // namespace css
