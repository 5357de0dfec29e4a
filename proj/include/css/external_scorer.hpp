#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "css/scoring_types.hpp"
#include "css/tokenizer.hpp"

namespace css {

// Evaluation-only backend that shells out to a peer process speaking
// newline-delimited JSON on its standard input/output. Requests carry token
// strings and mask positions; responses carry one log-prob vector (local
// vocabulary length) per mask. Responses may arrive out of order, but every
// id must be answered exactly once.
class ExternalScorer final : public ScorerBackend {
 public:
  ExternalScorer(const std::string& command, const Vocab& vocab,
                 int timeout_ms = 30000);
  ~ExternalScorer() override;

  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  int vocab_size() const override { return vocab_.size(); }
  std::vector<MatD> score(const std::vector<MaskedQuery>& queries) override;

 private:
  std::string read_line_blocking(uint64_t waiting_id);

  const Vocab& vocab_;
  int timeout_ms_;
  int child_pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  uint64_t next_id_ = 1;
  std::string buffer_;
};

}  // namespace css
