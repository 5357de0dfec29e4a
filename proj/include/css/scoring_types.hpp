#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

namespace css {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A sentence with its pronoun placeholder replaced by k [MASK] tokens for a
// k-token candidate. Wrapped in [CLS]/[SEP].
struct MaskedQuery {
  std::vector<int> ids;
  std::vector<int> mask_positions;  // consecutive, ids[p] == kMaskId
  std::vector<int> candidate_ids;   // the k tokens the masks stand for
};

// p[i][j]: probability of candidate i filling the masks of sentence j.
// These are independent mask-fill likelihoods; rows and columns are not
// distributions and need not sum to 1.
struct PairProb {
  std::array<std::array<double, 2>, 2> p;
};

// Anything that can score masked queries: one matrix per query, row m being
// the log-probability vector over the vocabulary at mask position m. Every
// row exponentiates to a distribution summing to 1 within 1e-5.
class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;
  virtual int vocab_size() const = 0;
  virtual std::vector<MatD> score(const std::vector<MaskedQuery>& queries) = 0;
};

}  // namespace css
