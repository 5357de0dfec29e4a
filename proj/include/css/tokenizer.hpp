#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace css {

struct Corpus;

// Reserved ids; the vocab file keeps these on lines 0-4.
enum SpecialId : int {
  kPadId = 0,
  kUnkId = 1,
  kMaskId = 2,
  kClsId = 3,
  kSepId = 4,
};

constexpr int kNumSpecials = 5;
extern const char* const kSpecialTokens[kNumSpecials];

class Vocab {
 public:
  Vocab() = default;
  // Token list must start with the five specials and contain no duplicates.
  explicit Vocab(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int id(const std::string& token) const;  // kUnkId when absent

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercase, split on whitespace; punctuation bytes become their own tokens.
// Rejects text containing the '_' placeholder (substitution is the scorer's
// job, not the tokenizer's).
std::vector<std::string> split_words(const std::string& text);

std::vector<int> encode(const std::string& text, const Vocab& vocab);

// Specials plus every corpus token (sentences and candidates) whose
// frequency reaches min_freq, ordered by descending frequency then
// lexicographically.
Vocab build_vocab(const Corpus& corpus, int min_freq = 1);

void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

}  // namespace css
