#include "css/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "css/corpus.hpp"

namespace css {

const char* const kSpecialTokens[kNumSpecials] = {"[PAD]", "[UNK]", "[MASK]",
                                                  "[CLS]", "[SEP]"};

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kNumSpecials)
    throw std::runtime_error("vocab smaller than the reserved specials");
  for (int i = 0; i < kNumSpecials; ++i) {
    if (tokens_[i] != kSpecialTokens[i])
      throw std::runtime_error(std::string("vocab missing special token ") +
                               kSpecialTokens[i] + " at id " +
                               std::to_string(i));
  }
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::runtime_error("duplicate vocab token \"" + tokens_[i] + "\"");
  }
}

int Vocab::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

namespace {

bool is_word_byte(unsigned char c) {
  // Multi-byte UTF-8 sequences count as word characters.
  return std::isalnum(c) || c >= 0x80;
}

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == '_')
      throw std::runtime_error(
          "text contains the placeholder '_'; substitute it before encoding");
    if (std::isspace(c)) {
      if (!word.empty()) out.push_back(std::move(word)), word.clear();
      continue;
    }
    if (is_word_byte(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      if (!word.empty()) out.push_back(std::move(word)), word.clear();
      out.emplace_back(1, ch);
    }
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

std::vector<int> encode(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& word : split_words(text)) ids.push_back(vocab.id(word));
  return ids;
}

Vocab build_vocab(const Corpus& corpus, int min_freq) {
  if (corpus.pairs.empty()) throw std::runtime_error("empty corpus");
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");

  // std::map keeps ties lexicographic without a second sort key pass.
  std::map<std::string, size_t> freq;
  auto count = [&freq](const std::string& text) {
    for (auto& word : split_words(text)) ++freq[word];
  };
  for (const auto& pair : corpus.pairs) {
    for (const auto& sentence : pair.sentences) {
      // Drop the placeholder; everything else is counted.
      std::string text = sentence.text;
      std::replace(text.begin(), text.end(), '_', ' ');
      count(text);
    }
    for (const auto& candidate : pair.candidates) count(candidate);
  }

  std::vector<std::pair<std::string, size_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second;
                   });

  std::vector<std::string> tokens(kSpecialTokens,
                                  kSpecialTokens + kNumSpecials);
  for (const auto& [word, n] : entries)
    if (n >= static_cast<size_t>(min_freq)) tokens.push_back(word);
  return Vocab(std::move(tokens));
}

void save_vocab(const std::string& path, const Vocab& vocab) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& token : vocab.tokens()) out << token << '\n';
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocab(std::move(tokens));
}

}  // namespace css
