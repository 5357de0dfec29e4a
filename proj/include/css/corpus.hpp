#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace css {

// One half of a twin pair. `text` contains exactly one '_' standing in for
// the pronoun; `label` is the index of the correct candidate and is only
// consulted at evaluation time.
struct SchemaSentence {
  std::string text;
  std::optional<int> label;
};

// Two sentences that differ only in their trigger words, sharing the same
// two answer candidates.
struct TwinPair {
  std::string id;
  std::array<SchemaSentence, 2> sentences;
  std::array<std::string, 2> candidates;
};

struct Corpus {
  std::string name;
  std::vector<TwinPair> pairs;
  bool labeled = false;

  size_t size() const { return pairs.size(); }
};

struct Violation {
  std::string pair_id;
  std::string reason;
};

struct ValidationReport {
  size_t n_pairs = 0;
  double labeled_fraction = 0.0;
  std::vector<Violation> violations;

  bool clean() const { return violations.empty(); }
};

// Reads JSON Lines without enforcing twin-pair invariants; throws
// std::runtime_error on malformed lines (message carries the line number).
Corpus parse_corpus(const std::string& path);

// parse_corpus plus invariant checks; throws on the first violation with
// its line number (e.g. "missing placeholder, line 3").
Corpus load_corpus(const std::string& path);

// Invariant violations as data, one entry per offence.
ValidationReport validate(const Corpus& corpus);

// Canonical JSON Lines form: one pair per line, keys sorted, '\n' endings.
std::string corpus_to_jsonl(const Corpus& corpus);
void save_corpus(const std::string& path, const Corpus& corpus);

// Labeled twin pairs from built-in templates where the trigger adjective
// picks the referent. Identical arguments give byte-identical corpora.
Corpus synth_generate(uint64_t seed, int n_pairs, int n_templates = 6);

// Number of template families synth_generate can draw from.
int synth_template_count();

Corpus strip_labels(const Corpus& corpus);

}  // namespace css
