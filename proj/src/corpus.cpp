#include "css/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "css/rng.hpp"

namespace css {

using nlohmann::json;

namespace {

size_t count_placeholders(const std::string& text) {
  return static_cast<size_t>(std::count(text.begin(), text.end(), '_'));
}

// Invariant failures for one pair, in a fixed report order.
std::vector<std::string> pair_violations(const TwinPair& pair) {
  std::vector<std::string> out;
  for (int j = 0; j < 2; ++j) {
    const size_t n = count_placeholders(pair.sentences[j].text);
    if (n == 0) out.push_back("missing placeholder");
    if (n > 1) out.push_back("multiple placeholders");
    const auto& label = pair.sentences[j].label;
    if (label && *label != 0 && *label != 1) out.push_back("label out of range");
  }
  if (pair.sentences[0].text == pair.sentences[1].text)
    out.push_back("sentences identical");
  if (pair.candidates[0].empty() || pair.candidates[1].empty())
    out.push_back("empty candidate");
  if (pair.candidates[0] == pair.candidates[1])
    out.push_back("duplicate candidates");
  return out;
}

void require_keys(const json& obj, const std::vector<std::string>& keys,
                  const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw std::runtime_error("unknown key \"" + it.key() + "\" in " + where);
  }
}

SchemaSentence parse_sentence(const json& node) {
  if (!node.is_object()) throw std::runtime_error("sentence is not an object");
  require_keys(node, {"text", "label"}, "sentence");
  if (!node.contains("text") || !node["text"].is_string())
    throw std::runtime_error("sentence missing string \"text\"");
  SchemaSentence s;
  s.text = node["text"].get<std::string>();
  if (node.contains("label") && !node["label"].is_null()) {
    if (!node["label"].is_number_integer())
      throw std::runtime_error("label must be an integer or null");
    s.label = node["label"].get<int>();
  }
  return s;
}

TwinPair parse_pair(const std::string& line) {
  json node = json::parse(line);
  if (!node.is_object()) throw std::runtime_error("line is not a JSON object");
  require_keys(node, {"id", "sentences", "candidates"}, "pair");
  if (!node.contains("id") || !node["id"].is_string())
    throw std::runtime_error("missing string \"id\"");
  if (!node.contains("sentences") || !node["sentences"].is_array() ||
      node["sentences"].size() != 2)
    throw std::runtime_error("\"sentences\" must be an array of 2");
  if (!node.contains("candidates") || !node["candidates"].is_array() ||
      node["candidates"].size() != 2)
    throw std::runtime_error("\"candidates\" must be an array of 2");
  for (const auto& c : node["candidates"])
    if (!c.is_string()) throw std::runtime_error("candidates must be strings");

  TwinPair pair;
  pair.id = node["id"].get<std::string>();
  pair.sentences[0] = parse_sentence(node["sentences"][0]);
  pair.sentences[1] = parse_sentence(node["sentences"][1]);
  pair.candidates[0] = node["candidates"][0].get<std::string>();
  pair.candidates[1] = node["candidates"][1].get<std::string>();
  return pair;
}

bool all_labeled(const Corpus& corpus) {
  for (const auto& p : corpus.pairs)
    for (const auto& s : p.sentences)
      if (!s.label) return false;
  return !corpus.pairs.empty();
}

json pair_to_json(const TwinPair& pair) {
  json sentences = json::array();
  for (const auto& s : pair.sentences) {
    json node;
    node["text"] = s.text;
    node["label"] = s.label ? json(*s.label) : json(nullptr);
    sentences.push_back(node);
  }
  json node;
  node["id"] = pair.id;
  node["sentences"] = sentences;
  node["candidates"] = json::array({pair.candidates[0], pair.candidates[1]});
  return node;
}

}  // namespace

Corpus parse_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  Corpus corpus;
  corpus.name = std::filesystem::path(path).filename().string();
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      corpus.pairs.push_back(parse_pair(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + ", line " +
                               std::to_string(line_no));
    }
  }
  corpus.labeled = all_labeled(corpus);
  return corpus;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  Corpus corpus;
  corpus.name = std::filesystem::path(path).filename().string();
  std::unordered_set<std::string> seen_ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    TwinPair pair;
    try {
      pair = parse_pair(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + ", line " +
                               std::to_string(line_no));
    }
    const auto violations = pair_violations(pair);
    if (!violations.empty())
      throw std::runtime_error(violations.front() + ", line " +
                               std::to_string(line_no));
    if (!seen_ids.insert(pair.id).second)
      throw std::runtime_error("duplicate id \"" + pair.id + "\", line " +
                               std::to_string(line_no));
    corpus.pairs.push_back(std::move(pair));
  }
  corpus.labeled = all_labeled(corpus);
  return corpus;
}

ValidationReport validate(const Corpus& corpus) {
  ValidationReport report;
  report.n_pairs = corpus.pairs.size();
  size_t labeled_sentences = 0;
  std::unordered_set<std::string> seen_ids;
  for (const auto& pair : corpus.pairs) {
    for (const auto& reason : pair_violations(pair))
      report.violations.push_back({pair.id, reason});
    if (!seen_ids.insert(pair.id).second)
      report.violations.push_back({pair.id, "duplicate id"});
    for (const auto& s : pair.sentences)
      if (s.label) ++labeled_sentences;
  }
  report.labeled_fraction =
      corpus.pairs.empty()
          ? 0.0
          : static_cast<double>(labeled_sentences) / (2.0 * corpus.pairs.size());
  return report;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& pair : corpus.pairs) {
    out += pair_to_json(pair).dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  out << corpus_to_jsonl(corpus);
}

namespace {

// A template family pairs two opposed attributes with a frame sentence. The
// causal clause restates the referent with its attribute next to the
// placeholder ("... because the heavy anvil , the _ , was to blame ."), so
// the trigger words deterministically mark which noun the slot stands for.
// Candidates are the bare nouns: both fills compete at a single mask position.
struct TemplateFamily {
  const char* attr_pos;
  const char* attr_neg;
  // "%X" subject phrase, "%Y" object phrase, "%T %G" trigger + referent
  const char* frame;
  std::vector<const char*> nouns_x;
  std::vector<const char*> nouns_y;
};

const std::vector<TemplateFamily>& template_families() {
  static const std::vector<TemplateFamily> families = {
      {"big", "small",
       "the %X does not fit in the %Y because the %T %G , the _ , is the problem .",
       {"ball", "piano", "lamp"},
       {"box", "crate", "drawer"}},
      {"heavy", "light",
       "the %X crushed the %Y because the %T %G , the _ , was to blame .",
       {"anvil", "boulder", "engine"},
       {"feather", "napkin", "leaf"}},
      {"fast", "slow",
       "the %X overtook the %Y because the %T %G , the _ , set the pace .",
       {"falcon", "rocket", "jet"},
       {"snail", "cart", "mule"}},
      {"hot", "cold",
       "the %X melted the %Y because the %T %G , the _ , made the difference .",
       {"sun", "flame", "torch"},
       {"glacier", "frost", "hail"}},
      {"tall", "short",
       "the %X towered over the %Y because the %T %G , the _ , stood out .",
       {"giraffe", "tower", "crane"},
       {"stool", "hedge", "fence"}},
      {"loud", "quiet",
       "the %X drowned out the %Y because the %T %G , the _ , was hard to miss .",
       {"siren", "horn", "alarm"},
       {"whisper", "violin", "flute"}},
  };
  return families;
}

std::string expand(const std::string& frame, const std::string& x,
                   const std::string& y, const std::string& t,
                   const std::string& g) {
  std::string out = frame;
  auto replace = [&out](const std::string& slot, const std::string& value) {
    for (auto pos = out.find(slot); pos != std::string::npos;
         pos = out.find(slot, pos + value.size()))
      out.replace(pos, slot.size(), value);
  };
  replace("%X", x);
  replace("%Y", y);
  replace("%T", t);
  replace("%G", g);
  return out;
}

}  // namespace

int synth_template_count() {
  return static_cast<int>(template_families().size());
}

Corpus synth_generate(uint64_t seed, int n_pairs, int n_templates) {
  if (n_pairs < 1) throw std::invalid_argument("n_pairs must be >= 1");
  if (n_templates < 1) throw std::invalid_argument("n_templates must be >= 1");
  const auto& families = template_families();
  const int active =
      std::min<int>(n_templates, static_cast<int>(families.size()));

  Rng rng(seed);
  Corpus corpus;
  corpus.name = "synthetic-seed" + std::to_string(seed);
  corpus.labeled = true;
  corpus.pairs.reserve(n_pairs);

  for (int i = 0; i < n_pairs; ++i) {
    const auto& family = families[rng.next_below(active)];
    const auto& noun_x = family.nouns_x[rng.next_below(family.nouns_x.size())];
    const auto& noun_y = family.nouns_y[rng.next_below(family.nouns_y.size())];
    const bool pos_first = rng.next_below(2) == 0;      // trigger of sentence 0
    const bool swap_candidates = rng.next_below(2) == 1;

    // Both nouns are introduced with their attributes; the causal clause
    // then restates the referent's attributed phrase beside the placeholder.
    const std::string inner_x = std::string(family.attr_pos) + " " + noun_x;
    const std::string inner_y = std::string(family.attr_neg) + " " + noun_y;

    TwinPair pair;
    pair.id = "synth-" + std::to_string(seed) + "-" + std::to_string(i + 1);
    pair.candidates[0] = swap_candidates ? noun_y : noun_x;
    pair.candidates[1] = swap_candidates ? noun_x : noun_y;

    for (int j = 0; j < 2; ++j) {
      const bool trigger_pos = (j == 0) ? pos_first : !pos_first;
      const std::string trigger =
          trigger_pos ? family.attr_pos : family.attr_neg;
      const std::string gold = trigger_pos ? noun_x : noun_y;
      pair.sentences[j].text =
          expand(family.frame, inner_x, inner_y, trigger, gold);
      pair.sentences[j].label = (gold == pair.candidates[0]) ? 0 : 1;
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

Corpus strip_labels(const Corpus& corpus) {
  Corpus out = corpus;
  for (auto& pair : out.pairs)
    for (auto& sentence : pair.sentences) sentence.label.reset();
  out.labeled = false;
  return out;
}

}  // namespace css
