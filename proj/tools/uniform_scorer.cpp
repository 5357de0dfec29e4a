// Stub peer for the external-scorer protocol: answers every request with
// uniform log(1/V) vectors. Failure-injection flags let tests poke the
// client's error handling. With --reorder each response waits for the next
// request, so drive it with batches of at least two.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

using nlohmann::json;

namespace {

struct Options {
  int vocab_size = 0;
  int delay_ms = 0;
  bool reorder = false;
  int malform_after = -1;
  int wrong_id_after = -1;
  int dup_after = -1;
};

int g_emitted = 0;

void emit(const Options& opt, uint64_t id, size_t n_masks) {
  if (opt.delay_ms > 0)
    std::this_thread::sleep_for(std::chrono::milliseconds(opt.delay_ms));
  if (opt.malform_after >= 0 && g_emitted == opt.malform_after) {
    std::cout << "this is not json\n" << std::flush;
    ++g_emitted;
    return;
  }
  if (opt.wrong_id_after >= 0 && g_emitted == opt.wrong_id_after)
    id += 1000000;

  const double lp = -std::log(static_cast<double>(opt.vocab_size));
  json row = json::array();
  for (int c = 0; c < opt.vocab_size; ++c) row.push_back(lp);
  json rows = json::array();
  for (size_t m = 0; m < n_masks; ++m) rows.push_back(row);
  const json response = {{"id", id}, {"log_probs", rows}};
  std::cout << response.dump() << "\n";
  if (opt.dup_after >= 0 && g_emitted == opt.dup_after)
    std::cout << response.dump() << "\n";
  std::cout << std::flush;
  ++g_emitted;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Uniform-distribution stub for the NDJSON scorer protocol"};
  app.add_option("--vocab-size", opt.vocab_size, "log-prob vector length")
      ->required()
      ->check(CLI::PositiveNumber);
  app.add_option("--delay-ms", opt.delay_ms, "sleep before each response");
  app.add_flag("--reorder", opt.reorder,
               "hold each response until the next request arrives");
  app.add_option("--malform-after", opt.malform_after,
                 "emit a non-JSON line in place of response N (0-based)");
  app.add_option("--wrong-id-after", opt.wrong_id_after,
                 "answer response N with a shifted id");
  app.add_option("--dup-after", opt.dup_after, "emit response N twice");
  CLI11_PARSE(app, argc, argv);

  std::optional<std::pair<uint64_t, size_t>> held;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    json request;
    try {
      request = json::parse(line);
    } catch (const std::exception& e) {
      std::cerr << "stub: bad request line: " << e.what() << "\n";
      return 1;
    }
    const uint64_t id = request.at("id").get<uint64_t>();
    const size_t n_masks = request.at("mask_positions").size();
    if (opt.reorder) {
      if (held) {
        emit(opt, id, n_masks);
        emit(opt, held->first, held->second);
        held.reset();
      } else {
        held = {id, n_masks};
      }
    } else {
      emit(opt, id, n_masks);
    }
  }
  if (held) emit(opt, held->first, held->second);
  return 0;
}
