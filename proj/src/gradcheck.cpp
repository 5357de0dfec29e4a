#include "css/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "css/corpus.hpp"
#include "css/rng.hpp"
#include "css/scoring_types.hpp"
#include "css/tokenizer.hpp"
#include "css/train.hpp"

namespace css {

namespace {

// Relative error with a floor so exact zeros on both sides count as agreement.
double rel_err(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale <= 1e-12) return 0.0;
  return std::abs(analytic - numeric) / scale;
}

void record(GradCheckReport& report, double analytic, double numeric,
            const std::string& coord, double tol) {
  const double err = rel_err(analytic, numeric);
  ++report.n_checked;
  if (err <= tol) ++report.n_passed;
  if (err > report.max_rel_err) {
    report.max_rel_err = err;
    report.worst_coord = coord;
    report.worst_analytic = analytic;
    report.worst_numeric = numeric;
  }
}

}  // namespace

GradCheckReport grad_check_loss(const LossHyper& hyper, uint64_t seed,
                                int trials, double h, double tol) {
  if (trials < 1) throw std::runtime_error("trials must be >= 1");
  GradCheckReport report;
  report.tolerance = tol;
  Rng rng(seed);

  for (int trial = 0; trial < trials; ++trial) {
    PairProb p;
    for (;;) {
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          p.p[i][j] = 0.05 + 0.9 * rng.next_double();
      bool near_kink = false;
      for (int i = 0; i < 2; ++i) {
        const double d = std::abs(p.p[i][0] - p.p[i][1]);
        if (d < 1e-3) near_kink = true;
        if (hyper.cm_variant == CmVariant::kHinge &&
            std::abs(d - hyper.beta) < 1e-3)
          near_kink = true;
      }
      if (!near_kink) break;
    }

    const LossValue at = total_loss(p, hyper);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        PairProb plus = p, minus = p;
        plus.p[i][j] += h;
        minus.p[i][j] -= h;
        const double numeric =
            (total_loss(plus, hyper).total - total_loss(minus, hyper).total) /
            (2.0 * h);
        record(report, at.grad[i][j], numeric,
               "p[" + std::to_string(i) + "][" + std::to_string(j) +
                   "] trial " + std::to_string(trial),
               tol);
      }
  }
  return report;
}

GradCheckReport grad_check_model(const ModelConfig& config,
                                 const LossHyper& hyper, uint64_t seed,
                                 int n_coords, double h, double tol) {
  if (n_coords < 1) throw std::runtime_error("n_coords must be >= 1");

  const Corpus corpus = synth_generate(seed, 4);
  const Vocab vocab = build_vocab(corpus);
  ModelConfig cfg = config;
  cfg.vocab_size = vocab.size();
  ModelParams params = init_model(cfg);

  std::vector<const TwinPair*> batch = {&corpus.pairs[0], &corpus.pairs[1]};

  ModelGrads grads = ModelGrads::zeros_like(params);
  batch_loss_and_grads(params, batch, vocab, hyper, &grads);

  struct Slot {
    std::string name;
    MatF* param;
    const MatD* grad;
  };
  std::vector<Slot> slots;
  params.for_each_tensor([&slots](const std::string& name, MatF& t) {
    slots.push_back({name, &t, nullptr});
  });
  size_t k = 0;
  grads.for_each_tensor([&slots, &k](const std::string&, const MatD& t) {
    slots[k++].grad = &t;
  });
  uint64_t total = 0;
  for (const Slot& slot : slots) total += slot.param->size();

  GradCheckReport report;
  report.tolerance = tol;
  Rng rng(seed, 99);
  for (int c = 0; c < n_coords; ++c) {
    uint64_t flat = rng.next_below(total);
    size_t s = 0;
    while (flat >= static_cast<uint64_t>(slots[s].param->size()))
      flat -= slots[s++].param->size();
    MatF& t = *slots[s].param;
    const Eigen::Index row = static_cast<Eigen::Index>(flat) / t.cols();
    const Eigen::Index col = static_cast<Eigen::Index>(flat) % t.cols();

    const float orig = t(row, col);
    const float plus = static_cast<float>(static_cast<double>(orig) + h);
    const float minus = static_cast<float>(static_cast<double>(orig) - h);
    t(row, col) = plus;
    const double lp =
        batch_loss_and_grads(params, batch, vocab, hyper, nullptr).total;
    t(row, col) = minus;
    const double lm =
        batch_loss_and_grads(params, batch, vocab, hyper, nullptr).total;
    t(row, col) = orig;
    // Step sizes as actually representable in the stored precision.
    const double denom =
        static_cast<double>(plus) - static_cast<double>(minus);
    const double numeric = (lp - lm) / denom;
    const double analytic = (*slots[s].grad)(row, col);
    record(report, analytic, numeric,
           slots[s].name + "(" + std::to_string(row) + "," +
               std::to_string(col) + ")",
           tol);
  }
  return report;
}

}  // namespace css
