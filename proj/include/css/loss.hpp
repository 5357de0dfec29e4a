#pragma once

#include <array>
#include <string>

#include "css/scoring_types.hpp"

namespace css {

enum class CmVariant {
  kVerbatim,  // -alpha * sum_i max(0, |p[i][0]-p[i][1]| + beta)
  kHinge,     // +alpha * sum_i max(0, beta - |p[i][0]-p[i][1]|)
};

CmVariant cm_variant_from_string(const std::string& name);
std::string to_string(CmVariant variant);

struct LossHyper {
  double gamma = 60.0;
  double alpha = 0.05;
  double beta = 0.02;
  bool cm_enabled = true;
  CmVariant cm_variant = CmVariant::kVerbatim;
};

using Grad2x2 = std::array<std::array<double, 2>, 2>;

struct LossTerm {
  double value = 0.0;
  Grad2x2 grad{};
};

struct LossValue {
  double total = 0.0;
  double mex = 0.0;
  double cm = 0.0;
  Grad2x2 grad{};
};

// The boolean consistency condition on one twin pair: each sentence accepts
// exactly one candidate and candidate 0 flips between sentences. True for
// exactly two of the sixteen corners.
bool eval_logical(const std::array<std::array<bool, 2>, 2>& c);

// Soft relaxation of XOR: a(1-b) + b(1-a).
double soft_xor(double a, double b);

// With A = p00*p11 and B = p01*p10: value = -gamma * soft_xor(A, B), plus
// its exact derivative w.r.t. each p entry.
LossTerm mex_loss(const PairProb& p, double gamma);

// Margin between a candidate's probabilities across the two sentences,
// summed over both candidates. Subgradient 0 at |delta| = 0 and at hinge
// kinks.
LossTerm cm_loss(const PairProb& p, double alpha, double beta,
                 CmVariant variant);

LossValue total_loss(const PairProb& p, const LossHyper& hyper);

}  // namespace css
