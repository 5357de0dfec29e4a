#include "css/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace css {

CmVariant cm_variant_from_string(const std::string& name) {
  if (name == "verbatim") return CmVariant::kVerbatim;
  if (name == "hinge") return CmVariant::kHinge;
  throw std::runtime_error("unknown cm variant \"" + name +
                           "\" (expected verbatim or hinge)");
}

std::string to_string(CmVariant variant) {
  return variant == CmVariant::kVerbatim ? "verbatim" : "hinge";
}

bool eval_logical(const std::array<std::array<bool, 2>, 2>& c) {
  const bool sentence0 = c[0][0] != c[1][0];
  const bool sentence1 = c[0][1] != c[1][1];
  const bool flips = c[0][0] != c[0][1];
  return sentence0 && sentence1 && flips;
}

double soft_xor(double a, double b) { return a * (1.0 - b) + b * (1.0 - a); }

LossTerm mex_loss(const PairProb& p, double gamma) {
  const double a = p.p[0][0] * p.p[1][1];
  const double b = p.p[0][1] * p.p[1][0];
  LossTerm term;
  term.value = -gamma * soft_xor(a, b);
  const double da = -gamma * (1.0 - 2.0 * b);
  const double db = -gamma * (1.0 - 2.0 * a);
  term.grad[0][0] = da * p.p[1][1];
  term.grad[1][1] = da * p.p[0][0];
  term.grad[0][1] = db * p.p[1][0];
  term.grad[1][0] = db * p.p[0][1];
  return term;
}

LossTerm cm_loss(const PairProb& p, double alpha, double beta,
                 CmVariant variant) {
  LossTerm term;
  for (int i = 0; i < 2; ++i) {
    const double delta = p.p[i][0] - p.p[i][1];
    const double mag = std::abs(delta);
    const double sign = delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0);
    if (variant == CmVariant::kVerbatim) {
      const double inner = mag + beta;
      if (inner > 0.0) {
        term.value += -alpha * inner;
        term.grad[i][0] += -alpha * sign;
        term.grad[i][1] += alpha * sign;
      }
    } else {
      const double inner = beta - mag;
      if (inner > 0.0) {
        term.value += alpha * inner;
        term.grad[i][0] += -alpha * sign;
        term.grad[i][1] += alpha * sign;
      }
    }
  }
  return term;
}

LossValue total_loss(const PairProb& p, const LossHyper& hyper) {
  const LossTerm mex = mex_loss(p, hyper.gamma);
  LossValue out;
  out.mex = mex.value;
  out.grad = mex.grad;
  if (hyper.cm_enabled) {
    const LossTerm cm =
        cm_loss(p, hyper.alpha, hyper.beta, hyper.cm_variant);
    out.cm = cm.value;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) out.grad[i][j] += cm.grad[i][j];
  }
  out.total = out.mex + out.cm;
  return out;
}

}  // namespace css
