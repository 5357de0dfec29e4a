#pragma once

#include <cstdint>
#include <string>

#include "css/loss.hpp"
#include "css/mlm.hpp"

namespace css {

struct GradCheckReport {
  int n_checked = 0;
  int n_passed = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  // Worst offending coordinate, for diagnostics.
  std::string worst_coord;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool ok(double min_pass_fraction = 1.0) const {
    return n_checked > 0 &&
           n_passed >= static_cast<int>(min_pass_fraction * n_checked + 0.5);
  }
};

// Central differences on total_loss over random interior PairProb points,
// steering clear of the |Δ| kinks where the subgradient convention applies.
GradCheckReport grad_check_loss(const LossHyper& hyper, uint64_t seed,
                                int trials = 100, double h = 1e-6,
                                double tol = 1e-5);

// End-to-end check (loss → scorer → model parameters) on a fixed synthetic
// two-pair batch: perturbs sampled parameter coordinates and compares the
// batch-loss finite difference against the analytic gradient.
GradCheckReport grad_check_model(const ModelConfig& config,
                                 const LossHyper& hyper, uint64_t seed,
                                 int n_coords = 500, double h = 1e-3,
                                 double tol = 1e-3);

}  // namespace css
