#pragma once

#include <algorithm>
#include <cmath>

#include "vtrace/volume.hpp"

namespace vtrace {

struct LossTerms {
  double dice = 0.0;
  double bce = 0.0;
  double combined_printed = 0.0;    ///< 1 - dice - bce
  double combined_corrected = 0.0;  ///< 1 - dice + bce, the quantity a trainer minimizes
};

/// Soft Dice (sum p*t over sum p + sum t, 1 when both are empty) and mean
/// binary cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7].
inline LossTerms evaluate_loss(const Volume3D& pred, const Volume3D& truth) {
  if (pred.dims() != truth.dims()) throw Error(ErrorCode::grid_mismatch, "dims mismatch");
  if (pred.empty()) throw Error(ErrorCode::invalid_argument, "empty volume");
  constexpr double eps = 1e-7;
  double inter = 0.0, sum_p = 0.0, sum_t = 0.0, ce = 0.0;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    const double p = pred[n];
    const double t = truth[n];
    inter += p * t;
    sum_p += p;
    sum_t += t;
    const double pc = std::clamp(p, eps, 1.0 - eps);
    ce += t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
  }
  LossTerms out;
  out.dice = (sum_p + sum_t) > 0.0 ? 2.0 * inter / (sum_p + sum_t) : 1.0;
  out.bce = -ce / static_cast<double>(pred.size());
  out.combined_printed = 1.0 - out.dice - out.bce;
  out.combined_corrected = 1.0 - out.dice + out.bce;
  return out;
}

}  // namespace vtrace
