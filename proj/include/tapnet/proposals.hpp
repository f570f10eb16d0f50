#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tapnet/dataio.hpp"
#include "tapnet/errors.hpp"

namespace tapnet {

using dataio::Point;

/// Predicted head points in input-image pixels with per-point confidence.
struct ProposalSet {
  std::vector<Point> coords;
  std::vector<double> confidence;
  /// Index k of the reference point within its patch.
  std::vector<int> reference_index;

  std::size_t size() const noexcept { return coords.size(); }

  /// Confidences strictly inside (0, 1), finite coordinates, matching lengths.
  void validate() const {
    if (confidence.size() != coords.size() ||
        (!reference_index.empty() && reference_index.size() != coords.size())) {
      throw ShapeError("proposal set field lengths disagree");
    }
    for (std::size_t i = 0; i < coords.size(); ++i) {
      if (!std::isfinite(coords[i].x) || !std::isfinite(coords[i].y)) {
        throw NumericError("coords", "proposal " + std::to_string(i) + " has non-finite coordinates");
      }
      if (!(confidence[i] > 0.0 && confidence[i] < 1.0)) {
        throw NumericError("confidence", "proposal " + std::to_string(i) +
                                             " confidence outside (0, 1)");
      }
    }
  }

  /// Proposals with confidence >= threshold, in original order.
  ProposalSet filtered(double threshold) const {
    ProposalSet out;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      if (confidence[i] >= threshold) {
        out.coords.push_back(coords[i]);
        out.confidence.push_back(confidence[i]);
        if (!reference_index.empty()) out.reference_index.push_back(reference_index[i]);
      }
    }
    return out;
  }
};

}  // namespace tapnet
