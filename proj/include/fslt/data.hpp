#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fslt/tensor.hpp"

namespace fslt {

/// Inputs (N, ...) with one class label per row.
struct LabeledSet {
  Tensor inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t row_size() const { return labels.empty() ? 0 : inputs.numel() / labels.size(); }

  /// Rows at `indices`, in that order.
  LabeledSet gather(std::span<const std::uint32_t> indices) const;
  /// Rows [begin, end).
  LabeledSet slice(std::size_t begin, std::size_t end) const;
};

}  // namespace fslt
