#include "fslt/data.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace fslt {

LabeledSet LabeledSet::gather(std::span<const std::uint32_t> indices) const {
  if (indices.empty()) throw ShapeError("cannot gather an empty set of rows");
  const std::size_t row = row_size();
  Shape shape = inputs.shape;
  shape[0] = indices.size();
  LabeledSet out;
  out.inputs = Tensor(shape);
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw std::out_of_range("row " + std::to_string(src) + " out of range");
    std::copy_n(inputs.data.begin() + static_cast<std::ptrdiff_t>(src * row), row,
                out.inputs.data.begin() + static_cast<std::ptrdiff_t>(i * row));
    out.labels.push_back(labels[src]);
  }
  return out;
}

LabeledSet LabeledSet::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > size()) throw std::out_of_range("invalid slice");
  std::vector<std::uint32_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::uint32_t>(begin + i);
  return gather(idx);
}

}  // namespace fslt
