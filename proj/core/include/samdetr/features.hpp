#pragma once

#include <cstddef>
#include <vector>

#include "samdetr/geometry.hpp"
#include "samdetr/tensor.hpp"

namespace samdetr {

/// Encoder output restored to its spatial layout.
struct EncodedFeatures {
  Tensor features;  // [H x W x d]
  Tensor pos2d;     // [H x W x d], sinusoidal, constant

  std::size_t height() const { return features.dim(0); }
  std::size_t width() const { return features.dim(1); }
  std::size_t channels() const { return features.dim(2); }
};

/// Object queries entering a decoder layer.
struct QuerySet {
  Tensor q;           // [N x d]
  Tensor q_pos;       // [N x d]
  Tensor box_logits;  // [N x 4] unconstrained; reference boxes are sigmoid(box_logits)
  std::vector<Box> boxes;

  std::size_t size() const { return q.dim(0); }
};

/// Reference boxes as plain values from [N x 4] cxcywh logits.
std::vector<Box> boxes_from_logits(const Tensor& box_logits);

}  // namespace samdetr
