#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vmoe/numkit/tensor.hpp"

namespace vmoe::model {

using numkit::Tensor;

// Images stored flat as [count, H * W * ch], pixels in (row, col, channel) order.
struct Dataset {
  std::size_t image_size = 0;
  std::size_t channels = 1;
  std::size_t classes = 0;
  Tensor images;
  std::vector<int> labels;
  // Grid position of each image's first key patch; -1 when unknown.
  std::vector<int> key_positions;

  std::size_t size() const { return labels.size(); }
  Tensor image(std::size_t i) const;  // [H, W, ch]
  Dataset subset(std::span<const std::size_t> indices) const;
};

// Each class owns a prototype patch. An image is background noise with the
// prototype of its class stamped at `keys` random grid cells, plus one
// weaker prototype of another class as a distractor. With random_sign each
// stamp is multiplied by an independent +-1, so a purely linear read-out of
// the pixels cannot detect the class.
struct SyntheticSpec {
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t classes = 8;
  std::size_t keys = 2;
  double signal = 1.0;
  double distractor = 0.5;
  double noise = 0.7;
  bool random_sign = true;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Dataset train;
  Dataset test;
};

Dataset make_synthetic(const SyntheticSpec& spec, std::size_t count, std::uint64_t split);
SyntheticData make_synthetic_split(const SyntheticSpec& spec, std::size_t train_count, std::size_t test_count);

// [H, W, ch] -> [P, patch * patch * ch], grid cells in row-major order.
Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& patches, std::size_t image_size, std::size_t channels, std::size_t patch);

// Patches of the selected images stacked as [n * P, patch_dim].
Tensor patchify_batch(const Dataset& data, std::span<const std::size_t> indices, std::size_t patch);

// n images per class drawn deterministically (first n of each class in index order).
std::vector<std::size_t> per_class_indices(const Dataset& data, std::size_t n);

}  // namespace vmoe::model
