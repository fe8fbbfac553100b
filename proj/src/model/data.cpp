#include "vmoe/model/data.hpp"

#include <cmath>
#include <stdexcept>

#include "vmoe/numkit/rng.hpp"

namespace vmoe::model {

Tensor Dataset::image(std::size_t i) const {
  const std::size_t n = image_size * image_size * channels;
  const auto row = images.row(i);
  return Tensor({image_size, image_size, channels}, std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(n)));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.image_size = image_size;
  out.channels = channels;
  out.classes = classes;
  const std::size_t n = images.cols();
  out.images = Tensor({indices.size(), n});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = images.row(indices[r]);
    std::copy(src.begin(), src.end(), out.images.row(r).begin());
    out.labels.push_back(labels[indices[r]]);
    out.key_positions.push_back(key_positions.empty() ? -1 : key_positions[indices[r]]);
  }
  return out;
}

namespace {

void check_patch(std::size_t image_size, std::size_t patch) {
  if (patch == 0 || image_size % patch != 0) {
    throw numkit::ShapeError("image size " + std::to_string(image_size) + " is not divisible by patch " +
                             std::to_string(patch));
  }
}

// Adds `scale * values` to grid cell `cell` of a flat image.
void stamp(std::span<double> image, std::size_t image_size, std::size_t channels, std::size_t patch, std::size_t cell,
           std::span<const double> values, double scale) {
  const std::size_t grid = image_size / patch;
  const std::size_t gy = cell / grid, gx = cell % grid;
  std::size_t v = 0;
  for (std::size_t py = 0; py < patch; ++py)
    for (std::size_t px = 0; px < patch; ++px)
      for (std::size_t c = 0; c < channels; ++c)
        image[((gy * patch + py) * image_size + gx * patch + px) * channels + c] += scale * values[v++];
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec, std::size_t count, std::uint64_t split) {
  check_patch(spec.image_size, spec.patch);
  const std::size_t grid = spec.image_size / spec.patch;
  const std::size_t cells = grid * grid;
  if (spec.classes < 2) throw std::invalid_argument("synthetic data needs at least two classes");
  if (spec.keys == 0 || spec.keys + 1 > cells) throw std::invalid_argument("synthetic data: bad key count");
  const std::size_t pd = spec.patch * spec.patch * spec.channels;

  numkit::RngStream root(spec.seed);
  numkit::RngStream proto_rng = root.fork(1);
  Tensor protos = numkit::sample_gaussian(proto_rng, {spec.classes, pd}, 0.0, 1.0);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    double ss = 0.0;
    for (double v : protos.row(c)) ss += v * v;
    const double norm = std::sqrt(ss / static_cast<double>(pd));
    for (double& v : protos.row(c)) v /= norm;
  }

  Dataset d;
  d.image_size = spec.image_size;
  d.channels = spec.channels;
  d.classes = spec.classes;
  const std::size_t pixels = spec.image_size * spec.image_size * spec.channels;
  numkit::RngStream rng = root.fork(2 + split);
  d.images = numkit::sample_gaussian(rng, {count, pixels}, 0.0, spec.noise);
  std::vector<std::size_t> cell_order(cells);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<std::size_t>(i % spec.classes);
    // Partial Fisher-Yates: the first keys + 1 cells are distinct.
    for (std::size_t c = 0; c < cells; ++c) cell_order[c] = c;
    for (std::size_t c = 0; c < spec.keys + 1; ++c) std::swap(cell_order[c], cell_order[c + rng.below(cells - c)]);
    auto img = d.images.row(i);
    auto sign = [&] { return spec.random_sign && rng.below(2) == 0 ? -1.0 : 1.0; };
    for (std::size_t key = 0; key < spec.keys; ++key)
      stamp(img, spec.image_size, spec.channels, spec.patch, cell_order[key], protos.row(label), sign() * spec.signal);
    if (spec.distractor > 0.0) {
      const std::size_t other = (label + 1 + rng.below(spec.classes - 1)) % spec.classes;
      stamp(img, spec.image_size, spec.channels, spec.patch, cell_order[spec.keys], protos.row(other),
            sign() * spec.distractor);
    }
    d.labels.push_back(static_cast<int>(label));
    d.key_positions.push_back(static_cast<int>(cell_order[0]));
  }
  return d;
}

SyntheticData make_synthetic_split(const SyntheticSpec& spec, std::size_t train_count, std::size_t test_count) {
  return {make_synthetic(spec, train_count, 0), make_synthetic(spec, test_count, 1)};
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.dim(0) != image.dim(1)) {
    throw numkit::ShapeError("patchify expects a square [H, W, ch] image, got " + numkit::shape_string(image.shape()));
  }
  const std::size_t size = image.dim(0), ch = image.dim(2);
  check_patch(size, patch);
  const std::size_t grid = size / patch;
  Tensor out({grid * grid, patch * patch * ch});
  for (std::size_t cell = 0; cell < grid * grid; ++cell) {
    const std::size_t gy = cell / grid, gx = cell % grid;
    std::size_t v = 0;
    for (std::size_t py = 0; py < patch; ++py)
      for (std::size_t px = 0; px < patch; ++px)
        for (std::size_t c = 0; c < ch; ++c) out(cell, v++) = image[((gy * patch + py) * size + gx * patch + px) * ch + c];
  }
  return out;
}

Tensor unpatchify(const Tensor& patches, std::size_t image_size, std::size_t channels, std::size_t patch) {
  check_patch(image_size, patch);
  const std::size_t grid = image_size / patch;
  if (patches.rank() != 2 || patches.rows() != grid * grid || patches.cols() != patch * patch * channels) {
    throw numkit::ShapeError("unpatchify: patch matrix " + numkit::shape_string(patches.shape()) + " does not fit");
  }
  Tensor img({image_size, image_size, channels});
  for (std::size_t cell = 0; cell < grid * grid; ++cell)
    stamp(img.data(), image_size, channels, patch, cell, patches.row(cell), 1.0);
  return img;
}

Tensor patchify_batch(const Dataset& data, std::span<const std::size_t> indices, std::size_t patch) {
  check_patch(data.image_size, patch);
  const std::size_t grid = data.image_size / patch;
  const std::size_t p = grid * grid, pd = patch * patch * data.channels;
  Tensor out({indices.size() * p, pd});
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Tensor patches = patchify(data.image(indices[n]), patch);
    std::copy(patches.data().begin(), patches.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(n * p * pd));
  }
  return out;
}

std::vector<std::size_t> per_class_indices(const Dataset& data, std::size_t n) {
  std::vector<std::size_t> taken(data.classes, 0);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& t = taken[static_cast<std::size_t>(data.labels[i])];
    if (t < n) {
      ++t;
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace vmoe::model
