#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "qadv/tensor.hpp"

namespace qadv {

enum class Split { Train, Test, Calibration };

std::string_view split_name(Split s);

// Labeled images with pixels in [0, 1].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::size_t classes = 0;
  Split split = Split::Train;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }

  // Throws InvalidArgument when a label or pixel is out of range.
  void validate() const;
  Dataset slice(std::size_t begin, std::size_t count) const;
};

// Synthetic shapes: each class is one geometric template (filled square,
// hollow square, bars, cross, disc, diagonal band, L, T, triangle) drawn at a
// random position and size with random foreground/background colours. Labels
// are balanced. Pixels sit on the 1/255 lattice like 8-bit images.
Dataset make_shapes_dataset(std::size_t n, std::size_t classes, std::uint64_t seed,
                            Split split = Split::Train, std::size_t side = 16,
                            std::size_t channels = 3);

// CIFAR-10 binary version: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes of 32x32). Reads at most `max_records` (0 = all).
Dataset load_cifar10_binary(const std::filesystem::path& path, std::size_t max_records = 0,
                            Split split = Split::Test);

// Raw tensor pair: images stacked as [N, ...] and labels as [N].
void save_dataset_raw(const Dataset& d, const std::filesystem::path& images,
                      const std::filesystem::path& labels);
Dataset load_dataset_raw(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t classes, Split split);

// Top-1 accuracy: (#correct)/N for any classifier.
double evaluate_accuracy(const std::function<int(const Tensor&)>& classify, const Dataset& d);

}  // namespace qadv
