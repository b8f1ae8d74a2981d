#include "qadv/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "qadv/error.hpp"
#include "qadv/io.hpp"
#include "qadv/random.hpp"

namespace qadv {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Calibration: return "calibration";
  }
  return "?";
}

void Dataset::validate() const {
  if (images.size() != labels.size()) {
    throw InvalidArgument("dataset: " + std::to_string(images.size()) + " images but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= classes) {
      throw InvalidArgument("dataset: label " + std::to_string(labels[i]) + " of sample " +
                            std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
    for (float v : images[i].data()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw InvalidArgument("dataset: pixel outside [0,1] in sample " + std::to_string(i));
      }
    }
  }
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin > size()) throw InvalidArgument("dataset: slice start past end");
  const std::size_t end = std::min(size(), begin + count);
  Dataset d;
  d.classes = classes;
  d.split = split;
  d.images.assign(images.begin() + std::ptrdiff_t(begin), images.begin() + std::ptrdiff_t(end));
  d.labels.assign(labels.begin() + std::ptrdiff_t(begin), labels.begin() + std::ptrdiff_t(end));
  return d;
}

namespace {

// Membership test for template `cls` at (y, x) relative to a box of side s.
bool in_template(std::size_t cls, int y, int x, int s) {
  if (y < 0 || x < 0 || y >= s || x >= s) return false;
  const int t = 3;  // stroke thickness
  const int mid = s / 2;
  const bool hband = y >= mid - t / 2 && y < mid - t / 2 + t;
  const bool vband = x >= mid - t / 2 && x < mid - t / 2 + t;
  switch (cls % 10) {
    case 0: return true;
    case 1: return y < 2 || x < 2 || y >= s - 2 || x >= s - 2;
    case 2: return hband;
    case 3: return vband;
    case 4: return hband || vband;
    case 5: {
      const double c = (s - 1) / 2.0, r = s / 2.0;
      return (y - c) * (y - c) + (x - c) * (x - c) <= r * r;
    }
    case 6: return std::abs(y - x) <= 1;
    case 7: return x < t || y >= s - t;
    case 8: return y < t || vband;
    case 9: return x >= (s - 1 - y) / 2 && x <= s - 1 - (s - 1 - y) / 2;
  }
  return false;
}

float on_lattice(double v) { return float(std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

}  // namespace

Dataset make_shapes_dataset(std::size_t n, std::size_t classes, std::uint64_t seed, Split split,
                            std::size_t side, std::size_t channels) {
  if (classes < 2 || classes > 10) throw InvalidArgument("shapes dataset supports 2..10 classes");
  if (side < 12) throw InvalidArgument("shapes dataset needs side >= 12");
  if (channels != 1 && channels != 3) throw InvalidArgument("shapes dataset channels must be 1 or 3");
  // Two-class sets use the most dissimilar pair of templates.
  static const std::size_t binary_templates[2] = {0, 4};
  Rng rng(mix_seed(seed, 0x5eed));
  Dataset d;
  d.classes = classes;
  d.split = split;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = int(i % classes);
  rng.shuffle(labels.begin(), labels.end());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = std::size_t(labels[i]);
    const std::size_t tmpl = classes == 2 ? binary_templates[cls] : cls;
    const int s = int(side * 7 / 16) + int(rng.index(side * 4 / 16 + 1));
    const int oy = int(rng.index(side - std::size_t(s) + 1));
    const int ox = int(rng.index(side - std::size_t(s) + 1));
    double bg[3], fg[3];
    for (std::size_t c = 0; c < channels; ++c) {
      bg[c] = rng.uniform(0.0, 0.35);
      fg[c] = rng.uniform(0.6, 1.0);
    }
    Tensor img({channels, side, side});
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const bool on = in_template(tmpl, int(y) - oy, int(x) - ox, s);
        for (std::size_t c = 0; c < channels; ++c) {
          img.at(c, y, x) = on_lattice((on ? fg[c] : bg[c]) + 0.02 * rng.normal());
        }
      }
    d.images.push_back(std::move(img));
  }
  d.labels = std::move(labels);
  return d;
}

Dataset load_cifar10_binary(const std::filesystem::path& path, std::size_t max_records,
                            Split split) {
  constexpr std::size_t kRecord = 1 + 3072;
  const auto bytes = read_file(path);
  if (bytes.size() % kRecord != 0) {
    throw FormatError("cifar-10: file size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(kRecord) + " (truncated record at byte offset " +
                      std::to_string(bytes.size() - bytes.size() % kRecord) + ")");
  }
  std::size_t n = bytes.size() / kRecord;
  if (max_records) n = std::min(n, max_records);
  Dataset d;
  d.classes = 10;
  d.split = split;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kRecord;
    if (rec[0] > 9) {
      throw FormatError("cifar-10: label " + std::to_string(rec[0]) + " at byte offset " +
                        std::to_string(r * kRecord));
    }
    Tensor img({3, 32, 32});
    for (std::size_t i = 0; i < 3072; ++i) img[i] = float(rec[1 + i]) / 255.0f;
    d.images.push_back(std::move(img));
    d.labels.push_back(rec[0]);
  }
  return d;
}

void save_dataset_raw(const Dataset& d, const std::filesystem::path& images,
                      const std::filesystem::path& labels) {
  if (d.empty()) throw InvalidArgument("dataset: cannot save an empty dataset");
  Shape s{d.size()};
  for (auto v : d.images[0].shape()) s.push_back(v);
  std::vector<float> data;
  data.reserve(shape_size(s));
  for (const auto& img : d.images) data.insert(data.end(), img.data().begin(), img.data().end());
  save_raw_tensor(images, Tensor(s, std::move(data)));
  std::vector<float> l(d.labels.begin(), d.labels.end());
  save_raw_tensor(labels, Tensor({d.size()}, std::move(l)));
}

Dataset load_dataset_raw(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t classes, Split split) {
  const Tensor all = load_raw_tensor(images);
  const Tensor lab = load_raw_tensor(labels);
  if (all.rank() < 2 || lab.rank() != 1 || lab.size() != all.dim(0)) {
    throw FormatError("raw dataset: image stack " + shape_string(all.shape()) +
                      " does not match labels " + shape_string(lab.shape()));
  }
  Shape item(all.shape().begin() + 1, all.shape().end());
  const std::size_t per = shape_size(item);
  Dataset d;
  d.classes = classes;
  d.split = split;
  for (std::size_t i = 0; i < all.dim(0); ++i) {
    std::vector<float> v(all.data().begin() + std::ptrdiff_t(i * per),
                         all.data().begin() + std::ptrdiff_t((i + 1) * per));
    d.images.emplace_back(item, std::move(v));
    d.labels.push_back(int(lab[i]));
  }
  d.validate();
  return d;
}

double evaluate_accuracy(const std::function<int(const Tensor&)>& classify, const Dataset& d) {
  if (d.empty()) throw InvalidArgument("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) correct += classify(d.images[i]) == d.labels[i];
  return double(correct) / double(d.size());
}

}  // namespace qadv
