#include "advlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "advlab/rng.hpp"

namespace advlab {

Shape Dataset::image_shape() const {
  if (images.rank() != 4) throw ShapeError("dataset: images must be [N,C,H,W], got " + shape_to_string(images.shape()));
  return {images.dim(1), images.dim(2), images.dim(3)};
}

void Dataset::validate() const {
  image_shape();
  if (images.dim(0) != labels.size()) {
    throw ContractError("dataset: " + std::to_string(images.dim(0)) + " images but " +
                        std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) throw ContractError("dataset: num_classes must be positive");
  for (auto v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("dataset: pixel outside [0,1]");
  }
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ContractError("dataset: label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

namespace {

void append_cifar_file(const std::filesystem::path& path, std::vector<float>& pixels, std::vector<int>& labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cifar10: cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("cifar10: " + path.string() + " has " + std::to_string(bytes.size()) +
                      " bytes, not a positive multiple of " + std::to_string(kCifarRecordBytes));
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  pixels.reserve(pixels.size() + records * kCifarImageBytes);
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("cifar10: " + path.string() + " record " + std::to_string(r) + " has label byte " +
                        std::to_string(rec[0]));
    }
    labels.push_back(rec[0]);
    for (std::size_t i = 1; i < kCifarRecordBytes; ++i) pixels.push_back(static_cast<float>(rec[i]) / 255.0f);
  }
}

}  // namespace

Dataset load_cifar10_bin(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw ContractError("cifar10: no files given");
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& p : paths) append_cifar_file(p, pixels, labels);
  Dataset out;
  out.images = Tensor<float>({labels.size(), 3, 32, 32}, std::move(pixels));
  out.labels = std::move(labels);
  out.num_classes = 10;
  return out;
}

Dataset load_cifar10_bin(const std::filesystem::path& path) { return load_cifar10_bin(std::span(&path, 1)); }

void write_cifar10_bin(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  if (data.image_shape() != Shape{3, 32, 32}) {
    throw ShapeError("cifar10: images must be [N,3,32,32], got " + shape_to_string(data.images.shape()));
  }
  if (data.num_classes > 10) throw ContractError("cifar10: at most 10 classes fit the label byte range");
  std::vector<unsigned char> bytes(data.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < data.size(); ++r) {
    unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    rec[0] = static_cast<unsigned char>(data.labels[r]);
    const float* px = data.images.data().data() + r * kCifarImageBytes;
    for (std::size_t i = 0; i < kCifarImageBytes; ++i) {
      rec[i + 1] = static_cast<unsigned char>(std::lround(static_cast<double>(px[i]) * 255.0));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cifar10: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("cifar10: short write to " + path.string());
}

std::vector<std::filesystem::path> cifar10_train_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (int i = 1; i <= 5; ++i) out.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  return out;
}

std::filesystem::path cifar10_test_file(const std::filesystem::path& dir) { return dir / "test_batch.bin"; }

Dataset take(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = data.num_classes;
  out.images = gather_rows(data.images, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(data.labels.at(i));
  return out;
}

std::vector<std::size_t> class_histogram(const Dataset& data) {
  std::vector<std::size_t> hist(data.num_classes, 0);
  for (auto l : data.labels) hist.at(static_cast<std::size_t>(l))++;
  return hist;
}

Dataset subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
  const std::size_t total = data.size();
  if (n > total) {
    throw ContractError("subset: asked for " + std::to_string(n) + " of " + std::to_string(total) + " examples");
  }
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < total; ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);

  // Largest-remainder apportionment of n over the class counts.
  std::vector<std::size_t> quota(data.num_classes);
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (n*count mod total, class)
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < data.num_classes; ++c) {
    const std::size_t scaled = n * by_class[c].size();
    quota[c] = total ? scaled / total : 0;
    assigned += quota[c];
    remainders.emplace_back(total ? scaled % total : 0, c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) quota[remainders[k].second]++;

  Rng rng = make_rng(seed, {0x5ab5e7});
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t c = 0; c < data.num_classes; ++c) {
    auto& pool = by_class[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::sort(chosen.begin(), chosen.end());
  return take(data, chosen);
}

Dataset synth_blobs(std::size_t n, const Shape& image_shape, std::size_t classes, double margin,
                    std::uint64_t seed) {
  if (classes < 2) throw ContractError("synth_blobs: need at least two classes");
  if (image_shape.size() != 3) throw ShapeError("synth_blobs: image shape must be [C,H,W]");
  const std::size_t d = shape_numel(image_shape);
  if (classes > d) throw ContractError("synth_blobs: more classes than dimensions");
  Rng rng = make_rng(seed, {0xb10b5});
  std::normal_distribution<double> normal(0.0, 1.0);

  // Orthonormal class directions (Gram-Schmidt on Gaussian draws), scaled so
  // that every pair of means is exactly `margin` apart.
  std::vector<std::vector<double>> means(classes, std::vector<double>(d));
  for (std::size_t c = 0; c < classes; ++c) {
    auto& v = means[c];
    double norm = 0;
    while (norm < 1e-8) {
      for (auto& e : v) e = normal(rng);
      for (std::size_t p = 0; p < c; ++p) {
        const double proj = std::inner_product(v.begin(), v.end(), means[p].begin(), 0.0);
        for (std::size_t i = 0; i < d; ++i) v[i] -= proj * means[p][i];
      }
      norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    }
    for (auto& e : v) e /= norm;
  }
  const double radius = margin / std::sqrt(2.0);

  std::vector<double> raw(n * d);
  std::vector<int> labels(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = k % classes;
    labels[k] = static_cast<int>(c);
    for (std::size_t i = 0; i < d; ++i) raw[k * d + i] = radius * means[c][i] + normal(rng);
  }
  double lo = 0, hi = 0;
  if (!raw.empty()) {
    const auto [mn, mx] = std::minmax_element(raw.begin(), raw.end());
    lo = *mn;
    hi = *mx;
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<float> pixels(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    pixels[i] = std::clamp(static_cast<float>((raw[i] - lo) / span), 0.0f, 1.0f);
  }
  Dataset out;
  out.images = Tensor<float>({n, image_shape[0], image_shape[1], image_shape[2]}, std::move(pixels));
  out.labels = std::move(labels);
  out.num_classes = classes;
  return out;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch b;
  b.x = gather_rows(data.images, indices);
  b.y.reserve(indices.size());
  for (auto i : indices) b.y.push_back(data.labels.at(i));
  return b;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                    std::uint64_t seed, int epoch, bool drop_last) {
  if (batch_size < 1) throw ContractError("batch_iter: batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng = make_rng(seed, {0xba7c4, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

BatchIter::BatchIter(const Dataset& data, std::size_t batch_size, bool shuffle, std::uint64_t seed, int epoch,
                     bool drop_last)
    : data_(&data), plan_(epoch_batches(data.size(), batch_size, shuffle, seed, epoch, drop_last)) {}

bool BatchIter::next(Batch& out) {
  if (pos_ >= plan_.size()) return false;
  out = make_batch(*data_, plan_[pos_++]);
  return true;
}

}  // namespace advlab
