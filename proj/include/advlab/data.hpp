#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Labelled images. Pixels live in [0,1] and are stored in single precision;
/// trainers cast batches to their own scalar type.
struct Dataset {
  Tensor<float> images;  // [N,C,H,W]
  std::vector<int> labels;
  std::size_t num_classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  Shape image_shape() const;

  /// Throws ContractError when any invariant (label count, pixel range,
  /// label range) is violated.
  void validate() const;
};

inline constexpr std::size_t kCifarImageBytes = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordBytes = kCifarImageBytes + 1;

/// Reads CIFAR-10 binary batch files (label byte + 3072 channel-major pixel
/// bytes per record), concatenated in the given order.
Dataset load_cifar10_bin(std::span<const std::filesystem::path> paths);
Dataset load_cifar10_bin(const std::filesystem::path& path);

/// Inverse of load_cifar10_bin. Pixels are quantised with round(255 v), so a
/// loaded file is reproduced byte for byte.
void write_cifar10_bin(const Dataset& data, const std::filesystem::path& path);

/// The conventional file set under a CIFAR-10 binary directory.
std::vector<std::filesystem::path> cifar10_train_files(const std::filesystem::path& dir);
std::filesystem::path cifar10_test_file(const std::filesystem::path& dir);

/// Rows `indices` of the dataset, in that order.
Dataset take(const Dataset& data, std::span<const std::size_t> indices);

/// Class-stratified sample of n examples. Per-class quotas use largest
/// remainders; the chosen examples keep their original relative order.
Dataset subset(const Dataset& data, std::size_t n, std::uint64_t seed);

/// Gaussian blobs (unit variance) around class means that are pairwise
/// `margin` apart, mapped affinely into [0,1] as a whole. Labels cycle
/// through the classes, so every class has n / classes examples or one more.
Dataset synth_blobs(std::size_t n, const Shape& image_shape, std::size_t classes, double margin, std::uint64_t seed);

/// Per-class example counts.
std::vector<std::size_t> class_histogram(const Dataset& data);

struct Batch {
  Tensor<float> x;
  std::vector<int> y;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Index lists of one epoch. The shuffle depends only on (seed, epoch) and the
/// short final batch is kept unless drop_last is set.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                    std::uint64_t seed, int epoch, bool drop_last = false);

/// Forward-only stream over one epoch's batches.
class BatchIter {
 public:
  BatchIter(const Dataset& data, std::size_t batch_size, bool shuffle, std::uint64_t seed, int epoch,
            bool drop_last = false);

  std::size_t num_batches() const noexcept { return plan_.size(); }
  const std::vector<std::vector<std::size_t>>& plan() const noexcept { return plan_; }

  /// Fills `out` with the next batch; false once the epoch is exhausted.
  bool next(Batch& out);

 private:
  const Dataset* data_;
  std::vector<std::vector<std::size_t>> plan_;
  std::size_t pos_ = 0;
};

}  // namespace advlab
