#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfkd/tensor.hpp"

namespace dfkd::data {

// Malformed or missing input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor x;                 // [N, prod(sample_shape)]
  std::vector<int> labels;  // N class ids in [0, classes)
  Shape sample_shape;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct Split {
  Dataset train;
  Dataset test;
};

struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t per_class = 250;
  double spread = 0.1;  // per-coordinate standard deviation
  double radius = 1.0;  // class means sit on this circle
  std::uint64_t seed = 7;
};

// 2-D Gaussian mixture with class means equally spaced on a circle. Each
// class is split 80/20 into train/test; both splits are shuffled.
Split make_synthetic_dataset(const SyntheticSpec& spec);

// IDX pair (0x00000803 images, 0x00000801 labels); pixels map to [-1, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
// Directory with the four conventional MNIST-style file names.
Split load_idx_dataset(const std::filesystem::path& dir);
void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& label_bytes,
               std::uint32_t count, std::uint32_t rows, std::uint32_t cols);

// Vector datasets as CSV lines "x0,...,x{D-1},label" with a header row.
void write_csv(const std::filesystem::path& path, const Dataset& d);
Dataset read_csv(const std::filesystem::path& path, std::size_t classes);

// Rows [begin, end) as a new dataset.
Dataset slice(const Dataset& d, std::size_t begin, std::size_t end);

}  // namespace dfkd::data
