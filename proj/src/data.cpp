#include "dfkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace dfkd::data {
namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError(path.string() + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::vector<std::uint8_t> read_payload(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out(n);
  if (!in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n))) {
    throw DataError(path.string() + ": truncated payload, expected " + std::to_string(n) + " bytes");
  }
  return out;
}

void shuffle_rows(std::vector<double>& x, std::vector<int>& y, std::size_t d, std::mt19937_64& rng) {
  for (std::size_t i = y.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    const std::size_t j = pick(rng);
    std::swap(y[i - 1], y[j]);
    std::swap_ranges(x.begin() + static_cast<std::ptrdiff_t>((i - 1) * d),
                     x.begin() + static_cast<std::ptrdiff_t>(i * d), x.begin() + static_cast<std::ptrdiff_t>(j * d));
  }
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (x.rank() != 2 || x.dim(0) != labels.size() || x.dim(1) != shape_numel(sample_shape)) {
    throw DataError("dataset arrays disagree: x " + shape_str(x.shape()) + ", " + std::to_string(labels.size()) +
                    " labels, sample shape " + shape_str(sample_shape));
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw DataError("label " + std::to_string(l) + " outside [0," + std::to_string(classes) + ")");
    }
  }
}

Split make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.per_class < 1) throw std::invalid_argument("synthetic dataset needs classes >= 2, per_class >= 1");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.spread);
  const std::size_t n_train = spec.per_class - spec.per_class / 5;
  std::vector<double> xtr, xte;
  std::vector<int> ytr, yte;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(spec.classes);
    const double mx = spec.radius * std::cos(angle), my = spec.radius * std::sin(angle);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const double px = mx + noise(rng);
      const double py = my + noise(rng);
      auto& xs = i < n_train ? xtr : xte;
      auto& ys = i < n_train ? ytr : yte;
      xs.push_back(px);
      xs.push_back(py);
      ys.push_back(static_cast<int>(c));
    }
  }
  shuffle_rows(xtr, ytr, 2, rng);
  shuffle_rows(xte, yte, 2, rng);
  Split s;
  s.train = {Tensor::from({ytr.size(), 2}, std::move(xtr)), std::move(ytr), {2}, spec.classes};
  s.test = {Tensor::from({yte.size(), 2}, std::move(xte)), std::move(yte), {2}, spec.classes};
  // Fewer than five samples per class leaves no test rows; evaluate on train.
  if (s.test.labels.empty()) s.test = s.train;
  return s;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw DataError(images.string() + ": cannot open");
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw DataError(labels.string() + ": cannot open");

  const std::uint32_t magic_i = read_be32(img, images);
  if (magic_i != 0x00000803) throw DataError(images.string() + ": bad magic, expected 0x00000803");
  const std::uint32_t count = read_be32(img, images);
  const std::uint32_t rows = read_be32(img, images);
  const std::uint32_t cols = read_be32(img, images);
  const std::uint32_t magic_l = read_be32(lab, labels);
  if (magic_l != 0x00000801) throw DataError(labels.string() + ": bad magic, expected 0x00000801");
  const std::uint32_t n_labels = read_be32(lab, labels);
  if (n_labels != count) {
    throw DataError("image/label count mismatch: " + std::to_string(count) + " images, " + std::to_string(n_labels) +
                    " labels");
  }
  if (count == 0 || rows == 0 || cols == 0) throw DataError(images.string() + ": empty image set");

  const std::size_t d = std::size_t{rows} * cols;
  const auto pixels = read_payload(img, std::size_t{count} * d, images);
  const auto label_bytes = read_payload(lab, count, labels);

  std::vector<double> x(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) x[i] = static_cast<double>(pixels[i]) / 127.5 - 1.0;
  Dataset out;
  out.x = Tensor::from({count, d}, std::move(x));
  out.sample_shape = {1, rows, cols};
  int max_label = 0;
  for (auto b : label_bytes) {
    out.labels.push_back(b);
    max_label = std::max(max_label, static_cast<int>(b));
  }
  out.classes = static_cast<std::size_t>(max_label) + 1;
  return out;
}

Split load_idx_dataset(const std::filesystem::path& dir) {
  Split s;
  s.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  s.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  if (s.train.sample_shape != s.test.sample_shape) throw DataError("train/test image sizes differ");
  s.train.classes = s.test.classes = std::max(s.train.classes, s.test.classes);
  return s;
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& label_bytes,
               std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
  std::ofstream img(images, std::ios::binary);
  write_be32(img, 0x00000803);
  write_be32(img, count);
  write_be32(img, rows);
  write_be32(img, cols);
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  std::ofstream lab(labels, std::ios::binary);
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(label_bytes.size()));
  lab.write(reinterpret_cast<const char*>(label_bytes.data()), static_cast<std::streamsize>(label_bytes.size()));
  if (!img || !lab) throw DataError("failed writing IDX files");
}

void write_csv(const std::filesystem::path& path, const Dataset& d) {
  d.validate();
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  const std::size_t dim = d.x.dim(1);
  for (std::size_t j = 0; j < dim; ++j) out << 'x' << j << ',';
  out << "label\n";
  out.precision(17);
  const auto v = d.x.values();
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) out << v[i * dim + j] << ',';
    out << d.labels[i] << '\n';
  }
}

Dataset read_csv(const std::filesystem::path& path, std::size_t classes) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header");
  const std::size_t dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (dim == 0) throw DataError(path.string() + ": header has no feature columns");
  Dataset d;
  std::vector<double> x;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != dim + 1) throw DataError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    try {
      for (std::size_t j = 0; j < dim; ++j) x.push_back(std::stod(cells[j]));
      d.labels.push_back(std::stoi(cells[dim]));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": unparsable value");
    }
  }
  d.x = Tensor::from({d.labels.size(), dim}, std::move(x));
  d.sample_shape = {dim};
  d.classes = classes;
  d.validate();
  return d;
}

Dataset slice(const Dataset& d, std::size_t begin, std::size_t end) {
  if (begin >= end || end > d.size()) throw std::out_of_range("dataset slice out of range");
  const std::size_t dim = d.x.dim(1);
  const auto v = d.x.values();
  Dataset out;
  out.x = Tensor::from({end - begin, dim}, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin * dim),
                                                               v.begin() + static_cast<std::ptrdiff_t>(end * dim)));
  out.labels.assign(d.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    d.labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.sample_shape = d.sample_shape;
  out.classes = d.classes;
  return out;
}

}  // namespace dfkd::data
