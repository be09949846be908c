#pragma once

#include <string>

#include "dfkd/tensor.hpp"

namespace dfkd {

enum class SampleSource { generator, memory_bank, generative_replay };

inline std::string to_string(SampleSource s) {
  switch (s) {
    case SampleSource::generator:
      return "generator";
    case SampleSource::memory_bank:
      return "memory_bank";
    case SampleSource::generative_replay:
      return "generative_replay";
  }
  return "unknown";
}

// Flat sample rows [N, prod(sample_shape)] plus where they came from.
struct PseudoBatch {
  Tensor samples;
  SampleSource source = SampleSource::generator;

  PseudoBatch() = default;
  PseudoBatch(Tensor s, SampleSource src) : samples(std::move(s)), source(src) {
    if (!samples.defined() || samples.rank() != 2 || samples.dim(0) == 0) {
      throw ShapeError("PseudoBatch: samples must be a nonempty [N,D] array");
    }
  }

  std::size_t size() const { return samples.dim(0); }
};

}  // namespace dfkd
