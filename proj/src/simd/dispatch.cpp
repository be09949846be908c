#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dfkd/simd/kernels.hpp"

namespace dfkd::simd {

#if !defined(DFKD_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif
#if !defined(DFKD_HAVE_NEON)
const KernelTable* neon_kernels() { return nullptr; }
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

std::vector<const KernelTable*> available_kernels() {
  std::vector<const KernelTable*> out{&scalar_kernels()};
  if (const auto* t = avx2_kernels(); t != nullptr && cpu_supports(Isa::avx2)) out.push_back(t);
  if (const auto* t = neon_kernels(); t != nullptr && cpu_supports(Isa::neon)) out.push_back(t);
  return out;
}

namespace {

const KernelTable& select() {
  std::string want = "auto";
  if (const char* env = std::getenv("DFKD_SIMD"); env != nullptr && *env != '\0') want = env;

  const auto usable = [](const KernelTable* t, Isa isa) {
    return t != nullptr && cpu_supports(isa);
  };
  if (want == "scalar") return scalar_kernels();
  if (want == "avx2") {
    if (!usable(avx2_kernels(), Isa::avx2)) throw std::runtime_error("DFKD_SIMD=avx2 but AVX2 is unavailable");
    return *avx2_kernels();
  }
  if (want == "neon") {
    if (!usable(neon_kernels(), Isa::neon)) throw std::runtime_error("DFKD_SIMD=neon but NEON is unavailable");
    return *neon_kernels();
  }
  if (want != "auto") throw std::runtime_error("DFKD_SIMD must be one of auto, scalar, avx2, neon");

  if (usable(avx2_kernels(), Isa::avx2)) return *avx2_kernels();
  if (usable(neon_kernels(), Isa::neon)) return *neon_kernels();
  return scalar_kernels();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace dfkd::simd
