#include <atomic>
#include <cstdlib>
#include <string>

#include "compass/errors.hpp"
#include "compass/simd.hpp"

namespace compass::simd {

#if defined(COMPASS_HAS_AVX2)
const KernelTable& avx2_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(COMPASS_HAS_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* detect() {
  const char* forced = std::getenv("COMPASS_SIMD");
  if (forced != nullptr && std::string(forced) == "scalar") return &scalar_kernels();
  if (const KernelTable* t = avx2_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{detect()};
  return current;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(COMPASS_HAS_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

Isa active_isa() { return active().isa; }

void select(Isa isa) {
  if (isa == Isa::scalar) {
    slot().store(&scalar_kernels());
    return;
  }
  const KernelTable* t = avx2_kernels();
  if (t == nullptr) throw ConfigError("AVX2 kernels are not available on this machine");
  slot().store(t);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace compass::simd
