#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"

namespace ccv::kernels {
namespace {

const KernelTable kScalar{
    Isa::scalar,
    &scalar::dot,
    &scalar::axpy,
    &scalar::sum_sq,
    &scalar::sq_accumulate,
    &scalar::residual_product,
    &scalar::clipped_coord_accumulate,
    &scalar::gemm,
    &scalar::gemm_tn,
    &scalar::gemm_nt,
    &scalar::baseline_residual,
    &scalar::adam_update,
};

#if defined(CCV_HAVE_AVX2)
const KernelTable kAvx2{
    Isa::avx2,
    &avx2::dot,
    &avx2::axpy,
    &avx2::sum_sq,
    &avx2::sq_accumulate,
    &avx2::residual_product,
    &avx2::clipped_coord_accumulate,
    &avx2::gemm,
    &avx2::gemm_tn,
    &avx2::gemm_nt,
    &avx2::baseline_residual,
    &avx2::adam_update,
};
#endif

bool host_has_avx2() {
#if defined(CCV_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const KernelTable* best = avx2_table();
  if (const char* env = std::getenv("CCV_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &kScalar;
    if (want == "avx2" && best != nullptr) return best;
  }
  return best != nullptr ? best : &kScalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(CCV_HAVE_AVX2)
  static const bool ok = host_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(Isa isa) {
  const KernelTable* table = isa == Isa::scalar ? &kScalar : avx2_table();
  if (table == nullptr) return false;
  current().store(table, std::memory_order_relaxed);
  return true;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out{Isa::scalar};
  if (avx2_table() != nullptr) out.push_back(Isa::avx2);
  return out;
}

}  // namespace ccv::kernels
