#include <cstdlib>
#include <stdexcept>
#include <string>

#include "igam/kernels.hpp"

namespace igam::kernels {

const Ops& scalar_table();
const Ops* avx2_table_or_null();

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
  return avx2_table_or_null() != nullptr &&
         __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

const char* variant_name(Variant v) {
  return v == Variant::scalar ? "scalar" : "avx2";
}

const Ops& table(Variant v) {
  if (v == Variant::scalar) return scalar_table();
  const Ops* avx2 = avx2_table_or_null();
  if (avx2 == nullptr || !avx2_supported()) {
    throw std::runtime_error("avx2 kernels unavailable on this machine");
  }
  return *avx2;
}

namespace {

Variant detect() {
  if (const char* env = std::getenv("IGAM_KERNELS")) {
    std::string s(env);
    if (s == "scalar") return Variant::scalar;
    if (s == "avx2") {
      if (!avx2_supported()) {
        throw std::runtime_error("IGAM_KERNELS=avx2 but cpu lacks avx2");
      }
      return Variant::avx2;
    }
    throw std::runtime_error("IGAM_KERNELS must be 'scalar' or 'avx2', got '" +
                             s + "'");
  }
  return avx2_supported() ? Variant::avx2 : Variant::scalar;
}

Variant& current() {
  static Variant v = detect();
  return v;
}

}  // namespace

Variant active_variant() { return current(); }

void set_variant(Variant v) {
  table(v);  // validates availability
  current() = v;
}

const Ops& active() { return table(current()); }

}  // namespace igam::kernels
