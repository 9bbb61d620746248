#include "avh/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>

#include "avh/error.hpp"

namespace avh {

namespace {

// The FFTW planner is not thread-safe; execution with new-array calls is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename Scalar>
struct Traits;

template <>
struct Traits<float> {
  using Plan = fftwf_plan;
  using Complex = fftwf_complex;
  static float* alloc_real(int n) { return fftwf_alloc_real(static_cast<std::size_t>(n)); }
  static Complex* alloc_complex(int n) { return fftwf_alloc_complex(static_cast<std::size_t>(n)); }
  static void free(void* p) { fftwf_free(p); }
  static Plan plan(int n, float* in, Complex* out) { return fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE); }
  static void execute(Plan p, float* in, Complex* out) { fftwf_execute_dft_r2c(p, in, out); }
};

template <>
struct Traits<double> {
  using Plan = fftw_plan;
  using Complex = fftw_complex;
  static double* alloc_real(int n) { return fftw_alloc_real(static_cast<std::size_t>(n)); }
  static Complex* alloc_complex(int n) { return fftw_alloc_complex(static_cast<std::size_t>(n)); }
  static void free(void* p) { fftw_free(p); }
  static Plan plan(int n, double* in, Complex* out) { return fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE); }
  static void execute(Plan p, double* in, Complex* out) { fftw_execute_dft_r2c(p, in, out); }
};

}  // namespace

template <typename Scalar>
struct RealFft<Scalar>::Impl {
  using T = Traits<Scalar>;
  typename T::Plan plan{};
  Scalar* in = nullptr;
  typename T::Complex* out = nullptr;

  explicit Impl(int n) {
    in = T::alloc_real(n);
    out = T::alloc_complex(n / 2 + 1);
    if (!in || !out) throw std::bad_alloc();
    std::lock_guard lock(planner_mutex());
    // Plans are cached for the process lifetime and shared across instances.
    static std::map<int, typename T::Plan> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, T::plan(n, in, out)).first;
    plan = it->second;
  }
  ~Impl() {
    T::free(in);
    T::free(out);
  }
};

template <typename Scalar>
RealFft<Scalar>::RealFft(int n) : n_(n) {
  if (n < 2) throw InvalidArgument("RealFft: length must be >= 2");
  impl_ = std::make_unique<Impl>(n);
}

template <typename Scalar>
RealFft<Scalar>::~RealFft() = default;
template <typename Scalar>
RealFft<Scalar>::RealFft(RealFft&&) noexcept = default;
template <typename Scalar>
RealFft<Scalar>& RealFft<Scalar>::operator=(RealFft&&) noexcept = default;

template <typename Scalar>
void RealFft<Scalar>::magnitude(const Scalar* input, Scalar* mag) {
  std::memcpy(impl_->in, input, sizeof(Scalar) * static_cast<std::size_t>(n_));
  Traits<Scalar>::execute(impl_->plan, impl_->in, impl_->out);
  for (int k = 0; k < bins(); ++k) {
    const Scalar re = impl_->out[k][0], im = impl_->out[k][1];
    mag[k] = std::sqrt(re * re + im * im);
  }
}

template class RealFft<float>;
template class RealFft<double>;

}  // namespace avh
