#pragma once

#include <memory>

namespace avh {

/// Real-input forward FFT of fixed length n producing n/2 + 1 bin magnitudes.
/// Instances own their buffers, so one instance per thread is safe.
/// Instantiated for float and double.
template <typename Scalar>
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(RealFft&&) noexcept;
  RealFft& operator=(RealFft&&) noexcept;

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  /// Writes bins() magnitudes of the transform of `input[0..n)` to `magnitude`.
  void magnitude(const Scalar* input, Scalar* magnitude);

 private:
  struct Impl;
  int n_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace avh
