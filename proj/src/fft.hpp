#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace forge::detail {

// Real-input FFT of a fixed size backed by FFTW. Plans are shared through a
// process-wide cache guarded by a mutex; each instance owns its buffers, so
// separate instances may be used from separate threads.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  // out.size() == bins()
  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  // Normalized inverse: inverse(forward(x)) == x.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  std::size_t n_;
  double* real_ = nullptr;
  void* spectrum_ = nullptr;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

}  // namespace forge::detail
