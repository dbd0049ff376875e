#include "fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <utility>

namespace forge::detail {
namespace {

struct PlanPair {
  fftw_plan forward;
  fftw_plan inverse;
};

std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

PlanPair plans_for(std::size_t n) {
  static std::map<std::size_t, PlanPair> cache;
  std::lock_guard lock(plan_mutex());
  if (auto it = cache.find(n); it != cache.end()) return it->second;
  // Plans are created on fftw_malloc'd scratch so every later buffer, also
  // fftw_malloc'd, has the same alignment and the new-array execute is legal.
  double* r = fftw_alloc_real(n);
  fftw_complex* c = fftw_alloc_complex(n / 2 + 1);
  const int ni = static_cast<int>(n);
  PlanPair p{fftw_plan_dft_r2c_1d(ni, r, c, FFTW_ESTIMATE),
             fftw_plan_dft_c2r_1d(ni, c, r, FFTW_ESTIMATE)};
  fftw_free(r);
  fftw_free(c);
  cache.emplace(n, p);
  return p;
}

}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  const PlanPair p = plans_for(n);
  forward_plan_ = p.forward;
  inverse_plan_ = p.inverse;
  real_ = fftw_alloc_real(n);
  spectrum_ = fftw_alloc_complex(n / 2 + 1);
}

RealFft::~RealFft() {
  fftw_free(real_);
  fftw_free(spectrum_);
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  std::copy(in.begin(), in.end(), real_);
  auto* spec = static_cast<fftw_complex*>(spectrum_);
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), real_, spec);
  for (std::size_t k = 0; k < bins(); ++k) out[k] = {spec[k][0], spec[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  auto* spec = static_cast<fftw_complex*>(spectrum_);
  for (std::size_t k = 0; k < bins(); ++k) {
    spec[k][0] = in[k].real();
    spec[k][1] = in[k].imag();
  }
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_), spec, real_);
  const double scale = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = real_[i] * scale;
}

}  // namespace forge::detail
