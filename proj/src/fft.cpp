#include "fft.hpp"

#include <fftw3.h>

#include <mutex>
#include <new>

namespace driftalign::detail {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  std::lock_guard<std::mutex> lock(planner_mutex());
  time_ = static_cast<double*>(fftw_malloc(sizeof(double) * n_));
  freq_ = static_cast<std::complex<double>*>(
      fftw_malloc(sizeof(fftw_complex) * bins()));
  if (time_ == nullptr || freq_ == nullptr) {
    fftw_free(time_);
    fftw_free(freq_);
    throw std::bad_alloc();
  }
  auto* f = reinterpret_cast<fftw_complex*>(freq_);
  forward_plan_ =
      fftw_plan_dft_r2c_1d(static_cast<int>(n_), time_, f, FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(static_cast<int>(n_), f, time_,
                                       FFTW_ESTIMATE | FFTW_DESTROY_INPUT);
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
  fftw_free(time_);
  fftw_free(freq_);
}

void RealFft::forward() { fftw_execute(static_cast<fftw_plan>(forward_plan_)); }

void RealFft::inverse() { fftw_execute(static_cast<fftw_plan>(inverse_plan_)); }

}  // namespace driftalign::detail
