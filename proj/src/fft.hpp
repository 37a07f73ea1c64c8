#pragma once

#include <complex>
#include <cstddef>

namespace driftalign::detail {

// FFTW r2c / c2r plans over owned buffers. Planning is serialised; execution
// is safe from multiple threads as long as each uses its own instance.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }
  double* time() { return time_; }
  std::complex<double>* freq() { return freq_; }

  void forward();
  // Unnormalised: forward followed by inverse scales by n.
  void inverse();

 private:
  std::size_t n_;
  double* time_ = nullptr;
  std::complex<double>* freq_ = nullptr;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

}  // namespace driftalign::detail
