#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace flowvc {

// Mixed-radix complex FFT (any factorization; small primes are fast paths,
// other factors fall back to an O(n*p) combine). Twiddles are cached per
// instance, so reuse one Fft object per transform size.
class Fft {
public:
    explicit Fft(int64_t n);

    int64_t size() const { return n_; }
    void forward(std::vector<std::complex<double>>& x) const { run(x, -1); }
    void inverse(std::vector<std::complex<double>>& x) const;  // scaled by 1/n

    // Power spectrum of a real frame: |X[k]|^2 for k = 0..n/2.
    std::vector<double> power_spectrum(const std::vector<double>& frame) const;

private:
    void run(std::vector<std::complex<double>>& x, int sign) const;
    void rec(std::complex<double>* x, int64_t n, int64_t tw_stride, int sign) const;

    int64_t n_;
    std::vector<std::complex<double>> tw_;  // e^{-2pi i j / n}, j = 0..n-1
};

}  // namespace flowvc
