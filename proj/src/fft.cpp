#include "flowvc/fft.hpp"

#include <cmath>

#include "flowvc/common.hpp"

namespace flowvc {

namespace {
int64_t smallest_factor(int64_t n) {
    for (int64_t p : {2, 3, 5, 7, 11, 13}) {
        if (n % p == 0) return p;
    }
    for (int64_t p = 17; p * p <= n; p += 2)
        if (n % p == 0) return p;
    return n;
}
}  // namespace

Fft::Fft(int64_t n) : n_(n) {
    if (n <= 0) throw InvalidInput("Fft: size must be positive");
    tw_.resize(static_cast<size_t>(n));
    const double base = -2.0 * M_PI / static_cast<double>(n);
    for (int64_t j = 0; j < n; ++j)
        tw_[static_cast<size_t>(j)] = std::polar(1.0, base * static_cast<double>(j));
}

void Fft::run(std::vector<std::complex<double>>& x, int sign) const {
    if (static_cast<int64_t>(x.size()) != n_) throw InvalidInput("Fft: size mismatch");
    rec(x.data(), n_, 1, sign);
}

void Fft::inverse(std::vector<std::complex<double>>& x) const {
    run(x, +1);
    const double inv = 1.0 / static_cast<double>(n_);
    for (auto& c : x) c *= inv;
}

// Decimation in time: split by residue mod p, transform the p interleaves,
// combine with twiddles. tw_stride maps local twiddle indices to the global
// table built for n_.
void Fft::rec(std::complex<double>* x, int64_t n, int64_t tw_stride, int sign) const {
    if (n == 1) return;
    const int64_t p = smallest_factor(n);
    const int64_t m = n / p;

    std::vector<std::complex<double>> tmp(static_cast<size_t>(n));
    for (int64_t q = 0; q < p; ++q)
        for (int64_t j = 0; j < m; ++j) tmp[static_cast<size_t>(q * m + j)] = x[j * p + q];
    for (int64_t q = 0; q < p; ++q) rec(tmp.data() + q * m, m, tw_stride * p, sign);

    // x[k] = sum_q w^(q*k) * Q_q[k mod m], w = e^{sign*2pi i/n}
    for (int64_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        const int64_t km = k % m;
        for (int64_t q = 0; q < p; ++q) {
            const int64_t idx = (q * k * tw_stride) % n_;
            std::complex<double> w = tw_[static_cast<size_t>(idx)];
            if (sign > 0) w = std::conj(w);
            acc += w * tmp[static_cast<size_t>(q * m + km)];
        }
        x[k] = acc;
    }
}

std::vector<double> Fft::power_spectrum(const std::vector<double>& frame) const {
    if (static_cast<int64_t>(frame.size()) != n_)
        throw InvalidInput("Fft::power_spectrum: frame size mismatch");
    std::vector<std::complex<double>> buf(frame.begin(), frame.end());
    forward(buf);
    std::vector<double> p(static_cast<size_t>(n_ / 2 + 1));
    for (size_t k = 0; k < p.size(); ++k) p[k] = std::norm(buf[k]);
    return p;
}

}  // namespace flowvc
