#include "flowvc/audio.hpp"

#include <algorithm>
#include <cmath>

#include "flowvc/common.hpp"
#include "flowvc/fft.hpp"

namespace flowvc::audio {

namespace {

constexpr double kVoicingThreshold = 0.3;
constexpr double kF0Min = 50.0;
constexpr double kF0Max = 600.0;

std::vector<double> hann_periodic(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
    return w;
}

// Reflect-pad left by (window-hop)/2 and right by the same plus whatever
// aligns the last hop; falls back to zeros where the signal is too short to
// reflect.
std::vector<double> pad_signal(const std::vector<double>& x, const MelConfig& cfg) {
    const int64_t n = static_cast<int64_t>(x.size());
    const int64_t pad_l = (cfg.window - cfg.hop) / 2;
    const int64_t align = (cfg.hop - n % cfg.hop) % cfg.hop;
    const int64_t pad_r = pad_l + align;
    std::vector<double> out(static_cast<size_t>(n + pad_l + pad_r), 0.0);
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(pad_l + i)] = x[static_cast<size_t>(i)];
    for (int64_t i = 0; i < pad_l; ++i) {
        const int64_t src = pad_l - i;  // reflect without repeating the edge
        if (src < n) out[static_cast<size_t>(i)] = x[static_cast<size_t>(src)];
    }
    for (int64_t i = 0; i < pad_r; ++i) {
        const int64_t src = n - 2 - i;
        if (src >= 0) out[static_cast<size_t>(pad_l + n + i)] = x[static_cast<size_t>(src)];
    }
    return out;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// RBJ peaking EQ biquad, applied in place.
void apply_peaking_eq(std::vector<double>& x, double fs, double f0, double q, double gain_db) {
    const double a_lin = std::pow(10.0, gain_db / 40.0);
    const double w0 = 2.0 * M_PI * f0 / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double b0 = 1.0 + alpha * a_lin;
    const double b1 = -2.0 * cw;
    const double b2 = 1.0 - alpha * a_lin;
    const double a0 = 1.0 + alpha / a_lin;
    const double a1 = -2.0 * cw;
    const double a2 = 1.0 - alpha / a_lin;
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (auto& s : x) {
        const double in = s;
        const double out = (b0 * in + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
        x2 = x1;
        x1 = in;
        y2 = y1;
        y1 = out;
        s = out;
    }
}

// Plain overlap-add time stretch to an exact output length; local pitch is
// preserved because grains are copied verbatim.
std::vector<double> ola_stretch(const std::vector<double>& x, int64_t out_len) {
    const int64_t n = static_cast<int64_t>(x.size());
    if (n == 0 || out_len <= 0) return std::vector<double>(static_cast<size_t>(out_len), 0.0);
    const int64_t grain = std::min<int64_t>(1024, n);
    const int64_t hop = std::max<int64_t>(1, grain / 2);
    const auto win = hann_periodic(static_cast<int>(grain));

    std::vector<double> y(static_cast<size_t>(out_len), 0.0);
    std::vector<double> norm(static_cast<size_t>(out_len), 0.0);
    const double pos_scale = static_cast<double>(n - grain) /
                             std::max<double>(1.0, static_cast<double>(out_len - grain));
    for (int64_t start = 0;; start += hop) {
        if (start >= out_len) break;
        int64_t src = static_cast<int64_t>(std::llround(start * pos_scale));
        src = std::clamp<int64_t>(src, 0, n - grain);
        for (int64_t i = 0; i < grain; ++i) {
            const int64_t o = start + i;
            if (o >= out_len) break;
            y[static_cast<size_t>(o)] += x[static_cast<size_t>(src + i)] * win[static_cast<size_t>(i)];
            norm[static_cast<size_t>(o)] += win[static_cast<size_t>(i)];
        }
    }
    for (int64_t i = 0; i < out_len; ++i) {
        if (norm[static_cast<size_t>(i)] > 1e-8) y[static_cast<size_t>(i)] /= norm[static_cast<size_t>(i)];
    }
    return y;
}

}  // namespace

void MelConfig::validate() const {
    if (!(window <= fft_size)) throw InvalidInput("MelConfig: window must be <= fft_size");
    if (!(hop < window)) throw InvalidInput("MelConfig: hop must be < window");
    if (n_mels != 80) throw InvalidInput("MelConfig: n_mels must be 80");
    if (sample_rate != 16000) throw InvalidInput("MelConfig: sample_rate must be 16000");
}

int64_t frame_count(int64_t n_samples, const MelConfig& cfg) {
    return (n_samples + cfg.hop - 1) / cfg.hop;
}

void validate_clip(const AudioClip& clip, const MelConfig& cfg) {
    if (clip.samples.empty()) throw InvalidInput("audio clip is empty");
    if (clip.sample_rate != cfg.sample_rate)
        throw InvalidInput("audio clip sample rate must be 16000");
    for (double s : clip.samples)
        if (!std::isfinite(s)) throw InvalidInput("audio clip contains non-finite samples");
}

Tensor mel_filterbank(const MelConfig& cfg) {
    const int64_t bins = cfg.fft_size / 2 + 1;
    Tensor fb(cfg.n_mels, bins);
    const double m_lo = hz_to_mel(cfg.fmin);
    const double m_hi = hz_to_mel(cfg.fmax);
    std::vector<double> centers(static_cast<size_t>(cfg.n_mels) + 2);
    for (int m = 0; m < cfg.n_mels + 2; ++m)
        centers[static_cast<size_t>(m)] =
            mel_to_hz(m_lo + (m_hi - m_lo) * m / (cfg.n_mels + 1));
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double fl = centers[static_cast<size_t>(m)];
        const double fc = centers[static_cast<size_t>(m) + 1];
        const double fr = centers[static_cast<size_t>(m) + 2];
        for (int64_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            double w = 0.0;
            if (f > fl && f < fc)
                w = (f - fl) / (fc - fl);
            else if (f >= fc && f < fr)
                w = (fr - f) / (fr - fc);
            fb.at(m, k) = w;
        }
    }
    return fb;
}

MelSpectrogram compute_mel(const AudioClip& clip, const MelConfig& cfg) {
    cfg.validate();
    validate_clip(clip, cfg);
    const int64_t n = static_cast<int64_t>(clip.samples.size());
    const int64_t frames = frame_count(n, cfg);
    const auto padded = pad_signal(clip.samples, cfg);
    const auto win = hann_periodic(cfg.window);
    const Tensor fb = mel_filterbank(cfg);
    const Fft fft(cfg.fft_size);
    const int64_t bins = cfg.fft_size / 2 + 1;

    MelSpectrogram mel;
    mel.frame_rate = cfg.sample_rate / cfg.hop;
    mel.values = Tensor(frames, cfg.n_mels);
    std::vector<double> frame(static_cast<size_t>(cfg.fft_size), 0.0);
    for (int64_t i = 0; i < frames; ++i) {
        const int64_t start = i * cfg.hop;
        for (int w = 0; w < cfg.window; ++w)
            frame[static_cast<size_t>(w)] =
                padded[static_cast<size_t>(start + w)] * win[static_cast<size_t>(w)];
        for (int w = cfg.window; w < cfg.fft_size; ++w) frame[static_cast<size_t>(w)] = 0.0;
        const auto power = fft.power_spectrum(frame);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            const double* fbr = fb.data() + static_cast<size_t>(m) * bins;
            for (int64_t k = 0; k < bins; ++k) acc += fbr[static_cast<size_t>(k)] * power[static_cast<size_t>(k)];
            mel.values.at(i, m) = std::log(std::max(acc, cfg.power_floor));
        }
    }
    return mel;
}

PitchContour extract_f0(const AudioClip& clip, const MelConfig& cfg) {
    cfg.validate();
    validate_clip(clip, cfg);
    const int64_t n = static_cast<int64_t>(clip.samples.size());
    const int64_t frames = frame_count(n, cfg);
    const auto padded = pad_signal(clip.samples, cfg);
    const int64_t w = cfg.window;
    const int64_t tau_min = static_cast<int64_t>(std::ceil(cfg.sample_rate / kF0Max));
    const int64_t tau_max = static_cast<int64_t>(std::floor(cfg.sample_rate / kF0Min));

    PitchContour pc;
    pc.f0_hz.assign(static_cast<size_t>(frames), 0.0);
    std::vector<double> nacf(static_cast<size_t>(tau_max) + 1, 0.0);

    for (int64_t i = 0; i < frames; ++i) {
        const double* x = padded.data() + i * cfg.hop;
        double mean = 0.0;
        for (int64_t t = 0; t < w; ++t) mean += x[t];
        mean /= static_cast<double>(w);

        // Prefix sums of squared centered samples for the normalization terms.
        std::vector<double> sq(static_cast<size_t>(w) + 1, 0.0);
        for (int64_t t = 0; t < w; ++t) {
            const double c = x[t] - mean;
            sq[static_cast<size_t>(t) + 1] = sq[static_cast<size_t>(t)] + c * c;
        }
        if (sq[static_cast<size_t>(w)] < 1e-10) continue;  // digital silence

        double best = 0.0;
        int64_t best_tau = 0;
        for (int64_t tau = tau_min; tau <= tau_max && tau < w; ++tau) {
            double r = 0.0;
            for (int64_t t = 0; t + tau < w; ++t) r += (x[t] - mean) * (x[t + tau] - mean);
            const double e1 = sq[static_cast<size_t>(w - tau)];
            const double e2 = sq[static_cast<size_t>(w)] - sq[static_cast<size_t>(tau)];
            const double denom = std::sqrt(e1 * e2);
            const double v = denom > 1e-12 ? r / denom : 0.0;
            nacf[static_cast<size_t>(tau)] = v;
            if (v > best) {
                best = v;
                best_tau = tau;
            }
        }
        if (best < kVoicingThreshold || best_tau == 0) continue;

        // Prefer the shortest lag close to the global peak; avoids locking
        // onto the octave below.
        int64_t tau_pick = best_tau;
        for (int64_t tau = tau_min; tau < best_tau; ++tau) {
            if (nacf[static_cast<size_t>(tau)] >= 0.9 * best) {
                tau_pick = tau;
                break;
            }
        }

        double tau_ref = static_cast<double>(tau_pick);
        if (tau_pick > tau_min && tau_pick < tau_max && tau_pick + 1 < w) {
            const double ym = nacf[static_cast<size_t>(tau_pick) - 1];
            const double y0 = nacf[static_cast<size_t>(tau_pick)];
            const double yp = nacf[static_cast<size_t>(tau_pick) + 1];
            const double denom = ym - 2.0 * y0 + yp;
            if (std::fabs(denom) > 1e-12) {
                double delta = 0.5 * (ym - yp) / denom;
                delta = std::clamp(delta, -0.5, 0.5);
                tau_ref += delta;
            }
        }
        double f0 = cfg.sample_rate / tau_ref;
        f0 = std::clamp(f0, kF0Min, kF0Max);
        pc.f0_hz[static_cast<size_t>(i)] = f0;
    }
    return pc;
}

PerturbParams perturb_params(uint64_t seed) {
    Rng rng = Rng(seed).child(0x70657274);  // perturbation stream
    PerturbParams p{};
    const double semitones = rng.uniform(-4.0, 4.0);
    p.pitch_ratio = std::pow(2.0, semitones / 12.0);
    for (int b = 0; b < 3; ++b) p.eq_gain_db[b] = rng.uniform(-6.0, 6.0);
    return p;
}

AudioClip perturb_signal(const AudioClip& clip, uint64_t seed) {
    MelConfig cfg;
    validate_clip(clip, cfg);
    const PerturbParams p = perturb_params(seed);
    const int64_t n = static_cast<int64_t>(clip.samples.size());

    // Raise pitch by `ratio`: shrink the signal by 1/ratio, then stretch back
    // to the original length with grains that keep local pitch.
    std::vector<double> shifted = resample(clip.samples, 1.0 / p.pitch_ratio);
    std::vector<double> out = ola_stretch(shifted, n);

    for (int b = 0; b < 3; ++b)
        apply_peaking_eq(out, clip.sample_rate, PerturbParams::kEqFreqHz[b], PerturbParams::kEqQ,
                         p.eq_gain_db[b]);

    double peak = 0.0;
    for (double s : out) peak = std::max(peak, std::fabs(s));
    if (peak > 1.0) {
        const double g = 0.99 / peak;
        for (auto& s : out) s *= g;
    }
    AudioClip res;
    res.sample_rate = clip.sample_rate;
    res.samples = std::move(out);
    return res;
}

AudioClip reconstruct_waveform(const MelSpectrogram& mel, const MelConfig& cfg, int gl_iters) {
    cfg.validate();
    const int64_t frames = mel.frames();
    const int64_t bins = cfg.fft_size / 2 + 1;
    const Tensor fb = mel_filterbank(cfg);

    // Mel power -> linear power via multiplicative updates (stays >= 0).
    Tensor melp(frames, cfg.n_mels);
    for (int64_t i = 0; i < melp.size(); ++i) melp.v[static_cast<size_t>(i)] = std::exp(mel.values.v[static_cast<size_t>(i)]);
    Tensor lin = Tensor::full(frames, bins, 1e-4);
    for (int iter = 0; iter < 24; ++iter) {
        for (int64_t t = 0; t < frames; ++t) {
            // num_k = sum_m fb[m,k] * mel[t,m]; den_k = sum_m fb[m,k] * (fb lin)[t,m]
            std::vector<double> recon(static_cast<size_t>(cfg.n_mels), 0.0);
            for (int m = 0; m < cfg.n_mels; ++m) {
                double acc = 0.0;
                for (int64_t k = 0; k < bins; ++k) acc += fb.at(m, k) * lin.at(t, k);
                recon[static_cast<size_t>(m)] = acc;
            }
            for (int64_t k = 0; k < bins; ++k) {
                double num = 0.0, den = 0.0;
                for (int m = 0; m < cfg.n_mels; ++m) {
                    num += fb.at(m, k) * melp.at(t, m);
                    den += fb.at(m, k) * recon[static_cast<size_t>(m)];
                }
                if (den > 1e-12) lin.at(t, k) *= num / den;
            }
        }
    }

    // Iterative phase reconstruction on the magnitude spectrogram.
    const Fft fft(cfg.fft_size);
    const auto win = hann_periodic(cfg.window);
    const int64_t out_len = frames * cfg.hop;
    const int64_t pad_l = (cfg.window - cfg.hop) / 2;
    Tensor mag(frames, bins);
    for (int64_t i = 0; i < mag.size(); ++i) mag.v[static_cast<size_t>(i)] = std::sqrt(std::max(lin.v[static_cast<size_t>(i)], 0.0));

    std::vector<std::vector<std::complex<double>>> spec(
        static_cast<size_t>(frames),
        std::vector<std::complex<double>>(static_cast<size_t>(cfg.fft_size)));
    for (int64_t t = 0; t < frames; ++t)
        for (int64_t k = 0; k < cfg.fft_size; ++k) {
            const int64_t kk = k <= cfg.fft_size / 2 ? k : cfg.fft_size - k;
            spec[static_cast<size_t>(t)][static_cast<size_t>(k)] = mag.at(t, kk);
        }

    std::vector<double> x(static_cast<size_t>(out_len + 2 * pad_l), 0.0);
    for (int it = 0; it < gl_iters; ++it) {
        // ISTFT with windowed overlap-add.
        std::fill(x.begin(), x.end(), 0.0);
        std::vector<double> norm(x.size(), 0.0);
        std::vector<std::complex<double>> buf;
        for (int64_t t = 0; t < frames; ++t) {
            buf = spec[static_cast<size_t>(t)];
            fft.inverse(buf);
            for (int w = 0; w < cfg.window; ++w) {
                const int64_t o = t * cfg.hop + w;
                x[static_cast<size_t>(o)] += buf[static_cast<size_t>(w)].real() * win[static_cast<size_t>(w)];
                norm[static_cast<size_t>(o)] += win[static_cast<size_t>(w)] * win[static_cast<size_t>(w)];
            }
        }
        for (size_t i = 0; i < x.size(); ++i)
            if (norm[i] > 1e-8) x[i] /= norm[i];
        if (it + 1 == gl_iters) break;
        // STFT, keep phase, restore magnitude.
        for (int64_t t = 0; t < frames; ++t) {
            std::vector<std::complex<double>> frame(static_cast<size_t>(cfg.fft_size), 0.0);
            for (int w = 0; w < cfg.window; ++w)
                frame[static_cast<size_t>(w)] =
                    x[static_cast<size_t>(t * cfg.hop + w)] * win[static_cast<size_t>(w)];
            fft.forward(frame);
            for (int64_t k = 0; k < cfg.fft_size; ++k) {
                const int64_t kk = k <= cfg.fft_size / 2 ? k : cfg.fft_size - k;
                const double a = std::abs(frame[static_cast<size_t>(k)]);
                spec[static_cast<size_t>(t)][static_cast<size_t>(k)] =
                    a > 1e-12 ? frame[static_cast<size_t>(k)] * (mag.at(t, kk) / a)
                              : std::complex<double>(mag.at(t, kk), 0.0);
            }
        }
    }

    AudioClip out;
    out.sample_rate = cfg.sample_rate;
    out.samples.assign(x.begin() + pad_l, x.begin() + pad_l + out_len);
    double peak = 0.0;
    for (double s : out.samples) peak = std::max(peak, std::fabs(s));
    if (peak > 1.0)
        for (auto& s : out.samples) s *= 0.99 / peak;
    return out;
}

}  // namespace flowvc::audio
