#pragma once

#include <cstdint>
#include <vector>

#include "flowvc/tensor.hpp"
#include "flowvc/wav.hpp"

namespace flowvc::audio {

// Framing constants. hop 320 / window 1280 / fft 1280 / 80 bins at 16 kHz,
// i.e. 50 frames per second.
struct MelConfig {
    int hop = 320;
    int window = 1280;
    int fft_size = 1280;
    int n_mels = 80;
    int sample_rate = 16000;
    double fmin = 0.0;
    double fmax = 8000.0;
    double power_floor = 1e-5;  // mel power clamp before the log

    void validate() const;
};

struct MelSpectrogram {
    Tensor values;  // frames x n_mels, log power
    int frame_rate = 50;
    int64_t frames() const { return values.rows; }
};

// Per-frame F0 in Hz; 0.0 marks unvoiced frames.
struct PitchContour {
    std::vector<double> f0_hz;
    int64_t frames() const { return static_cast<int64_t>(f0_hz.size()); }
};

// Frame count convention shared by mel and F0: reflect-pad (window-hop)/2 on
// the left, the same plus alignment fill on the right, so that
// frames == ceil(samples / hop).
int64_t frame_count(int64_t n_samples, const MelConfig& cfg);

void validate_clip(const AudioClip& clip, const MelConfig& cfg);

MelSpectrogram compute_mel(const AudioClip& clip, const MelConfig& cfg);

// Frame-wise normalized autocorrelation with parabolic peak refinement.
// Voicing threshold 0.3, search range 50..600 Hz.
PitchContour extract_f0(const AudioClip& clip, const MelConfig& cfg);

// The sampled recipe of one perturbation draw: a pitch shift (uniform in
// +-4 semitones, applied as resample-then-stretch) and three peaking-EQ
// gains (uniform in +-6 dB) at fixed center frequencies.
struct PerturbParams {
    double pitch_ratio;      // output f0 / input f0
    double eq_gain_db[3];
    static constexpr double kEqFreqHz[3] = {250.0, 1500.0, 6000.0};
    static constexpr double kEqQ = 0.7;
};

PerturbParams perturb_params(uint64_t seed);

// Deterministic per (clip, seed); preserves length and sample rate.
AudioClip perturb_signal(const AudioClip& clip, uint64_t seed);

// Mel filterbank weights [n_mels x (fft/2+1)] (triangular, HTK mel scale).
Tensor mel_filterbank(const MelConfig& cfg);

// Demo-only waveform path: approximate mel inversion (multiplicative NNLS)
// followed by iterative phase reconstruction. Not used by any metric.
AudioClip reconstruct_waveform(const MelSpectrogram& mel, const MelConfig& cfg,
                               int gl_iters = 60);

}  // namespace flowvc::audio
