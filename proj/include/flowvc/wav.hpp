#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flowvc {

// Mono audio at a fixed sample rate, amplitudes nominally in [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration_s() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

// Reads a PCM WAV (16-bit int or 32/64-bit float). Multi-channel input is
// downmixed by averaging; any sample rate other than target_rate is resampled
// with the Kaiser-windowed-sinc kernel below.
AudioClip load_wav(const std::string& path, int target_rate = 16000);

// 16-bit PCM writer (demo output path).
void save_wav(const std::string& path, const AudioClip& clip);

// Windowed-sinc resampler, Kaiser window with beta 14.769656, 64 zero
// crossings, rolloff 0.9475 (the "Kaiser best" parameter set). `ratio` is
// out_rate / in_rate; output length is round(n * ratio).
std::vector<double> resample(const std::vector<double>& x, double ratio);

inline AudioClip resample_clip(const AudioClip& in, int out_rate) {
    AudioClip out;
    out.sample_rate = out_rate;
    out.samples =
        resample(in.samples, static_cast<double>(out_rate) / static_cast<double>(in.sample_rate));
    return out;
}

}  // namespace flowvc
