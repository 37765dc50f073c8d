#include "flowvc/wav.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "flowvc/common.hpp"

namespace flowvc {

namespace {

uint32_t rd_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

// Modified Bessel function of the first kind, order zero (power series).
double bessel_i0(double x) {
    double sum = 1.0, term = 1.0;
    const double hx = 0.5 * x;
    for (int k = 1; k < 64; ++k) {
        term *= (hx / k) * (hx / k);
        sum += term;
        if (term < 1e-16 * sum) break;
    }
    return sum;
}

}  // namespace

AudioClip load_wav(const std::string& path, int target_rate) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open wav file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw IoError("not a RIFF/WAVE file: " + path);

    uint16_t fmt_code = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const uint8_t* data = nullptr;
    size_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t sz = rd_u32(bytes.data() + pos + 4);
        const size_t body = pos + 8;
        if (body + sz > bytes.size()) break;
        if (std::memcmp(id, "fmt ", 4) == 0 && sz >= 16) {
            fmt_code = rd_u16(bytes.data() + body);
            channels = rd_u16(bytes.data() + body + 2);
            rate = rd_u32(bytes.data() + body + 4);
            bits = rd_u16(bytes.data() + body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = sz;
        }
        pos = body + sz + (sz & 1);  // chunks are word-aligned
    }
    if (fmt_code == 0 || data == nullptr) throw IoError("wav missing fmt/data chunk: " + path);
    if (channels == 0) throw IoError("wav has zero channels: " + path);

    const bool is_float = fmt_code == 3;
    const bool is_pcm = fmt_code == 1;
    if (!is_float && !is_pcm) throw IoError("unsupported wav format code: " + path);

    std::vector<double> mono;
    const size_t bytes_per = bits / 8;
    if (bytes_per == 0) throw IoError("bad wav bit depth: " + path);
    const size_t n_frames = data_len / (bytes_per * channels);
    mono.resize(n_frames);
    for (size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (uint16_t ch = 0; ch < channels; ++ch) {
            const uint8_t* p = data + (i * channels + ch) * bytes_per;
            double s;
            if (is_pcm && bits == 16) {
                int16_t v;
                std::memcpy(&v, p, 2);
                s = static_cast<double>(v) / 32768.0;
            } else if (is_float && bits == 32) {
                float v;
                std::memcpy(&v, p, 4);
                s = static_cast<double>(v);
            } else if (is_float && bits == 64) {
                double v;
                std::memcpy(&v, p, 8);
                s = v;
            } else {
                throw IoError("unsupported wav sample layout: " + path);
            }
            acc += s;
        }
        mono[i] = acc / channels;
    }
    if (mono.empty()) throw InvalidInput("wav contains no samples: " + path);

    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.samples = std::move(mono);
    if (clip.sample_rate != target_rate) clip = resample_clip(clip, target_rate);
    return clip;
}

void save_wav(const std::string& path, const AudioClip& clip) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write wav file: " + path);
    const uint32_t n = static_cast<uint32_t>(clip.samples.size());
    const uint32_t data_sz = n * 2;
    const uint32_t rate = static_cast<uint32_t>(clip.sample_rate);
    const uint32_t byte_rate = rate * 2;

    auto w32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto w16 = [&](uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
    f.write("RIFF", 4);
    w32(36 + data_sz);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    w32(16);
    w16(1);  // PCM
    w16(1);  // mono
    w32(rate);
    w32(byte_rate);
    w16(2);   // block align
    w16(16);  // bits
    f.write("data", 4);
    w32(data_sz);
    for (double s : clip.samples) {
        double c = s < -1.0 ? -1.0 : (s > 1.0 ? 1.0 : s);
        const int16_t v = static_cast<int16_t>(std::lrint(c * 32767.0));
        f.write(reinterpret_cast<const char*>(&v), 2);
    }
    if (!f) throw IoError("short write: " + path);
}

std::vector<double> resample(const std::vector<double>& x, double ratio) {
    if (ratio <= 0.0 || !std::isfinite(ratio)) throw InvalidInput("resample: bad ratio");
    if (x.empty()) return {};
    if (ratio == 1.0) return x;

    constexpr double kBeta = 14.769656459379492;
    constexpr double kZeros = 64.0;
    constexpr double kRolloff = 0.9475937167399596;
    const double i0b = bessel_i0(kBeta);
    // When decimating, the kernel is widened and the cutoff lowered by the
    // ratio to keep the output alias-free.
    const double scale = ratio < 1.0 ? ratio : 1.0;
    const double support = kZeros / scale;

    const int64_t n_in = static_cast<int64_t>(x.size());
    const int64_t n_out = static_cast<int64_t>(std::llround(n_in * ratio));
    std::vector<double> y(static_cast<size_t>(n_out > 0 ? n_out : 1), 0.0);

    for (int64_t i = 0; i < static_cast<int64_t>(y.size()); ++i) {
        const double center = static_cast<double>(i) / ratio;
        const int64_t j0 = static_cast<int64_t>(std::ceil(center - support));
        const int64_t j1 = static_cast<int64_t>(std::floor(center + support));
        double acc = 0.0;
        for (int64_t j = j0; j <= j1; ++j) {
            if (j < 0 || j >= n_in) continue;
            const double t = (center - static_cast<double>(j)) * scale;
            const double u = t / kZeros;
            if (u <= -1.0 || u >= 1.0) continue;
            const double win = bessel_i0(kBeta * std::sqrt(1.0 - u * u)) / i0b;
            const double arg = M_PI * kRolloff * t;
            const double sinc = std::fabs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
            acc += x[static_cast<size_t>(j)] * kRolloff * sinc * win * scale;
        }
        y[static_cast<size_t>(i)] = acc;
    }
    return y;
}

}  // namespace flowvc
