#include "mmvt/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mmvt/model_spec.hpp"
#include "mmvt/parallel.hpp"

namespace mmvt {

namespace {

constexpr int kTargetRate = 16000;
constexpr double kLogFloor = 1e-6;

std::uint32_t rd_u32(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) |
           (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

std::uint16_t rd_u16(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

}  // namespace

AudioClip ingest_audio(std::span<const std::uint8_t> wav) {
    if (wav.size() < 12 || std::memcmp(wav.data(), "RIFF", 4) != 0 ||
        std::memcmp(wav.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("wav: not a RIFF/WAVE file");

    int format = 0, channels = 0, bits = 0;
    int rate = 0;
    std::size_t data_off = 0, data_len = 0;
    bool have_fmt = false;

    std::size_t off = 12;
    while (off + 8 <= wav.size()) {
        char id[5] = {};
        std::memcpy(id, wav.data() + off, 4);
        const std::size_t len = rd_u32(wav, off + 4);
        const std::size_t payload = off + 8;
        if (payload + len > wav.size()) throw std::runtime_error("wav: truncated chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) throw std::runtime_error("wav: fmt chunk too short");
            format = rd_u16(wav, payload);
            channels = rd_u16(wav, payload + 2);
            rate = static_cast<int>(rd_u32(wav, payload + 4));
            bits = rd_u16(wav, payload + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_off = payload;
            data_len = len;
        }
        off = payload + len + (len & 1);
    }
    if (!have_fmt || data_off == 0) throw std::runtime_error("wav: missing fmt or data chunk");
    if (channels <= 0 || rate <= 0) throw std::runtime_error("wav: bad fmt fields");

    const bool pcm = format == 1 && (bits == 8 || bits == 16 || bits == 24);
    const bool flt = format == 3 && bits == 32;
    if (!pcm && !flt)
        throw std::runtime_error("wav: unsupported encoding (format " + std::to_string(format) +
                                 ", " + std::to_string(bits) + " bits)");

    const std::size_t bytes_per_sample = static_cast<std::size_t>(bits) / 8;
    const std::size_t frame_bytes = bytes_per_sample * static_cast<std::size_t>(channels);
    const std::size_t n_frames = data_len / frame_bytes;

    std::vector<float> mono(n_frames);
    const std::uint8_t* d = wav.data() + data_off;
    for (std::size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            const std::uint8_t* p = d + i * frame_bytes + static_cast<std::size_t>(c) * bytes_per_sample;
            double v = 0.0;
            if (flt) {
                std::uint32_t bitsv = static_cast<std::uint32_t>(p[0]) | (p[1] << 8u) |
                                      (static_cast<std::uint32_t>(p[2]) << 16u) |
                                      (static_cast<std::uint32_t>(p[3]) << 24u);
                float f;
                std::memcpy(&f, &bitsv, 4);
                v = f;
            } else if (bits == 8) {
                v = (static_cast<int>(p[0]) - 128) / 128.0;
            } else if (bits == 16) {
                const std::int16_t s = static_cast<std::int16_t>(p[0] | (p[1] << 8));
                v = s / 32768.0;
            } else {  // 24
                std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
                if (s & 0x800000) s |= static_cast<std::int32_t>(0xff000000);
                v = s / 8388608.0;
            }
            acc += v;
        }
        mono[i] = static_cast<float>(std::clamp(acc / channels, -1.0, 1.0));
    }

    AudioClip clip;
    clip.sample_rate = kTargetRate;
    clip.samples = rate == kTargetRate ? std::move(mono) : resample_linear(mono, rate, kTargetRate);
    return clip;
}

AudioClip load_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("wav: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return ingest_audio(bytes);
}

void write_wav_pcm16(const std::string& path, std::span<const float> samples, int sample_rate,
                     int channels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("wav: cannot open " + path + " for writing");
    const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
    auto u32 = [&](std::uint32_t v) {
        char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
        os.write(b, 4);
    };
    auto u16 = [&](std::uint16_t v) {
        char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
        os.write(b, 2);
    };
    os.write("RIFF", 4);
    u32(36 + data_len);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    u32(16);
    u16(1);  // PCM
    u16(static_cast<std::uint16_t>(channels));
    u32(static_cast<std::uint32_t>(sample_rate));
    u32(static_cast<std::uint32_t>(sample_rate * channels * 2));
    u16(static_cast<std::uint16_t>(channels * 2));
    u16(16);
    os.write("data", 4);
    u32(data_len);
    for (const float s : samples) {
        const double c = std::clamp(static_cast<double>(s), -1.0, 1.0);
        const auto v = static_cast<std::int16_t>(std::lround(c * 32767.0));
        u16(static_cast<std::uint16_t>(v));
    }
    if (!os) throw std::runtime_error("wav: write failed");
}

std::vector<float> resample_linear(std::span<const float> x, int from_rate, int to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw std::invalid_argument("resample: bad rates");
    if (x.empty()) return {};
    if (from_rate == to_rate) return {x.begin(), x.end()};
    const std::size_t n = x.size();
    const std::size_t out_n =
        static_cast<std::size_t>((static_cast<std::uint64_t>(n - 1) * to_rate) / from_rate) + 1;
    std::vector<float> out(out_n);
    const double step = static_cast<double>(from_rate) / to_rate;
    for (std::size_t i = 0; i < out_n; ++i) {
        const double pos = i * step;
        const std::size_t lo = std::min(static_cast<std::size_t>(pos), n - 1);
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        out[i] = static_cast<float>(x[lo] * (1.0 - frac) + x[hi] * frac);
    }
    return out;
}

// ------------------------------------------------------------------- STFT

namespace {

void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

std::vector<double> hann_window(std::size_t len) {
    std::vector<double> w(len);
    for (std::size_t i = 0; i < len; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                    static_cast<double>(len - 1));
    return w;
}

// power spectrogram over a raw sample buffer
Tensor stft_power_samples(std::span<const float> samples, int sample_rate, int window_ms,
                          int hop_ms, int n_fft) {
    const std::size_t win = static_cast<std::size_t>(sample_rate) * window_ms / 1000;
    const std::size_t hop = static_cast<std::size_t>(sample_rate) * hop_ms / 1000;
    if (win == 0 || hop == 0) throw std::invalid_argument("stft: window/hop too small");
    if (static_cast<std::size_t>(n_fft) < win)
        throw std::invalid_argument("stft: n_fft smaller than window");
    if (samples.size() < win)
        throw std::invalid_argument("stft: clip shorter than one window (pad first)");

    const std::size_t n_bins = static_cast<std::size_t>(n_fft) / 2 + 1;
    const std::size_t n_frames = (samples.size() - win) / hop + 1;
    const std::vector<double> window = hann_window(win);

    Tensor out({n_frames, n_bins}, DType::f32);
    auto po = out.data<float>();
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(n_fft));
    for (std::size_t f = 0; f < n_frames; ++f) {
        const std::size_t base = f * hop;
        for (std::size_t i = 0; i < win; ++i)
            buf[i] = std::complex<double>(samples[base + i] * window[i], 0.0);
        for (std::size_t i = win; i < static_cast<std::size_t>(n_fft); ++i) buf[i] = 0.0;
        fft_radix2(buf);
        for (std::size_t k = 0; k < n_bins; ++k)
            po[f * n_bins + k] = static_cast<float>(std::norm(buf[k]));
    }
    return out;
}

}  // namespace

Tensor stft_power(const AudioClip& a, int window_ms, int hop_ms, int n_fft) {
    return stft_power_samples(a.samples, a.sample_rate, window_ms, hop_ms, n_fft);
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

MelFilterbank build_mel_filterbank(int n_mels, double f_lo, double f_hi, int n_fft,
                                   int sample_rate) {
    if (!(f_lo >= 0.0 && f_lo < f_hi && f_hi <= sample_rate / 2.0))
        throw std::invalid_argument("mel: band edges must satisfy 0 <= f_lo < f_hi <= sr/2");
    if (n_mels <= 0) throw std::invalid_argument("mel: n_mels must be positive");

    const std::size_t n_bins = static_cast<std::size_t>(n_fft) / 2 + 1;
    const double m_lo = hz_to_mel(f_lo);
    const double m_hi = hz_to_mel(f_hi);
    // n_mels + 2 edge points equally spaced in mel; filter i rises over
    // [edge_i, edge_{i+1}] and falls over [edge_{i+1}, edge_{i+2}]
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = m_lo + (m_hi - m_lo) * static_cast<double>(i) /
                              static_cast<double>(n_mels + 1);

    MelFilterbank fb;
    fb.f_lo = f_lo;
    fb.f_hi = f_hi;
    fb.weights = Tensor({static_cast<std::size_t>(n_mels), n_bins}, DType::f32);
    auto w = fb.weights.data<float>();
    for (int m = 0; m < n_mels; ++m) {
        const double left = edges[static_cast<std::size_t>(m)];
        const double center = edges[static_cast<std::size_t>(m) + 1];
        const double right = edges[static_cast<std::size_t>(m) + 2];
        fb.center_hz.push_back(mel_to_hz(center));
        for (std::size_t k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / n_fft;
            const double mel = hz_to_mel(f);
            double v = 0.0;
            if (mel > left && mel < right)
                v = mel <= center ? (mel - left) / (center - left)
                                  : (right - mel) / (right - center);
            w[static_cast<std::size_t>(m) * n_bins + k] = static_cast<float>(v);
        }
    }
    return fb;
}

SpectrogramStream extract_stream(const AudioClip& a, int n_frames, int fps, int threads) {
    if (n_frames <= 0) throw std::invalid_argument("extract_stream: n_frames must be positive");
    if (a.sample_rate % fps != 0)
        throw std::invalid_argument("extract_stream: sample rate not divisible by fps");

    const std::size_t sr = static_cast<std::size_t>(a.sample_rate);
    const std::size_t win = sr * 25 / 1000;
    const std::size_t hop = sr * 10 / 1000;
    const std::size_t video_hop = sr / static_cast<std::size_t>(fps);  // 40 ms at 25 fps
    const std::size_t stft_per_image = kSpecFrames;

    // one STFT pass over the zero-padded clip; image i reuses rows
    // [i*video_hop/hop, +96)
    if (video_hop % hop != 0)
        throw std::invalid_argument("extract_stream: video hop not a multiple of stft hop");
    const std::size_t rows_per_video_frame = video_hop / hop;
    const std::size_t total_rows =
        rows_per_video_frame * (static_cast<std::size_t>(n_frames) - 1) + stft_per_image;
    const std::size_t needed = win + (total_rows - 1) * hop;

    std::vector<float> padded(a.samples.begin(), a.samples.end());
    if (padded.size() < needed) padded.resize(needed, 0.0f);

    const Tensor power = stft_power_samples(padded, a.sample_rate, 25, 10, 512);
    const MelFilterbank fb = build_mel_filterbank();
    const std::size_t n_bins = power.dim(1);

    // log-mel for every STFT row; rows are independent, output lands in
    // preallocated slots so the thread count never changes the bytes
    Tensor logmel({total_rows, kSpecBins}, DType::f32);
    {
        auto pp = power.data<float>();
        auto pw = fb.weights.data<float>();
        auto pm = logmel.data<float>();
        parallel_for(total_rows, threads, [&](std::size_t r) {
            for (std::size_t m = 0; m < kSpecBins; ++m) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n_bins; ++k)
                    acc += static_cast<double>(pw[m * n_bins + k]) * pp[r * n_bins + k];
                pm[r * kSpecBins + m] = static_cast<float>(std::log(acc + kLogFloor));
            }
        });
    }

    SpectrogramStream s;
    s.frames = Tensor({static_cast<std::size_t>(n_frames), kSpecFrames, kSpecBins}, DType::f32);
    auto pf = s.frames.data<float>();
    auto pm = logmel.data<float>();
    const std::size_t image = kSpecFrames * kSpecBins;
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_frames); ++i) {
        const std::size_t row0 = i * rows_per_video_frame;
        std::memcpy(pf.data() + i * image, pm.data() + row0 * kSpecBins, image * sizeof(float));
    }
    return s;
}

SpectrogramStream normalize_stream(const SpectrogramStream& s) {
    if (s.frames.empty()) throw std::invalid_argument("normalize_stream: empty stream");
    SpectrogramStream out;
    out.normalized = true;
    if (s.normalized) {
        out.frames = s.frames;
        return out;
    }
    auto p = s.frames.data<float>();
    float lo = p[0], hi = p[0];
    for (const float v : p) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    out.frames = Tensor(s.frames.dims(), DType::f32);
    auto q = out.frames.data<float>();
    if (hi == lo) {
        return out;  // constant input maps to all zeros
    }
    const double span = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < p.size(); ++i)
        q[i] = static_cast<float>(2.0 * (p[i] - lo) / span - 1.0);
    return out;
}

SpectrogramStream spec_augment(const SpectrogramStream& s, Rng& rng, int max_time, int max_freq) {
    if (!s.normalized) throw std::invalid_argument("spec_augment: stream must be normalized first");
    if (max_time < 0 || static_cast<std::size_t>(max_time) > kSpecFrames ||
        max_freq < 0 || static_cast<std::size_t>(max_freq) > kSpecBins)
        throw std::invalid_argument("spec_augment: mask bounds exceed image");

    const std::size_t t_len = rng.range(static_cast<std::uint64_t>(max_time) + 1);
    const std::size_t t0 = rng.range(kSpecFrames - t_len + 1);
    const std::size_t f_len = rng.range(static_cast<std::uint64_t>(max_freq) + 1);
    const std::size_t f0 = rng.range(kSpecBins - f_len + 1);

    SpectrogramStream out;
    out.normalized = true;
    out.frames = s.frames;
    auto p = out.frames.data<float>();
    const std::size_t n_images = out.frames.dim(0);
    for (std::size_t i = 0; i < n_images; ++i) {
        float* img = p.data() + i * kSpecFrames * kSpecBins;
        for (std::size_t r = t0; r < t0 + t_len; ++r)
            for (std::size_t c = 0; c < kSpecBins; ++c) img[r * kSpecBins + c] = 0.0f;
        for (std::size_t r = 0; r < kSpecFrames; ++r)
            for (std::size_t c = f0; c < f0 + f_len; ++c) img[r * kSpecBins + c] = 0.0f;
    }
    return out;
}

}  // namespace mmvt
