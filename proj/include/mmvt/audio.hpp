#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmvt/rng.hpp"
#include "mmvt/tensor.hpp"

namespace mmvt {

// Audio -> frame-aligned 96x64 log-mel spectrogram streams.
//
// Recipe: mono 16 kHz, 25 ms Hann window, 10 ms hop, 512-point FFT, squared
// magnitude, 64 triangular mel filters between 125 and 7500 Hz, log(mel+1e-6).
// One image per RGB frame: the window for frame i starts at i*40 ms and spans
// 96 STFT frames. Audio past the end is treated as silence.

struct AudioClip {
    std::vector<float> samples;  // mono, [-1,1]
    int sample_rate = 16000;
};

// PCM WAV (8/16/24-bit int or 32-bit float), any channel count and rate;
// channels are averaged and the result linearly resampled to 16 kHz
AudioClip ingest_audio(std::span<const std::uint8_t> wav_bytes);
AudioClip load_wav(const std::string& path);
void write_wav_pcm16(const std::string& path, std::span<const float> samples, int sample_rate,
                     int channels = 1);

std::vector<float> resample_linear(std::span<const float> x, int from_rate, int to_rate);

// Hann-windowed power spectrogram, [frames, n_fft/2+1] f32
Tensor stft_power(const AudioClip& a, int window_ms = 25, int hop_ms = 10, int n_fft = 512);

struct MelFilterbank {
    Tensor weights;                 // [n_mels, n_fft/2+1]
    std::vector<double> center_hz;  // triangle peak per filter
    double f_lo = 125.0;
    double f_hi = 7500.0;
};

// HTK mel scale: m(f) = 2595 * log10(1 + f/700)
double hz_to_mel(double f);
double mel_to_hz(double m);

MelFilterbank build_mel_filterbank(int n_mels = 64, double f_lo = 125.0, double f_hi = 7500.0,
                                   int n_fft = 512, int sample_rate = 16000);

struct SpectrogramStream {
    Tensor frames;  // [F, 96, 64] f32
    bool normalized = false;
};

SpectrogramStream extract_stream(const AudioClip& a, int n_frames, int fps = 25, int threads = 1);

// per-clip min-max map onto [-1,1]; a constant stream maps to all zeros
SpectrogramStream normalize_stream(const SpectrogramStream& s);

// one time mask (length uniform in [0,max_time]) and one frequency mask
// (length uniform in [0,max_freq]) applied identically to every image
SpectrogramStream spec_augment(const SpectrogramStream& s, Rng& rng, int max_time = 96,
                               int max_freq = 16);

}  // namespace mmvt
