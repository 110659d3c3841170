#pragma once

#include <complex>
#include <istream>
#include <string>
#include <vector>

#include "zeggs/motion.hpp"

namespace zeggs::audio {

struct Waveform {
    std::vector<double> samples;  // mono, full scale in [-1, 1]
    int sample_rate = 48000;

    double duration() const { return double(samples.size()) / sample_rate; }
};

// PCM WAV reader: 16- or 24-bit, mono or stereo (averaged to mono). Other
// encodings are rejected with the format name in the message.
Waveform read_wav(std::istream& in);
Waveform read_wav_file(const std::string& path);
// 16-bit PCM writer (used by tools and test fixtures).
void write_wav16_file(const std::string& path, const Waveform& w);

struct AudioConfig {
    double window_ms = 50.0;
    double hop_ms = 12.5;
    int mel_channels = 80;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-5;
    double target_fps = 60.0;

    int window_samples(int rate) const { return int(window_ms / 1000.0 * rate + 0.5); }
    int hop_samples(int rate) const { return int(hop_ms / 1000.0 * rate + 0.5); }
};

struct Spectrogram {
    FeatureMatrix magnitude;  // [frames, fft_size/2 + 1]
    double frame_rate = 0.0;
    int fft_size = 0;
};

// In-place radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a);

// Hann-windowed one-sided magnitude spectrogram. Frames are centered on
// multiples of the hop (zero padding outside the signal), so frame count is
// 1 + floor(samples / hop); input shorter than one window yields one frame.
Spectrogram stft(const Waveform& w, double window_ms = 50.0, double hop_ms = 12.5);

// Triangular filterbank on mel-spaced centers; peak normalization (each
// triangle peaks at 1, no area normalization), HTK mel scale.
FeatureMatrix mel_filterbank(int channels, int fft_size, int sample_rate, double fmin, double fmax);
FeatureMatrix mel_project(const Spectrogram& spec, int channels, int sample_rate, double fmin,
                          double fmax);
void log_amplitude(FeatureMatrix& m, double eps = 1e-5);

// log of the sum of squared Hann-windowed samples per frame, floored at eps.
std::vector<double> frame_energy(const Waveform& w, double window_ms = 50.0, double hop_ms = 12.5,
                                 double eps = 1e-5);

// Per-channel linear interpolation in time. Output frame count is
// floor(duration * dst_rate) + 1 with duration = (rows-1)/src_rate;
// resampling at the source rate is the identity.
FeatureMatrix resample_features(const FeatureMatrix& m, double src_rate, double dst_rate);

// Linear time-scaling to an explicit row count (speed augmentation).
FeatureMatrix scale_feature_rows(const FeatureMatrix& m, int new_rows);

// Full pipeline: [T, 81] rows of 80 log-mel amplitudes plus log frame energy,
// resampled to cfg.target_fps.
FeatureMatrix speech_features(const Waveform& w, const AudioConfig& cfg = {});

}  // namespace zeggs::audio
