#include "zeggs/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "zeggs/binio.hpp"

namespace zeggs::audio {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint32_t read_u32(std::istream& in) { return binio::read_le<std::uint32_t>(in); }
std::uint16_t read_u16(std::istream& in) { return binio::read_le<std::uint16_t>(in); }

const char* wav_format_name(std::uint16_t code) {
    switch (code) {
        case 1: return "PCM";
        case 3: return "IEEE float";
        case 6: return "A-law";
        case 7: return "mu-law";
        case 0xFFFE: return "WAVE_FORMAT_EXTENSIBLE";
        default: return "unknown";
    }
}

}  // namespace

Waveform read_wav(std::istream& in) {
    char tag[4];
    binio::read_bytes(in, tag, 4);
    if (std::memcmp(tag, "RIFF", 4) != 0) fail(Errc::format, "WAV: missing RIFF header");
    (void)read_u32(in);
    binio::read_bytes(in, tag, 4);
    if (std::memcmp(tag, "WAVE", 4) != 0) fail(Errc::format, "WAV: missing WAVE tag");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::vector<char> data;
    while (in.peek() != EOF) {
        char id[4];
        in.read(id, 4);
        if (in.gcount() == 0) break;
        if (in.gcount() != 4) fail(Errc::format, "WAV: truncated chunk header");
        std::uint32_t size = read_u32(in);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) fail(Errc::format, "WAV: fmt chunk too small");
            format = read_u16(in);
            channels = read_u16(in);
            rate = read_u32(in);
            (void)read_u32(in);  // byte rate
            (void)read_u16(in);  // block align
            bits = read_u16(in);
            for (std::uint32_t i = 16; i < size; ++i) in.get();
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data.resize(size);
            binio::read_bytes(in, data.data(), size);
        } else {
            in.seekg(size + (size & 1), std::ios::cur);
            if (!in) fail(Errc::format, "WAV: truncated chunk");
        }
    }
    if (!have_fmt) fail(Errc::format, "WAV: missing fmt chunk");
    if (format != 1)
        fail(Errc::format, std::string("WAV: unsupported encoding \"") + wav_format_name(format) +
                               "\" (only PCM)");
    if (bits != 16 && bits != 24)
        fail(Errc::format, "WAV: unsupported bit depth " + std::to_string(bits) + " (only 16/24)");
    if (channels == 0 || channels > 2) fail(Errc::format, "WAV: unsupported channel count");
    if (data.empty()) fail(Errc::format, "WAV: missing or empty data chunk");

    int bytes = bits / 8;
    std::size_t frames = data.size() / std::size_t(bytes * channels);
    if (frames == 0) fail(Errc::format, "WAV: empty audio");
    Waveform w;
    w.sample_rate = int(rate);
    w.samples.resize(frames);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
    double scale = (bits == 16) ? 1.0 / 32768.0 : 1.0 / 8388608.0;
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0;
        for (int c = 0; c < channels; ++c) {
            const unsigned char* s = p + (f * channels + std::size_t(c)) * std::size_t(bytes);
            std::int32_t v;
            if (bits == 16) {
                v = std::int16_t(s[0] | (s[1] << 8));
            } else {
                v = std::int32_t((s[0] << 8 | s[1] << 16 | std::uint32_t(s[2]) << 24)) >> 8;
            }
            acc += double(v) * scale;
        }
        w.samples[f] = acc / channels;
    }
    return w;
}

Waveform read_wav_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io, "cannot open WAV file: " + path);
    return read_wav(in);
}

void write_wav16_file(const std::string& path, const Waveform& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::io, "cannot write WAV file: " + path);
    std::uint32_t data_size = std::uint32_t(w.samples.size() * 2);
    out.write("RIFF", 4);
    binio::write_le<std::uint32_t>(out, 36 + data_size);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    binio::write_le<std::uint32_t>(out, 16);
    binio::write_le<std::uint16_t>(out, 1);  // PCM
    binio::write_le<std::uint16_t>(out, 1);  // mono
    binio::write_le<std::uint32_t>(out, std::uint32_t(w.sample_rate));
    binio::write_le<std::uint32_t>(out, std::uint32_t(w.sample_rate * 2));
    binio::write_le<std::uint16_t>(out, 2);
    binio::write_le<std::uint16_t>(out, 16);
    out.write("data", 4);
    binio::write_le<std::uint32_t>(out, data_size);
    for (double s : w.samples) {
        double clamped = std::max(-1.0, std::min(1.0, s));
        auto v = std::int16_t(std::lround(clamped * 32767.0));
        binio::write_le<std::int16_t>(out, v);
    }
}

void fft_inplace(std::vector<std::complex<double>>& a) {
    std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) fail(Errc::shape, "FFT size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * kPi / double(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

namespace {

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) w[std::size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (n - 1));
    return w;
}

// Centered frame extraction: frame f covers samples
// [f*hop - window/2, f*hop + window/2), zeros outside the signal.
int frame_count_for(std::size_t samples, int hop) { return 1 + int(samples / std::size_t(hop)); }

void windowed_frame(const Waveform& w, int frame, int window, int hop,
                    const std::vector<double>& hann, std::vector<double>& out) {
    int start = frame * hop - window / 2;
    for (int i = 0; i < window; ++i) {
        int n = start + i;
        double s = (n >= 0 && n < int(w.samples.size())) ? w.samples[std::size_t(n)] : 0.0;
        out[std::size_t(i)] = s * hann[std::size_t(i)];
    }
}

}  // namespace

Spectrogram stft(const Waveform& w, double window_ms, double hop_ms) {
    if (w.samples.empty()) fail(Errc::shape, "stft: empty waveform");
    AudioConfig cfg;
    cfg.window_ms = window_ms;
    cfg.hop_ms = hop_ms;
    int window = cfg.window_samples(w.sample_rate);
    int hop = cfg.hop_samples(w.sample_rate);
    if (window < 2 || hop < 1) fail(Errc::config, "stft: window/hop too small");
    int nfft = next_pow2(window);
    int bins = nfft / 2 + 1;
    int frames = frame_count_for(w.samples.size(), hop);
    auto hann = hann_window(window);

    Spectrogram spec;
    spec.magnitude = FeatureMatrix(frames, bins);
    spec.frame_rate = double(w.sample_rate) / hop;
    spec.fft_size = nfft;

    std::vector<double> buf(static_cast<std::size_t>(window));
    std::vector<std::complex<double>> fftbuf(static_cast<std::size_t>(nfft));
    for (int f = 0; f < frames; ++f) {
        windowed_frame(w, f, window, hop, hann, buf);
        for (int i = 0; i < nfft; ++i)
            fftbuf[std::size_t(i)] = (i < window) ? std::complex<double>(buf[std::size_t(i)], 0.0)
                                                  : std::complex<double>(0.0, 0.0);
        fft_inplace(fftbuf);
        double* row = spec.magnitude.row(f);
        for (int b = 0; b < bins; ++b) row[b] = std::abs(fftbuf[std::size_t(b)]);
    }
    return spec;
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

FeatureMatrix mel_filterbank(int channels, int fft_size, int sample_rate, double fmin, double fmax) {
    if (channels < 1) fail(Errc::config, "mel filterbank needs at least one channel");
    int bins = fft_size / 2 + 1;
    FeatureMatrix fb(channels, bins);
    double mel_lo = hz_to_mel(fmin);
    double mel_hi = hz_to_mel(fmax);
    std::vector<double> edges(std::size_t(channels) + 2);
    for (int i = 0; i < channels + 2; ++i)
        edges[std::size_t(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (channels + 1));
    for (int m = 0; m < channels; ++m) {
        double f0 = edges[std::size_t(m)], f1 = edges[std::size_t(m + 1)], f2 = edges[std::size_t(m + 2)];
        for (int b = 0; b < bins; ++b) {
            double f = double(b) * sample_rate / fft_size;
            double v = 0.0;
            if (f > f0 && f < f1)
                v = (f - f0) / (f1 - f0);
            else if (f >= f1 && f < f2)
                v = (f2 - f) / (f2 - f1);
            fb.at(m, b) = v;
        }
    }
    return fb;
}

FeatureMatrix mel_project(const Spectrogram& spec, int channels, int sample_rate, double fmin,
                          double fmax) {
    FeatureMatrix fb = mel_filterbank(channels, spec.fft_size, sample_rate, fmin, fmax);
    FeatureMatrix out(spec.magnitude.rows, channels);
    for (int f = 0; f < spec.magnitude.rows; ++f) {
        const double* src = spec.magnitude.row(f);
        double* dst = out.row(f);
        for (int m = 0; m < channels; ++m) {
            const double* w = fb.row(m);
            double acc = 0.0;
            for (int b = 0; b < spec.magnitude.cols; ++b) acc += w[b] * src[b];
            dst[m] = acc;
        }
    }
    return out;
}

void log_amplitude(FeatureMatrix& m, double eps) {
    for (auto& v : m.data) v = std::log(std::max(v, eps));
}

std::vector<double> frame_energy(const Waveform& w, double window_ms, double hop_ms, double eps) {
    if (w.samples.empty()) fail(Errc::shape, "frame_energy: empty waveform");
    AudioConfig cfg;
    cfg.window_ms = window_ms;
    cfg.hop_ms = hop_ms;
    int window = cfg.window_samples(w.sample_rate);
    int hop = cfg.hop_samples(w.sample_rate);
    int frames = frame_count_for(w.samples.size(), hop);
    auto hann = hann_window(window);
    std::vector<double> energy(static_cast<std::size_t>(frames));
    std::vector<double> buf(static_cast<std::size_t>(window));
    for (int f = 0; f < frames; ++f) {
        windowed_frame(w, f, window, hop, hann, buf);
        double acc = 0.0;
        for (double s : buf) acc += s * s;
        energy[std::size_t(f)] = std::log(std::max(acc, eps));
    }
    return energy;
}

FeatureMatrix resample_features(const FeatureMatrix& m, double src_rate, double dst_rate) {
    if (m.rows == 0) fail(Errc::shape, "resample_features: empty input");
    if (src_rate <= 0 || dst_rate <= 0) fail(Errc::config, "resample_features: rates must be positive");
    double duration = double(m.rows - 1) / src_rate;
    int out_rows = int(std::floor(duration * dst_rate)) + 1;
    FeatureMatrix out(out_rows, m.cols);
    for (int r = 0; r < out_rows; ++r) {
        double srcpos = double(r) / dst_rate * src_rate;
        int lo = int(srcpos);
        double frac = srcpos - lo;
        if (lo >= m.rows - 1) {
            lo = m.rows - 1;
            frac = 0.0;
        }
        const double* a = m.row(lo);
        double* dst = out.row(r);
        if (frac == 0.0) {
            std::copy_n(a, m.cols, dst);
        } else {
            const double* b = m.row(lo + 1);
            for (int c = 0; c < m.cols; ++c) dst[c] = a[c] + (b[c] - a[c]) * frac;
        }
    }
    return out;
}

FeatureMatrix scale_feature_rows(const FeatureMatrix& m, int new_rows) {
    if (m.rows < 1 || new_rows < 1) fail(Errc::shape, "scale_feature_rows: empty input or output");
    FeatureMatrix out(new_rows, m.cols);
    for (int r = 0; r < new_rows; ++r) {
        double srcpos = (new_rows == 1) ? 0.0 : double(r) * double(m.rows - 1) / double(new_rows - 1);
        int lo = int(srcpos);
        double frac = srcpos - lo;
        if (lo >= m.rows - 1) {
            lo = m.rows - 1;
            frac = 0.0;
        }
        const double* a = m.row(lo);
        double* dst = out.row(r);
        if (frac == 0.0) {
            std::copy_n(a, m.cols, dst);
        } else {
            const double* b = m.row(lo + 1);
            for (int c = 0; c < m.cols; ++c) dst[c] = a[c] + (b[c] - a[c]) * frac;
        }
    }
    return out;
}

FeatureMatrix speech_features(const Waveform& w, const AudioConfig& cfg) {
    Spectrogram spec = stft(w, cfg.window_ms, cfg.hop_ms);
    FeatureMatrix mel = mel_project(spec, cfg.mel_channels, w.sample_rate, cfg.fmin, cfg.fmax);
    log_amplitude(mel, cfg.log_floor);
    std::vector<double> energy = frame_energy(w, cfg.window_ms, cfg.hop_ms, cfg.log_floor);

    FeatureMatrix native(mel.rows, cfg.mel_channels + 1);
    for (int f = 0; f < mel.rows; ++f) {
        std::copy_n(mel.row(f), cfg.mel_channels, native.row(f));
        native.at(f, cfg.mel_channels) = energy[std::size_t(f)];
    }
    return resample_features(native, spec.frame_rate, cfg.target_fps);
}

}  // namespace zeggs::audio
