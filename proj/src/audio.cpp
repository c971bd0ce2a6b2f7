#include "slvm/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace slvm {
namespace audio {

std::vector<double> StackedSequence::frame_mask() const {
    std::vector<double> m(data.size(), 0.0);
    for (long t = 0; t < steps; ++t) {
        for (int d = 0; d < stack; ++d) {
            long frame = t * stack + d;
            if (frame < total_frames) m[static_cast<size_t>(t * stack + d)] = 1.0;
        }
    }
    return m;
}

double grid_gap(int bit_depth) {
    require(bit_depth >= 1 && bit_depth <= 32, "bit depth out of range");
    return std::ldexp(1.0, 1 - bit_depth);
}

double mulaw_encode(double x, int mu) {
    require(std::abs(x) <= 1.0, "mulaw_encode: |x| must be <= 1");
    const double m = static_cast<double>(mu);
    const double y = std::log1p(m * std::abs(x)) / std::log1p(m);
    return std::copysign(y, x);
}

double mulaw_decode(double y, int mu) {
    require(std::abs(y) <= 1.0, "mulaw_decode: |y| must be <= 1");
    const double m = static_cast<double>(mu);
    const double x = (std::exp(std::abs(y) * std::log1p(m)) - 1.0) / m;
    return std::copysign(x, y);
}

std::vector<double> mulaw_encode(const std::vector<double>& x, int mu) {
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = mulaw_encode(x[i], mu);
    return y;
}

double quantize(double x, int bit_depth) {
    require(std::abs(x) <= 1.0, "quantize: |x| must be <= 1");
    const double gap = grid_gap(bit_depth);
    const long kmax = (1L << bit_depth) - 1;
    // round half to even
    double k = std::nearbyint((x + 1.0) / gap);
    k = std::min(std::max(k, 0.0), static_cast<double>(kmax));
    return -1.0 + k * gap;
}

long grid_index(double x, int bit_depth) {
    const double gap = grid_gap(bit_depth);
    const long kmax = (1L << bit_depth) - 1;
    const double kd = (x + 1.0) / gap;
    const long k = static_cast<long>(std::llround(kd));
    require(k >= 0 && k <= kmax && std::abs(kd - static_cast<double>(k)) < 1e-6,
            "value is not on the amplitude grid");
    return k;
}

StackedSequence stack(const EncodedSequence& seq, int s) {
    require(s >= 1, "stack size must be >= 1");
    StackedSequence st;
    st.id = seq.id;
    st.stack = s;
    st.total_frames = seq.frames();
    st.steps = (seq.frames() + s - 1) / s;
    st.data.assign(static_cast<size_t>(st.steps * s), 0.0);
    std::copy(seq.values.begin(), seq.values.end(), st.data.begin());
    return st;
}

std::vector<double> unstack(const StackedSequence& st) {
    return std::vector<double>(st.data.begin(), st.data.begin() + st.total_frames);
}

std::vector<EncodedSequence> synth_dataset(const SynthSpec& spec) {
    require(!spec.regimes.empty(), "synth_dataset: spec must name at least one regime");
    require(spec.count >= 1 && spec.min_frames >= 1 && spec.max_frames >= spec.min_frames,
            "synth_dataset: bad count or length range");
    Rng base(spec.seed);
    std::vector<EncodedSequence> out;
    out.reserve(static_cast<size_t>(spec.count));
    const double two_pi = 6.283185307179586;
    for (int i = 0; i < spec.count; ++i) {
        Rng rs = base.derive(0x5e9, static_cast<uint64_t>(i));
        EncodedSequence seq;
        std::ostringstream id;
        id << "synth" << std::setw(4) << std::setfill('0') << i;
        seq.id = id.str();
        seq.bit_depth = spec.bit_depth;
        seq.sample_rate = spec.sample_rate;
        seq.encoding = spec.mu_law ? EncodedSequence::Encoding::mu_law : EncodedSequence::Encoding::linear;
        const long T = spec.min_frames + rs.uniform_int(spec.max_frames - spec.min_frames + 1);
        seq.values.resize(static_cast<size_t>(T));
        seq.labels.resize(static_cast<size_t>(T));
        const long period = spec.regime_frames > 0 ? spec.regime_frames : T;
        long t = 0;
        long block = 0;
        while (t < T) {
            Rng rb = rs.derive(1, static_cast<uint64_t>(block));
            const int reg = static_cast<int>(rb.uniform_int(static_cast<long>(spec.regimes.size())));
            const auto& R = spec.regimes[static_cast<size_t>(reg)];
            std::vector<double> phases(R.freqs_hz.size());
            for (auto& p : phases) p = rb.uniform() * two_pi;
            const long end = std::min(T, t + period);
            for (; t < end; ++t) {
                double v = 0.0;
                for (size_t f = 0; f < R.freqs_hz.size(); ++f) {
                    v += R.amps[f] * std::sin(two_pi * R.freqs_hz[f] * static_cast<double>(t) /
                                                  static_cast<double>(spec.sample_rate) +
                                              phases[f]);
                }
                if (spec.noise_amp > 0.0) v += spec.noise_amp * rb.normal();
                v = std::min(1.0, std::max(-1.0, v));
                if (spec.mu_law) v = mulaw_encode(v);
                seq.values[static_cast<size_t>(t)] = quantize(v, spec.bit_depth);
                seq.labels[static_cast<size_t>(t)] = reg;
            }
            ++block;
        }
        out.push_back(std::move(seq));
    }
    return out;
}

std::vector<Batch> make_batches(const std::vector<EncodedSequence>& seqs, long batch_size) {
    require(batch_size >= 1, "make_batches: batch_size must be >= 1");
    std::vector<long> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](long a, long b) { return seqs[static_cast<size_t>(a)].frames() < seqs[static_cast<size_t>(b)].frames(); });
    std::vector<Batch> batches;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
        Batch b;
        for (size_t j = i; j < std::min(order.size(), i + static_cast<size_t>(batch_size)); ++j) {
            b.members.push_back(order[j]);
            b.max_frames = std::max(b.max_frames, seqs[static_cast<size_t>(order[j])].frames());
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

namespace {

uint32_t read_u32le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16le(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(static_cast<uint16_t>(b[0]) | (static_cast<uint16_t>(b[1]) << 8));
}

void write_u32le(std::ostream& out, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void write_u16le(std::ostream& out, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
}

}  // namespace

EncodedSequence read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "read_wav: cannot open " + path);
    char tag[5] = {0};
    in.read(tag, 4);
    require(std::strncmp(tag, "RIFF", 4) == 0, "read_wav: missing RIFF chunk id in " + path);
    read_u32le(in);  // riff size
    in.read(tag, 4);
    require(std::strncmp(tag, "WAVE", 4) == 0, "read_wav: RIFF form type is not WAVE in " + path);

    bool have_fmt = false;
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    EncodedSequence seq;
    while (in.read(tag, 4)) {
        uint32_t size = read_u32le(in);
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            format = read_u16le(in);
            channels = read_u16le(in);
            sample_rate = read_u32le(in);
            read_u32le(in);  // byte rate
            read_u16le(in);  // block align
            bits = read_u16le(in);
            if (size > 16) in.seekg(size - 16, std::ios::cur);
            require(format == 1, "read_wav: format tag is " + std::to_string(format) + ", want 1 (PCM)");
            require(channels == 1, "read_wav: channel count is " + std::to_string(channels) + ", want mono");
            require(bits == 16, "read_wav: bits per sample is " + std::to_string(bits) + ", want 16");
            have_fmt = true;
        } else if (std::strncmp(tag, "data", 4) == 0) {
            require(have_fmt, "read_wav: data chunk precedes fmt chunk");
            const uint32_t n = size / 2;
            seq.values.resize(n);
            for (uint32_t i = 0; i < n; ++i) {
                const uint16_t u = read_u16le(in);
                const int16_t s = static_cast<int16_t>(u);
                seq.values[i] = static_cast<double>(s) / 32768.0;
            }
            if (size % 2) in.seekg(1, std::ios::cur);
            seq.sample_rate = static_cast<int>(sample_rate);
            seq.bit_depth = 16;
            seq.encoding = EncodedSequence::Encoding::linear;
            return seq;
        } else {
            in.seekg(size + (size % 2), std::ios::cur);
        }
    }
    throw contract_error("read_wav: no data chunk found in " + path);
}

void write_wav(const std::string& path, const std::vector<double>& values, int sample_rate) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_wav: cannot open " + path);
    const uint32_t data_bytes = static_cast<uint32_t>(values.size() * 2);
    out.write("RIFF", 4);
    write_u32le(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32le(out, 16);
    write_u16le(out, 1);
    write_u16le(out, 1);
    write_u32le(out, static_cast<uint32_t>(sample_rate));
    write_u32le(out, static_cast<uint32_t>(sample_rate * 2));
    write_u16le(out, 2);
    write_u16le(out, 16);
    out.write("data", 4);
    write_u32le(out, data_bytes);
    for (double v : values) {
        double s = std::min(1.0 - 1.0 / 32768.0, std::max(-1.0, v)) * 32768.0;
        write_u16le(out, static_cast<uint16_t>(static_cast<int16_t>(std::lrint(s))));
    }
}

void write_manifest(const std::string& path, const std::vector<EncodedSequence>& seqs) {
    std::ofstream out(path);
    require(out.good(), "write_manifest: cannot open " + path);
    for (const auto& s : seqs) {
        out << s.id << "\t" << s.frames() << "\t";
        if (s.labels.empty()) {
            out << "-";
        } else {
            long start = 0;
            bool first = true;
            for (long t = 1; t <= s.frames(); ++t) {
                if (t == s.frames() || s.labels[static_cast<size_t>(t)] != s.labels[static_cast<size_t>(start)]) {
                    if (!first) out << ";";
                    out << start << ":" << t << ":" << s.labels[static_cast<size_t>(start)];
                    first = false;
                    start = t;
                }
            }
        }
        out << "\n";
    }
}

}  // namespace audio
}  // namespace slvm
