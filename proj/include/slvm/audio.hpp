#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slvm/base.hpp"

namespace slvm {
namespace audio {

// Variable-length waveform with values on the b-bit amplitude grid
// { -1 + k * 2^(1-b) : k = 0 .. 2^b - 1 }.
struct EncodedSequence {
    std::string id;
    std::vector<double> values;        // in [-1, 1)
    int bit_depth = 16;
    enum class Encoding { linear, mu_law } encoding = Encoding::linear;
    int sample_rate = 16000;
    std::vector<int> labels;           // optional, per frame; empty if absent

    long frames() const { return static_cast<long>(values.size()); }
};

// Frames grouped s at a time into model steps; the final step is zero-padded
// on the right and total_frames keeps the true length for bpf accounting.
struct StackedSequence {
    std::string id;
    std::vector<double> data;  // row-major [steps, stack]
    long steps = 0;
    int stack = 1;
    long total_frames = 0;

    // 1 for real frames, 0 for pad, laid out like data
    std::vector<double> frame_mask() const;
};

double grid_gap(int bit_depth);                 // 2^(1-b)
double mulaw_encode(double x, int mu = 255);
double mulaw_decode(double y, int mu = 255);
double quantize(double x, int bit_depth);       // round half to even onto the grid
long grid_index(double x, int bit_depth);       // exact grid membership check; throws if off-grid
std::vector<double> mulaw_encode(const std::vector<double>& x, int mu = 255);

StackedSequence stack(const EncodedSequence& seq, int s);
std::vector<double> unstack(const StackedSequence& st);

// One sinusoid-mixture regime of a synthetic corpus.
struct SynthRegime {
    std::vector<double> freqs_hz;
    std::vector<double> amps;
};

struct SynthSpec {
    int count = 4;
    long min_frames = 1000;
    long max_frames = 2000;
    int sample_rate = 16000;
    int bit_depth = 16;
    bool mu_law = true;
    double noise_amp = 0.0;
    std::vector<SynthRegime> regimes;   // labels mark the active regime
    long regime_frames = 512;           // switch period; 0 = one regime for the whole clip
    uint64_t seed = 0;
};

std::vector<EncodedSequence> synth_dataset(const SynthSpec& spec);

struct Batch {
    std::vector<long> members;          // indices into the dataset
    long max_frames = 0;
};

// Length-bucketed batches: sequences sorted by length, adjacent ones grouped.
// Every sequence appears exactly once.
std::vector<Batch> make_batches(const std::vector<EncodedSequence>& seqs, long batch_size);

// RIFF/WAVE, PCM 16-bit mono only; anything else is rejected with a
// diagnostic naming the offending header field.
EncodedSequence read_wav(const std::string& path);
void write_wav(const std::string& path, const std::vector<double>& values, int sample_rate);

// Manifest: one record per line, `id<TAB>length<TAB>label_spec` where
// label_spec is `start:end:class` spans joined by ';' or '-' when unlabeled.
void write_manifest(const std::string& path, const std::vector<EncodedSequence>& seqs);

}  // namespace audio
}  // namespace slvm
