#pragma once

#include <functional>
#include <string>
#include <vector>

#include "slvm/base.hpp"
#include "slvm/numcore.hpp"

namespace slvm {
namespace probe {

// ---------------------------------------------------------------------------
// Mel frontend
// ---------------------------------------------------------------------------

struct MelConfig {
    int n_mels = 80;
    long hop = 64;
    long window = 128;  // must be a power of two
    int sample_rate = 16000;
};

// log Mel spectrogram: Hann window, radix-2 FFT, triangular filters spanning
// 0..Nyquist, log(power + 1e-10). Returns [frames][n_mels],
// frames = floor((T - window)/hop) + 1.
std::vector<std::vector<double>> mel_frontend(const std::vector<double>& x, const MelConfig& cfg);
std::vector<double> mel_band_centers_hz(const MelConfig& cfg);

// in-place iterative radix-2 FFT over interleaved re/im pairs
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

// ---------------------------------------------------------------------------
// Label spans and segment averaging
// ---------------------------------------------------------------------------

struct LabelSpan {
    long begin = 0;  // frame clock, [begin, end)
    long end = 0;
    int label = 0;
};

std::vector<LabelSpan> spans_from_labels(const std::vector<int>& labels);

// One stochastic draw of a representation: [T_rep][D]; deterministic
// representations ignore the draw index.
using RepDraw = std::function<std::vector<std::vector<double>>(int)>;

struct SegmentAverages {
    std::vector<std::vector<double>> vectors;
    std::vector<int> labels;
    std::vector<size_t> skipped;  // spans with no overlapping representation steps
};

// Average over n_resample draws, then frame-weighted over each span's
// overlap with the representation grid (step r covers frames
// [times[r], times[r] + stride)).
SegmentAverages segment_average(const RepDraw& draw, int n_resample, const std::vector<LabelSpan>& spans,
                                const std::vector<long>& rep_times, long stride_frames);

// ---------------------------------------------------------------------------
// LDA and KNN
// ---------------------------------------------------------------------------

struct LdaProjection {
    std::vector<std::vector<double>> basis;  // dims rows of length D
    std::vector<double> project(const std::vector<double>& v) const;
};

// Generalized eigen-solution of between/within scatter; within-class scatter
// ridge-regularized by 1e-6 I. dims must be <= classes - 1.
LdaProjection lda_fit(const std::vector<std::vector<double>>& vectors, const std::vector<int>& labels,
                      int dims);

// Leave-one-out accuracy, Euclidean metric, majority vote, ties broken by
// the smallest summed distance.
double knn_loo(const std::vector<std::vector<double>>& vectors, const std::vector<int>& labels, int k);

// ---------------------------------------------------------------------------
// CTC
// ---------------------------------------------------------------------------

// Whether a target fits into T frames (repeats require separating blanks).
bool ctc_feasible(long T, const std::vector<int>& labels);

// -log sum over alignments, forward algorithm in log space over the extended
// label sequence. logits rows are unnormalized scores over C+1 classes with
// the blank at index C. Returns +inf for infeasible targets.
double ctc_loss(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels);

// Graph version used for training; requires a feasible target.
numcore::Tensor ctc_loss_graph(numcore::Tape& tp, const numcore::Tensor& logits,
                               const std::vector<int>& labels);

std::vector<int> ctc_greedy_decode(const std::vector<std::vector<double>>& logits);

long edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp);
// edit distance over reference length; empty references are a contract error
double phone_error_rate(const std::vector<int>& ref, const std::vector<int>& hyp);

// ---------------------------------------------------------------------------
// ASR probe: bidirectional recurrent net trained with CTC
// ---------------------------------------------------------------------------

struct ProbeUtterance {
    std::string id;
    std::vector<std::vector<double>> rep;  // [T_rep][D]
    std::vector<long> rep_times;           // frame clock (1-based), optional bookkeeping
    long stride_frames = 1;
    std::vector<LabelSpan> spans;          // frame clock
    std::vector<int> ref_labels;           // collapsed span classes
};

// Utterances for one epoch; latent-variable sources resample here.
using EpochData = std::function<std::vector<ProbeUtterance>(long epoch)>;

struct AsrConfig {
    int layers = 3;
    long width = 64;       // per direction
    double dropout = 0.3;  // temporal dropout probability
    int classes = 2;       // label alphabet size (blank excluded)
    long epochs = 20;
    double lr = 3e-4;
    uint64_t seed = 0;
};

struct AsrResult {
    double per = 1.0;
    long trained_utterances = 0;
    long skipped_infeasible = 0;
};

// Trains the probe on the provider's utterances and reports PER on the
// held-out set (greedy decoding).
AsrResult asr_probe_train(const EpochData& train_data, const std::vector<ProbeUtterance>& test_data,
                          const AsrConfig& cfg);

// Temporal dropout mask: one draw per (sequence, layer), applied to every
// timestep except the first.
std::vector<double> temporal_dropout_mask(long width, double prob, Rng& rng);

// ---------------------------------------------------------------------------
// Representation dump
// ---------------------------------------------------------------------------

void write_representations(const std::string& bin_path, const std::string& manifest_path,
                           const std::vector<ProbeUtterance>& utterances);
std::vector<ProbeUtterance> read_representations(const std::string& bin_path,
                                                 const std::string& manifest_path);

}  // namespace probe
}  // namespace slvm
