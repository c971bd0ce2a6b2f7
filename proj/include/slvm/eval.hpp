#pragma once

#include <string>
#include <vector>

#include "slvm/audio.hpp"
#include "slvm/models.hpp"

namespace slvm {
namespace eval {

struct ExampleMetrics {
    std::string id;
    long frames = 0;
    double nll_nats = 0.0;    // positive cost
    double recon_nats = 0.0;  // positive cost
    std::vector<double> kl_nats;
};

// Frame-weighted accounting: the aggregate bpf divides the summed nats by the
// summed frames, never averaging per-example bpf values.
struct MetricsRecord {
    std::vector<ExampleMetrics> examples;

    long total_frames() const;
    double total_nats() const;
    double bpf() const;
    double recon_bpf() const;
    double kl_bpf_total() const;
};

// (total_nats / ln 2) / total_frames; nats carry the positive-cost convention.
double to_bpf(double total_nats, long total_frames);

struct EvalConfig {
    long segment_frames = 0;  // 0 = single pass over each full sequence
    uint64_t seed = 0;
    int threads = 1;          // capped by SLVM_THREADS
};

MetricsRecord evaluate(models::SequenceModel& model, const std::vector<audio::EncodedSequence>& data,
                       const EvalConfig& cfg);

void write_per_example_csv(const std::string& path, const MetricsRecord& record);
MetricsRecord read_per_example_csv(const std::string& path);

// Table rows shaped like the benchmark summary: s, model, config, bpf
struct ReportRow {
    std::string s;
    std::string model;
    std::string config;
    double bpf = 0.0;
    std::string source;  // computed | constant:<tag>
};
void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_report_csv(const std::string& path);

int worker_count(int requested);  // applies the SLVM_THREADS cap

}  // namespace eval
}  // namespace slvm
