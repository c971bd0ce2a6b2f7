#pragma once

#include <string>
#include <vector>

#include "slvm/audio.hpp"
#include "slvm/models.hpp"
#include "slvm/optim.hpp"

namespace slvm {
namespace train {

struct TrainConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long batch_size = 1;
    long max_steps = 1000;
    long segment_length = 16000;  // subsegment frames for stateless models at stack 1
    uint64_t seed = 0;
    long kl_warmup_steps = 0;     // 0 disables warm-up (factor 1 from the start)
    double clip_norm = 100.0;
    long log_every = 10;
    long val_every = 0;           // 0 disables validation rows
    double stop_bpf = -1.0;       // early exit once train bpf reaches this (< 0 disables)
};

struct StepLog {
    long step = 0;
    std::string split;  // train | val
    double nats = 0.0;  // positive cost over the batch / split
    long frames = 0;
    double bpf = 0.0;
    double recon_bpf = 0.0;
    double kl_bpf_total = 0.0;
    std::vector<double> kl_bpf;  // per layer
};

struct TrainResult {
    std::vector<StepLog> logs;
    long steps_run = 0;
    bool divergence_flagged = false;
    double final_train_bpf = 0.0;
    double best_val_bpf = 0.0;
};

// Standard Adam with bias correction over the model's parameter table.
void adam_step(optim::ParamTable& params, optim::AdamState& state, const TrainConfig& cfg);

// Optimizes the one-sample ELBO. Stateful kinds (lstm, vrnn, srnn, cwvae)
// train on full padded sequences; stateless kinds (wavenet, stcn) train on
// random subsegments at stack 1 and on full lengths otherwise. `start_step`
// resumes a checkpointed run bit-identically.
TrainResult fit(models::SequenceModel& model, const std::vector<audio::EncodedSequence>& train_set,
                const std::vector<audio::EncodedSequence>& val_set, const TrainConfig& cfg,
                optim::AdamState& opt_state, long start_step = 0);

void write_metrics_csv(const std::string& path, const std::vector<StepLog>& logs, int layers);
std::vector<StepLog> read_metrics_csv(const std::string& path);

// Checkpoint: magic SLVM, little-endian sections for config, parameters,
// optimizer moments, step counter and seed. Reload reproduces forward
// results bit for bit.
void save_checkpoint(const std::string& path, const models::SequenceModel& model,
                     const optim::AdamState& opt_state, long step, uint64_t seed);

struct LoadedCheckpoint {
    std::unique_ptr<models::SequenceModel> model;
    optim::AdamState opt_state;
    long step = 0;
    uint64_t seed = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace train
}  // namespace slvm
