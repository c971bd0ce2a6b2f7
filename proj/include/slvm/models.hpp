#pragma once

#include <memory>
#include <string>
#include <vector>

#include "slvm/audio.hpp"
#include "slvm/dists.hpp"
#include "slvm/nn.hpp"
#include "slvm/numcore.hpp"
#include "slvm/optim.hpp"

namespace slvm {
namespace models {

enum class Kind { lstm, wavenet, vrnn, srnn, stcn, cwvae };

std::string to_string(Kind k);
Kind kind_from_string(const std::string& s);

struct Config {
    Kind kind = Kind::lstm;
    int stack = 1;  // frames per model step (s); cwvae keeps stack 1 and strides instead
    dists::OutputSpec output;

    long dz = 32;  // latent width
    long dd = 64;  // recurrent state width
    long dc = 32;  // conv channels
    long mlp_hidden = 64;

    int layers = 1;                 // latent layers (stcn: 1 or 5; cwvae: >= 1)
    long stride_base = 64;          // cwvae s_1 in frames
    long stride_factor = 8;         // cwvae c
    int wn_blocks = 2;              // wavenet model & stcn encoder blocks
    int wn_layers = 6;              // dilated layers per block (dilations 1..2^(n-1))
    int dec_blocks = 1;             // stcn decoder
    int dec_layers = 4;
    std::vector<long> stcn_dims;    // latent dims top-down; defaulted in validate()

    uint64_t init_seed = 1;

    void validate();
    long step_dim() const { return stack; }
};

struct ElboOptions {
    uint64_t noise_seed = 0;
    uint64_t stream = 0;                  // extra key, e.g. sequence index
    bool tie_posterior_to_prior = false;  // test mode: posterior := prior, KL == 0
    long resample_t = -1;                 // redraw noise at this step ...
    int resample_layer = -1;              // ... for this layer (structure tests)
};

// Graph handles for one sequence; recon is the masked sum of log p(x|...)
// in nats (a log-likelihood, not a cost), kls[l] >= 0 per latent layer.
struct ElboParts {
    numcore::Tensor recon;
    std::vector<numcore::Tensor> kls;
    long frames = 0;
    long steps = 0;
};

struct ElboValues {
    double recon = 0.0;           // log-likelihood sum, nats
    std::vector<double> kls;      // per layer, nats
    long frames = 0;

    double kl_total() const {
        double s = 0.0;
        for (double k : kls) s += k;
        return s;
    }
    // positive cost in nats: -(recon - sum kl)
    double nll() const { return -(recon - kl_total()); }
};

ElboValues values_of(const ElboParts& parts);

struct LatentLayerTrajectory {
    long stride_frames = 1;                    // s_l in waveform frames
    std::vector<long> times;                   // 1-based frame time of each update
    std::vector<std::vector<double>> samples;  // one entry per update
    std::vector<std::vector<double>> means;    // posterior means (== samples for deterministic states)
};

struct LatentTrajectory {
    std::vector<LatentLayerTrajectory> layers;  // bottom-up
    long total_frames = 0;
};

class SequenceModel {
public:
    explicit SequenceModel(Config cfg) : cfg_(std::move(cfg)) {}
    virtual ~SequenceModel() = default;

    const Config& config() const { return cfg_; }
    optim::ParamTable& params() { return params_; }
    const optim::ParamTable& params() const { return params_; }

    virtual ElboParts elbo(numcore::Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) = 0;
    virtual std::vector<double> sample(long frames, Rng& rng) = 0;
    virtual LatentTrajectory infer(const audio::StackedSequence& x, const ElboOptions& opt) = 0;

    virtual bool stateful() const = 0;
    virtual int latent_layers() const { return 0; }
    // steps of left context that pin down outputs exactly (stateless models)
    virtual long context_steps() const { return 0; }

    // Exact segmented evaluation: per-frame results must match the
    // unsegmented pass. Stateful models carry state; stateless ones overlap
    // windows by their context and count only fresh steps.
    virtual ElboValues evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                          const ElboOptions& opt);

protected:
    ElboValues run_full(const audio::StackedSequence& x, const ElboOptions& opt);

    Config cfg_;
    optim::ParamTable params_;
};

std::unique_ptr<SequenceModel> make_model(const Config& cfg);

// Flat `key = value` round trip used by checkpoints and resolved run configs.
std::string config_to_text(const Config& cfg);
Config config_from_text(const std::string& text);

// Layer update times T_l = { t in [1, total] : (t-1) mod s_l == 0 },
// s_l = base * factor^(l-1), as 1-based frame times.
std::vector<std::vector<long>> cwvae_schedule(long total_frames, long stride_base, long stride_factor,
                                              int layers);

}  // namespace models
}  // namespace slvm
