#pragma once

// Internal model classes and helpers shared by the per-model translation units.

#include "slvm/models.hpp"

namespace slvm {
namespace models {

using numcore::Tape;
using numcore::Tensor;

// Posterior noise for one latent draw, keyed so that a given (stream, step,
// layer) always sees the same values regardless of evaluation order or
// segmentation. resample_t/resample_layer switch one draw to a second stream.
std::vector<double> latent_noise(const ElboOptions& opt, long t_global, int layer, long n);

// Row t of a stacked sequence as plain values.
std::vector<double> step_row(const audio::StackedSequence& x, long t);
// Frame mask for rows [begin, end), flattened [n, stack].
std::vector<double> mask_rows(const audio::StackedSequence& x, long begin, long end);
// Values for rows [begin, end), flattened.
std::vector<double> value_rows(const audio::StackedSequence& x, long begin, long end);
long count_mask(const std::vector<double>& mask);
// 1.0 for steps containing at least one real frame.
double step_alive(const audio::StackedSequence& x, long t);
// Frame values / mask over [frame_begin, frame_begin + n), zero past the end.
std::vector<double> padded_frames(const audio::StackedSequence& x, long frame_begin, long n);
std::vector<double> padded_frame_mask(const audio::StackedSequence& x, long frame_begin, long n);
// Draw every dimension of one output step.
std::vector<double> sample_frame_row(const dists::OutputSpec& spec, const std::vector<double>& row,
                                     long dim, Rng& rng);

class LstmModel : public SequenceModel {
public:
    explicit LstmModel(Config cfg);
    ElboParts elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) override;
    std::vector<double> sample(long frames, Rng& rng) override;
    LatentTrajectory infer(const audio::StackedSequence& x, const ElboOptions& opt) override;
    bool stateful() const override { return true; }
    ElboValues evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                  const ElboOptions& opt) override;

private:
    struct State {
        Tensor h, c;
        std::vector<double> prev_row;
    };
    State initial_state(Tape& tp) const;
    ElboParts run(Tape& tp, const audio::StackedSequence& x, long begin, long end, State& st,
                  const ElboOptions& opt, std::vector<Tensor>* hidden_out = nullptr);

    nn::Mlp enc_;
    nn::LstmCell cell_;
    nn::Mlp dec_;
};

class WaveNetModel : public SequenceModel {
public:
    explicit WaveNetModel(Config cfg);
    ElboParts elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) override;
    std::vector<double> sample(long frames, Rng& rng) override;
    LatentTrajectory infer(const audio::StackedSequence& x, const ElboOptions& opt) override;
    bool stateful() const override { return false; }
    long context_steps() const override { return stack_.receptive_field() + 1; }
    ElboValues evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                  const ElboOptions& opt) override;

private:
    // params rows for steps [begin, end) given full x (global shift by one step)
    Tensor param_rows(Tape& tp, const audio::StackedSequence& x, long begin, long end,
                      std::vector<Tensor>* taps = nullptr);
    ElboParts run(Tape& tp, const audio::StackedSequence& x, long begin, long end);

    nn::WaveNetStack stack_;
    Tensor head1_, head1b_, head2_, head2b_;
};

class VrnnModel : public SequenceModel {
public:
    explicit VrnnModel(Config cfg);
    ElboParts elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) override;
    std::vector<double> sample(long frames, Rng& rng) override;
    LatentTrajectory infer(const audio::StackedSequence& x, const ElboOptions& opt) override;
    bool stateful() const override { return true; }
    int latent_layers() const override { return 1; }
    ElboValues evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                  const ElboOptions& opt) override;
    // posterior/prior parameter probes used by the structure tests
    std::vector<std::vector<double>> prior_means(const audio::StackedSequence& x, const ElboOptions& opt);

private:
    struct State {
        Tensor d;
        Tensor prev_z;
        std::vector<double> prev_row;
    };
    State initial_state(Tape& tp) const;
    ElboParts run(Tape& tp, const audio::StackedSequence& x, long begin, long end, State& st,
                  const ElboOptions& opt, LatentTrajectory* traj = nullptr,
                  std::vector<std::vector<double>>* prior_mean_out = nullptr);

    nn::GruCell gru_;
    nn::GaussianHead prior_, post_;
    nn::Mlp dec_;
};

class SrnnModel : public SequenceModel {
public:
    explicit SrnnModel(Config cfg);
    ElboParts elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) override;
    std::vector<double> sample(long frames, Rng& rng) override;
    LatentTrajectory infer(const audio::StackedSequence& x, const ElboOptions& opt) override;
    bool stateful() const override { return true; }
    int latent_layers() const override { return 1; }
    ElboValues evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                  const ElboOptions& opt) override;
    // parameter probes for the smoothing/filtering structure tests
    std::vector<std::vector<double>> posterior_means(const audio::StackedSequence& x, const ElboOptions& opt);
    std::vector<std::vector<double>> prior_means(const audio::StackedSequence& x, const ElboOptions& opt);

private:
    // forward deterministic states for rows [begin, end) starting from d;
    // returns the states and leaves d at the post-range value
    std::vector<Tensor> forward_states(Tape& tp, const audio::StackedSequence& x, long begin, long end,
                                       Tensor& d, const std::vector<double>& first_prev_row) const;
    std::vector<Tensor> backward_states(Tape& tp, const audio::StackedSequence& x, long begin, long end,
                                        const std::vector<Tensor>& d_states, Tensor& a) const;
    ElboParts assemble(Tape& tp, const audio::StackedSequence& x, long begin, long end,
                       const std::vector<Tensor>& d_states, const std::vector<Tensor>& a_states,
                       Tensor& prev_z, const ElboOptions& opt, LatentTrajectory* traj,
                       std::vector<std::vector<double>>* post_means,
                       std::vector<std::vector<double>>* prior_means);

    nn::GruCell fwd_, bwd_;
    nn::GaussianHead prior_, post_;
    nn::Mlp dec_;
};

class StcnModel : public SequenceModel {
public:
    explicit StcnModel(Config cfg);
    ElboParts elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) override;
    std::vector<double> sample(long frames, Rng& rng) override;
    LatentTrajectory infer(const audio::StackedSequence& x, const ElboOptions& opt) override;
    bool stateful() const override { return false; }
    int latent_layers() const override { return cfg_.layers; }
    long context_steps() const override {
        return enc_.receptive_field() + dec_.receptive_field() + 1;
    }
    ElboValues evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                  const ElboOptions& opt) override;
    std::vector<std::vector<double>> prior_means_top(const audio::StackedSequence& x, const ElboOptions& opt);
    std::vector<std::vector<double>> posterior_means_top(const audio::StackedSequence& x,
                                                         const ElboOptions& opt);

private:
    // dims_[l] for l = 0 (bottom, widest) .. L-1 (top)
    std::vector<long> dims_;
    ElboParts run(Tape& tp, const audio::StackedSequence& x, long begin, long end,
                  LatentTrajectory* traj, std::vector<std::vector<double>>* top_prior,
                  std::vector<std::vector<double>>* top_post, const ElboOptions& opt);

    nn::WaveNetStack enc_;
    nn::WaveNetStack dec_;
    std::vector<nn::GaussianHead> priors_, posts_;  // bottom-up
    Tensor head1_, head1b_, head2_, head2b_;
};

class CwvaeModel : public SequenceModel {
public:
    explicit CwvaeModel(Config cfg);
    ElboParts elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) override;
    std::vector<double> sample(long frames, Rng& rng) override;
    LatentTrajectory infer(const audio::StackedSequence& x, const ElboOptions& opt) override;
    bool stateful() const override { return true; }
    int latent_layers() const override { return cfg_.layers; }
    ElboValues evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                  const ElboOptions& opt) override;
    // decode given latent rows (used by the posterior-mean reconstruction probe
    // and the no-encoder sampling test)
    std::vector<std::vector<double>> decode_params(const std::vector<std::vector<double>>& z1_rows);

private:
    struct LayerState {
        Tensor z, d;
    };
    struct State {
        std::vector<LayerState> layers;  // bottom-up
        long k_offset = 0;               // global latent step index of the next step
    };
    State initial_state(Tape& tp) const;
    // one segment: latent steps [k0, k0+K) with encoder embeddings provided
    ElboParts run(Tape& tp, const audio::StackedSequence& x, long frame_begin, long frame_end, State& st,
                  const ElboOptions& opt, LatentTrajectory* traj);

    long s1_ = 1, c_ = 2;
    nn::StridedChain enc1_;
    std::vector<nn::StridedChain> enc_up_;  // chains from layer l to l+1
    std::vector<nn::GruCell> cells_;
    std::vector<nn::GaussianHead> priors_, posts_;
    nn::TransposedChain dec_;
    Tensor head_w_, head_b_;
};

}  // namespace models
}  // namespace slvm
