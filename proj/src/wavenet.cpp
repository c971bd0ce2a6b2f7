#include "models_impl.hpp"

namespace slvm {
namespace models {

WaveNetModel::WaveNetModel(Config cfg) : SequenceModel(std::move(cfg)) {
    nn::Builder B(params_, cfg_.init_seed);
    const long D = cfg_.step_dim();
    stack_ = nn::make_wavenet_stack(B, "stack", D, cfg_.dc, cfg_.dc, cfg_.wn_blocks, cfg_.wn_layers);
    nn::Builder H = B.scoped("head");
    head1_ = H.conv_weight("w1", cfg_.dc, cfg_.dc, 1);
    head1b_ = H.conv_bias("b1", cfg_.dc);
    head2_ = H.conv_weight("w2", D * cfg_.output.params_per_dim(), cfg_.dc, 1);
    head2b_ = H.conv_bias("b2", D * cfg_.output.params_per_dim());
}

Tensor WaveNetModel::param_rows(Tape& tp, const audio::StackedSequence& x, long begin, long end,
                                std::vector<Tensor>* taps) {
    const long D = cfg_.step_dim();
    const long w0 = std::max(0L, begin - context_steps());
    const long n = end - w0;
    // shifted input: column t carries the previous step's frames
    std::vector<double> in(static_cast<size_t>(D * n), 0.0);
    for (long i = 0; i < n; ++i) {
        const long src = w0 + i - 1;
        if (src < 0) continue;
        for (long d = 0; d < D; ++d) {
            in[static_cast<size_t>(d * n + i)] = x.data[static_cast<size_t>(src * D + d)];
        }
    }
    auto out = stack_.apply(tp, tp.constant({D, n}, std::move(in)));
    if (taps) *taps = out.block_taps;
    Tensor h = tp.tanh(out.skip_sum);
    h = tp.tanh(tp.add(tp.conv1d_causal(h, head1_, 1), tp.expand_last(head1b_, n)));
    Tensor p = tp.add(tp.conv1d_causal(h, head2_, 1), tp.expand_last(head2b_, n));
    return tp.slice(tp.transpose2d(p), 0, begin - w0, end - begin);
}

ElboParts WaveNetModel::run(Tape& tp, const audio::StackedSequence& x, long begin, long end) {
    ElboParts parts;
    Tensor params = param_rows(tp, x, begin, end);
    auto mask = mask_rows(x, begin, end);
    parts.recon = dists::log_prob_graph(tp, cfg_.output, params, value_rows(x, begin, end), mask,
                                        end - begin, cfg_.step_dim());
    parts.frames = count_mask(mask);
    parts.steps = end - begin;
    return parts;
}

ElboParts WaveNetModel::elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& /*opt*/) {
    return run(tp, x, 0, x.steps);
}

ElboValues WaveNetModel::evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                            const ElboOptions& /*opt*/) {
    const long seg_steps = std::max(1L, segment_frames / cfg_.stack);
    ElboValues acc;
    for (long b = 0; b < x.steps; b += seg_steps) {
        Tape tp;
        tp.recording = false;
        auto parts = run(tp, x, b, std::min(x.steps, b + seg_steps));
        acc.recon += parts.recon->scalar();
        acc.frames += parts.frames;
    }
    return acc;
}

std::vector<double> WaveNetModel::sample(long frames, Rng& rng) {
    require(frames >= 1, "sample: frames must be >= 1");
    const long D = cfg_.step_dim();
    const long steps = (frames + D - 1) / D;
    const long ctx = context_steps();
    audio::StackedSequence gen;
    gen.stack = static_cast<int>(D);
    gen.steps = 0;
    gen.total_frames = 0;
    std::vector<double> out;
    for (long t = 0; t < steps; ++t) {
        Tape tp;
        tp.recording = false;
        // re-run the stack over the trailing window; the final column is step t
        const long w0 = std::max(0L, t - ctx);
        audio::StackedSequence win;
        win.stack = static_cast<int>(D);
        win.steps = t - w0 + 1;
        win.total_frames = win.steps * D;
        win.data.assign(static_cast<size_t>(win.steps * D), 0.0);
        for (long u = w0; u < t; ++u)
            for (long d = 0; d < D; ++d)
                win.data[static_cast<size_t>((u - w0) * D + d)] = gen.data[static_cast<size_t>(u * D + d)];
        Tensor params = param_rows(tp, win, win.steps - 1, win.steps);
        auto row = sample_frame_row(cfg_.output, params->value, D, rng);
        gen.data.insert(gen.data.end(), row.begin(), row.end());
        gen.steps += 1;
        gen.total_frames += D;
        out.insert(out.end(), row.begin(), row.end());
    }
    out.resize(static_cast<size_t>(frames));
    return out;
}

LatentTrajectory WaveNetModel::infer(const audio::StackedSequence& x, const ElboOptions& /*opt*/) {
    Tape tp;
    tp.recording = false;
    std::vector<Tensor> taps;
    (void)param_rows(tp, x, 0, x.steps, &taps);
    LatentTrajectory traj;
    traj.total_frames = x.total_frames;
    for (const auto& tap : taps) {
        LatentLayerTrajectory layer;
        layer.stride_frames = cfg_.stack;
        Tape t2;
        t2.recording = false;
        Tensor rows = t2.transpose2d(tap);
        for (long t = 0; t < x.steps; ++t) {
            layer.times.push_back(t * cfg_.stack + 1);
            std::vector<double> v(rows->value.begin() + t * cfg_.dc,
                                  rows->value.begin() + (t + 1) * cfg_.dc);
            layer.samples.push_back(v);
            layer.means.push_back(std::move(v));
        }
        traj.layers.push_back(std::move(layer));
    }
    return traj;
}

}  // namespace models
}  // namespace slvm
