#include "models_impl.hpp"

namespace slvm {
namespace models {

LstmModel::LstmModel(Config cfg) : SequenceModel(std::move(cfg)) {
    nn::Builder B(params_, cfg_.init_seed);
    const long D = cfg_.step_dim();
    enc_ = nn::make_mlp(B, "enc", D, cfg_.mlp_hidden, cfg_.dd);
    cell_ = nn::make_lstm(B, "cell", cfg_.dd, cfg_.dd);
    dec_ = nn::make_mlp(B, "dec", cfg_.dd, cfg_.mlp_hidden, D * cfg_.output.params_per_dim());
}

LstmModel::State LstmModel::initial_state(Tape& tp) const {
    State st;
    st.h = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    st.c = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    st.prev_row.assign(static_cast<size_t>(cfg_.step_dim()), 0.0);
    return st;
}

ElboParts LstmModel::run(Tape& tp, const audio::StackedSequence& x, long begin, long end, State& st,
                         const ElboOptions& /*opt*/, std::vector<Tensor>* hidden_out) {
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(end - begin));
    for (long t = begin; t < end; ++t) {
        Tensor in = tp.constant({1, cfg_.step_dim()}, st.prev_row);
        auto [h, c] = cell_.step(tp, enc_.apply(tp, in), st.h, st.c);
        st.h = h;
        st.c = c;
        rows.push_back(dec_.apply(tp, h));
        if (hidden_out) hidden_out->push_back(h);
        st.prev_row = step_row(x, t);
    }
    ElboParts parts;
    Tensor params = tp.concat(rows, 0);
    auto mask = mask_rows(x, begin, end);
    parts.recon = dists::log_prob_graph(tp, cfg_.output, params, value_rows(x, begin, end), mask,
                                        end - begin, cfg_.step_dim());
    parts.frames = count_mask(mask);
    parts.steps = end - begin;
    return parts;
}

ElboParts LstmModel::elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) {
    State st = initial_state(tp);
    return run(tp, x, 0, x.steps, st, opt);
}

ElboValues LstmModel::evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                         const ElboOptions& opt) {
    const long seg_steps = std::max(1L, segment_frames / cfg_.stack);
    ElboValues acc;
    Tape tp0;
    tp0.recording = false;
    State st = initial_state(tp0);
    for (long b = 0; b < x.steps; b += seg_steps) {
        Tape tp;
        tp.recording = false;
        auto parts = run(tp, x, b, std::min(x.steps, b + seg_steps), st, opt);
        acc.recon += parts.recon->scalar();
        acc.frames += parts.frames;
    }
    return acc;
}

std::vector<double> LstmModel::sample(long frames, Rng& rng) {
    require(frames >= 1, "sample: frames must be >= 1");
    const long D = cfg_.step_dim();
    const long steps = (frames + D - 1) / D;
    Tape tp;
    tp.recording = false;
    State st = initial_state(tp);
    std::vector<double> out;
    for (long t = 0; t < steps; ++t) {
        Tensor in = tp.constant({1, D}, st.prev_row);
        auto [h, c] = cell_.step(tp, enc_.apply(tp, in), st.h, st.c);
        st.h = h;
        st.c = c;
        Tensor params = dec_.apply(tp, h);
        auto row = sample_frame_row(cfg_.output, params->value, D, rng);
        st.prev_row = row;
        out.insert(out.end(), row.begin(), row.end());
    }
    out.resize(static_cast<size_t>(frames));
    return out;
}

LatentTrajectory LstmModel::infer(const audio::StackedSequence& x, const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    State st = initial_state(tp);
    std::vector<Tensor> hidden;
    run(tp, x, 0, x.steps, st, opt, &hidden);
    LatentTrajectory traj;
    traj.total_frames = x.total_frames;
    LatentLayerTrajectory layer;
    layer.stride_frames = cfg_.stack;
    for (long t = 0; t < x.steps; ++t) {
        layer.times.push_back(t * cfg_.stack + 1);
        layer.samples.push_back(hidden[static_cast<size_t>(t)]->value);
        layer.means.push_back(hidden[static_cast<size_t>(t)]->value);
    }
    traj.layers.push_back(std::move(layer));
    return traj;
}

}  // namespace models
}  // namespace slvm
