#include "models_impl.hpp"

namespace slvm {
namespace models {

VrnnModel::VrnnModel(Config cfg) : SequenceModel(std::move(cfg)) {
    nn::Builder B(params_, cfg_.init_seed);
    const long D = cfg_.step_dim();
    gru_ = nn::make_gru(B, "gru", D + cfg_.dz, cfg_.dd);
    prior_ = nn::make_gaussian_head(B, "prior", cfg_.dd, cfg_.dz, cfg_.dz);
    post_ = nn::make_gaussian_head(B, "post", D + cfg_.dd, cfg_.dz, cfg_.dz);
    dec_ = nn::make_mlp(B, "dec", cfg_.dz + cfg_.dd, cfg_.mlp_hidden, D * cfg_.output.params_per_dim());
}

VrnnModel::State VrnnModel::initial_state(Tape& tp) const {
    State st;
    st.d = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
    st.prev_z = tp.constant({1, cfg_.dz}, std::vector<double>(static_cast<size_t>(cfg_.dz), 0.0));
    st.prev_row.assign(static_cast<size_t>(cfg_.step_dim()), 0.0);
    return st;
}

ElboParts VrnnModel::run(Tape& tp, const audio::StackedSequence& x, long begin, long end, State& st,
                         const ElboOptions& opt, LatentTrajectory* traj,
                         std::vector<std::vector<double>>* prior_mean_out) {
    const long D = cfg_.step_dim();
    std::vector<Tensor> rows;
    Tensor kl = tp.constant_scalar(0.0);
    for (long t = begin; t < end; ++t) {
        Tensor in = tp.concat({tp.constant({1, D}, st.prev_row), st.prev_z}, 1);
        st.d = gru_.step(tp, in, st.d);
        auto [pm, plv] = prior_.apply(tp, st.d);
        Tensor qm = pm, qlv = plv;
        if (!opt.tie_posterior_to_prior) {
            Tensor xt = tp.constant({1, D}, step_row(x, t));
            auto q = post_.apply(tp, tp.concat({xt, st.d}, 1));
            qm = q.first;
            qlv = q.second;
        }
        Tensor z = dists::reparam_sample_graph(tp, qm, qlv, latent_noise(opt, t, 0, cfg_.dz));
        rows.push_back(dec_.apply(tp, tp.concat({z, st.d}, 1)));
        kl = tp.add(kl, tp.mul_scalar(dists::gaussian_kl_graph(tp, qm, qlv, pm, plv), step_alive(x, t)));
        st.prev_z = z;
        st.prev_row = step_row(x, t);
        if (traj && step_alive(x, t) > 0.5) {
            traj->layers[0].times.push_back(t * cfg_.stack + 1);
            traj->layers[0].samples.push_back(z->value);
            traj->layers[0].means.push_back(qm->value);
        }
        if (prior_mean_out) prior_mean_out->push_back(pm->value);
    }
    ElboParts parts;
    Tensor params = tp.concat(rows, 0);
    auto mask = mask_rows(x, begin, end);
    parts.recon =
        dists::log_prob_graph(tp, cfg_.output, params, value_rows(x, begin, end), mask, end - begin, D);
    parts.kls = {kl};
    parts.frames = count_mask(mask);
    parts.steps = end - begin;
    return parts;
}

ElboParts VrnnModel::elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) {
    State st = initial_state(tp);
    return run(tp, x, 0, x.steps, st, opt);
}

ElboValues VrnnModel::evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                         const ElboOptions& opt) {
    const long seg_steps = std::max(1L, segment_frames / cfg_.stack);
    ElboValues acc;
    acc.kls = {0.0};
    Tape tp0;
    tp0.recording = false;
    State st = initial_state(tp0);
    for (long b = 0; b < x.steps; b += seg_steps) {
        Tape tp;
        tp.recording = false;
        auto parts = run(tp, x, b, std::min(x.steps, b + seg_steps), st, opt);
        acc.recon += parts.recon->scalar();
        acc.kls[0] += parts.kls[0]->scalar();
        acc.frames += parts.frames;
    }
    return acc;
}

std::vector<double> VrnnModel::sample(long frames, Rng& rng) {
    require(frames >= 1, "sample: frames must be >= 1");
    const long D = cfg_.step_dim();
    const long steps = (frames + D - 1) / D;
    Tape tp;
    tp.recording = false;
    State st = initial_state(tp);
    std::vector<double> out;
    for (long t = 0; t < steps; ++t) {
        Tensor in = tp.concat({tp.constant({1, D}, st.prev_row), st.prev_z}, 1);
        st.d = gru_.step(tp, in, st.d);
        auto [pm, plv] = prior_.apply(tp, st.d);
        std::vector<double> eps(static_cast<size_t>(cfg_.dz));
        for (auto& e : eps) e = rng.normal();
        Tensor z = dists::reparam_sample_graph(tp, pm, plv, eps);
        Tensor params = dec_.apply(tp, tp.concat({z, st.d}, 1));
        auto row = sample_frame_row(cfg_.output, params->value, D, rng);
        st.prev_z = z;
        st.prev_row = row;
        out.insert(out.end(), row.begin(), row.end());
    }
    out.resize(static_cast<size_t>(frames));
    return out;
}

LatentTrajectory VrnnModel::infer(const audio::StackedSequence& x, const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    LatentTrajectory traj;
    traj.total_frames = x.total_frames;
    traj.layers.resize(1);
    traj.layers[0].stride_frames = cfg_.stack;
    State st = initial_state(tp);
    run(tp, x, 0, x.steps, st, opt, &traj);
    return traj;
}

std::vector<std::vector<double>> VrnnModel::prior_means(const audio::StackedSequence& x,
                                                        const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    State st = initial_state(tp);
    std::vector<std::vector<double>> out;
    run(tp, x, 0, x.steps, st, opt, nullptr, &out);
    return out;
}

}  // namespace models
}  // namespace slvm
