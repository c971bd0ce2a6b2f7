#include "models_impl.hpp"

namespace slvm {
namespace models {

namespace {
long pow_long(long base, int e) {
    long r = 1;
    for (int i = 0; i < e; ++i) r *= base;
    return r;
}
}  // namespace

CwvaeModel::CwvaeModel(Config cfg) : SequenceModel(std::move(cfg)) {
    nn::Builder B(params_, cfg_.init_seed);
    s1_ = cfg_.stride_base;
    c_ = cfg_.stride_factor;
    const int L = cfg_.layers;

    enc1_ = nn::make_strided_chain(B, "enc1", 1, cfg_.dc, s1_);
    for (int i = 0; i + 1 < L; ++i) {
        enc_up_.push_back(nn::make_strided_chain(B, "enc" + std::to_string(i + 2), cfg_.dc, cfg_.dc, c_));
    }
    for (int i = 0; i < L; ++i) {
        const long in = cfg_.dz + (i + 1 < L ? cfg_.dz : 0);
        cells_.push_back(nn::make_gru(B, "cell" + std::to_string(i + 1), in, cfg_.dd));
        priors_.push_back(nn::make_gaussian_head(B, "prior" + std::to_string(i + 1), cfg_.dd, cfg_.dz, cfg_.dz));
        posts_.push_back(
            nn::make_gaussian_head(B, "post" + std::to_string(i + 1), cfg_.dd + cfg_.dc, cfg_.dz, cfg_.dz));
    }
    dec_ = nn::make_transposed_chain(B, "dec", cfg_.dz, cfg_.dc, cfg_.dc, s1_);
    nn::Builder H = B.scoped("head");
    head_w_ = H.conv_weight("w", cfg_.output.params_per_dim(), cfg_.dc, 1);
    head_b_ = H.conv_bias("b", cfg_.output.params_per_dim());
}

CwvaeModel::State CwvaeModel::initial_state(Tape& tp) const {
    State st;
    for (int i = 0; i < cfg_.layers; ++i) {
        LayerState ls;
        ls.z = tp.constant({1, cfg_.dz}, std::vector<double>(static_cast<size_t>(cfg_.dz), 0.0));
        ls.d = tp.constant({1, cfg_.dd}, std::vector<double>(static_cast<size_t>(cfg_.dd), 0.0));
        st.layers.push_back(std::move(ls));
    }
    st.k_offset = 0;
    return st;
}

ElboParts CwvaeModel::run(Tape& tp, const audio::StackedSequence& x, long frame_begin, long frame_end,
                          State& st, const ElboOptions& opt, LatentTrajectory* traj) {
    const int L = cfg_.layers;
    const long sL_total = s1_ * pow_long(c_, L - 1);
    const long n = frame_end - frame_begin;
    const long n_pad = ((n + sL_total - 1) / sL_total) * sL_total;
    const long K1 = n_pad / s1_;

    // ladder embeddings, one pass over the segment
    std::vector<Tensor> embeds;
    embeds.push_back(enc1_.apply(tp, tp.constant({1, n_pad}, padded_frames(x, frame_begin, n_pad))));
    for (int i = 0; i + 1 < L; ++i) embeds.push_back(enc_up_[static_cast<size_t>(i)].apply(tp, embeds.back()));

    ElboParts parts;
    std::vector<Tensor> kls(static_cast<size_t>(L));
    for (auto& k : kls) k = tp.constant_scalar(0.0);
    std::vector<Tensor> z1_cols;
    z1_cols.reserve(static_cast<size_t>(K1));

    for (long k_local = 0; k_local < K1; ++k_local) {
        const long kg = st.k_offset + k_local;
        for (int i = L - 1; i >= 0; --i) {
            const long stride_lat = pow_long(c_, i);
            if (kg % stride_lat != 0) continue;  // layer holds its state between ticks
            const long t_frame = kg * s1_ + 1;
            const bool alive = t_frame <= x.total_frames;
            if (!alive) continue;
            auto& ls = st.layers[static_cast<size_t>(i)];
            Tensor gru_in = i + 1 < L ? tp.concat({ls.z, st.layers[static_cast<size_t>(i + 1)].z}, 1) : ls.z;
            ls.d = cells_[static_cast<size_t>(i)].step(tp, gru_in, ls.d);
            auto [pm, plv] = priors_[static_cast<size_t>(i)].apply(tp, ls.d);
            Tensor qm = pm, qlv = plv;
            if (!opt.tie_posterior_to_prior) {
                Tensor e_col = tp.reshape(tp.slice(embeds[static_cast<size_t>(i)], 1, k_local / stride_lat, 1),
                                          {1, cfg_.dc});
                auto q = posts_[static_cast<size_t>(i)].apply(tp, tp.concat({ls.d, e_col}, 1));
                qm = q.first;
                qlv = q.second;
            }
            Tensor z = dists::reparam_sample_graph(tp, qm, qlv, latent_noise(opt, kg, i, cfg_.dz));
            kls[static_cast<size_t>(i)] =
                tp.add(kls[static_cast<size_t>(i)], dists::gaussian_kl_graph(tp, qm, qlv, pm, plv));
            ls.z = z;
            if (traj) {
                auto& layer = traj->layers[static_cast<size_t>(i)];
                layer.stride_frames = s1_ * stride_lat;
                layer.times.push_back(t_frame);
                layer.samples.push_back(z->value);
                layer.means.push_back(qm->value);
            }
        }
        z1_cols.push_back(tp.reshape(st.layers[0].z, {cfg_.dz, 1}));
    }
    st.k_offset += K1;

    Tensor z1 = tp.concat(z1_cols, 1);                  // [dz, K1]
    Tensor hidden = tp.tanh(dec_.apply(tp, z1));        // [dc, n_pad]
    Tensor p = tp.add(tp.conv1d_causal(hidden, head_w_, 1), tp.expand_last(head_b_, n_pad));
    Tensor params = tp.transpose2d(p);                  // [n_pad, ppd]

    std::vector<double> vals = padded_frames(x, frame_begin, n_pad);
    std::vector<double> mask(static_cast<size_t>(n_pad), 0.0);
    for (long i = 0; i < n_pad; ++i) {
        if (i < n && frame_begin + i < x.total_frames) mask[static_cast<size_t>(i)] = 1.0;
    }
    parts.recon = dists::log_prob_graph(tp, cfg_.output, params, vals, mask, n_pad, 1);
    parts.kls = std::move(kls);
    parts.frames = count_mask(mask);
    parts.steps = K1;
    return parts;
}

ElboParts CwvaeModel::elbo(Tape& tp, const audio::StackedSequence& x, const ElboOptions& opt) {
    State st = initial_state(tp);
    return run(tp, x, 0, x.steps, st, opt, nullptr);
}

ElboValues CwvaeModel::evaluate_segmented(const audio::StackedSequence& x, long segment_frames,
                                          const ElboOptions& opt) {
    const long sL_total = s1_ * pow_long(c_, cfg_.layers - 1);
    const long seg = std::max(sL_total, (segment_frames / sL_total) * sL_total);
    ElboValues acc;
    acc.kls.assign(static_cast<size_t>(cfg_.layers), 0.0);
    Tape tp0;
    tp0.recording = false;
    State st = initial_state(tp0);
    for (long b = 0; b < x.steps; b += seg) {
        Tape tp;
        tp.recording = false;
        auto parts = run(tp, x, b, std::min(x.steps, b + seg), st, opt, nullptr);
        acc.recon += parts.recon->scalar();
        for (int l = 0; l < cfg_.layers; ++l)
            acc.kls[static_cast<size_t>(l)] += parts.kls[static_cast<size_t>(l)]->scalar();
        acc.frames += parts.frames;
    }
    return acc;
}

std::vector<double> CwvaeModel::sample(long frames, Rng& rng) {
    require(frames >= 1, "sample: frames must be >= 1");
    const int L = cfg_.layers;
    const long K1 = (frames + s1_ - 1) / s1_;
    Tape tp;
    tp.recording = false;
    State st = initial_state(tp);
    std::vector<Tensor> z1_cols;
    for (long k = 0; k < K1; ++k) {
        for (int i = L - 1; i >= 0; --i) {
            if (k % pow_long(c_, i) != 0) continue;
            auto& ls = st.layers[static_cast<size_t>(i)];
            Tensor gru_in = i + 1 < L ? tp.concat({ls.z, st.layers[static_cast<size_t>(i + 1)].z}, 1) : ls.z;
            ls.d = cells_[static_cast<size_t>(i)].step(tp, gru_in, ls.d);
            auto [pm, plv] = priors_[static_cast<size_t>(i)].apply(tp, ls.d);
            std::vector<double> eps(static_cast<size_t>(cfg_.dz));
            for (auto& e : eps) e = rng.normal();
            ls.z = dists::reparam_sample_graph(tp, pm, plv, eps);
        }
        z1_cols.push_back(tp.reshape(st.layers[0].z, {cfg_.dz, 1}));
    }
    Tensor z1 = tp.concat(z1_cols, 1);
    Tensor hidden = tp.tanh(dec_.apply(tp, z1));
    const long n_out = hidden->shape[1];
    Tensor p = tp.add(tp.conv1d_causal(hidden, head_w_, 1), tp.expand_last(head_b_, n_out));
    Tensor rows = tp.transpose2d(p);
    const long ppd = cfg_.output.params_per_dim();
    std::vector<double> out;
    for (long f = 0; f < frames; ++f) {
        std::vector<double> row(rows->value.begin() + f * ppd, rows->value.begin() + (f + 1) * ppd);
        auto frame = sample_frame_row(cfg_.output, row, 1, rng);
        out.push_back(frame[0]);
    }
    return out;
}

std::vector<std::vector<double>> CwvaeModel::decode_params(const std::vector<std::vector<double>>& z1_rows) {
    Tape tp;
    tp.recording = false;
    const long K = static_cast<long>(z1_rows.size());
    std::vector<double> zv(static_cast<size_t>(cfg_.dz * K));
    for (long k = 0; k < K; ++k)
        for (long d = 0; d < cfg_.dz; ++d)
            zv[static_cast<size_t>(d * K + k)] = z1_rows[static_cast<size_t>(k)][static_cast<size_t>(d)];
    Tensor hidden = tp.tanh(dec_.apply(tp, tp.constant({cfg_.dz, K}, std::move(zv))));
    const long n_out = hidden->shape[1];
    Tensor p = tp.add(tp.conv1d_causal(hidden, head_w_, 1), tp.expand_last(head_b_, n_out));
    Tensor rows = tp.transpose2d(p);
    const long ppd = cfg_.output.params_per_dim();
    std::vector<std::vector<double>> out;
    for (long f = 0; f < n_out; ++f) {
        out.emplace_back(rows->value.begin() + f * ppd, rows->value.begin() + (f + 1) * ppd);
    }
    return out;
}

LatentTrajectory CwvaeModel::infer(const audio::StackedSequence& x, const ElboOptions& opt) {
    LatentTrajectory traj;
    traj.total_frames = x.total_frames;
    traj.layers.resize(static_cast<size_t>(cfg_.layers));
    Tape tp;
    tp.recording = false;
    State st = initial_state(tp);
    run(tp, x, 0, x.steps, st, opt, &traj);
    return traj;
}

}  // namespace models
}  // namespace slvm
