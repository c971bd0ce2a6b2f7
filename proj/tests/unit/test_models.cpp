#include <doctest.h>

#include <cmath>

#include "models_impl.hpp"
#include "slvm/models.hpp"

using namespace slvm;
using models::Config;
using models::ElboOptions;
using models::Kind;
using numcore::Tape;
using numcore::Tensor;

namespace {

audio::StackedSequence toy_sequence(long frames, int stack, int bit_depth, uint64_t seed) {
    audio::SynthSpec spec;
    spec.count = 1;
    spec.min_frames = frames;
    spec.max_frames = frames;
    spec.bit_depth = bit_depth;
    spec.seed = seed;
    spec.regimes = {{{500.0, 1300.0}, {0.4, 0.2}}};
    spec.noise_amp = 0.02;
    auto seqs = audio::synth_dataset(spec);
    return audio::stack(seqs[0], stack);
}

Config tiny_config(Kind kind) {
    Config cfg;
    cfg.kind = kind;
    cfg.stack = 4;
    cfg.output.kind = dists::OutputKind::dmol;
    cfg.output.mixture = 2;
    cfg.output.bit_depth = 8;
    cfg.dz = 3;
    cfg.dd = 5;
    cfg.dc = 4;
    cfg.mlp_hidden = 6;
    cfg.wn_blocks = 2;
    cfg.wn_layers = 2;
    cfg.dec_blocks = 1;
    cfg.dec_layers = 2;
    cfg.init_seed = 11;
    if (kind == Kind::stcn) {
        cfg.layers = 5;
        cfg.stcn_dims = {2, 2, 3, 3, 4};
        cfg.wn_blocks = 5;
    }
    if (kind == Kind::cwvae) {
        cfg.stack = 1;
        cfg.layers = 2;
        cfg.stride_base = 4;
        cfg.stride_factor = 2;
    }
    return cfg;
}

double loss_value(models::SequenceModel& m, const audio::StackedSequence& x, const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    auto v = models::values_of(m.elbo(tp, x, opt));
    return v.nll();
}

double model_grad_check(models::SequenceModel& m, const audio::StackedSequence& x, const ElboOptions& opt,
                        int probes_per_param, uint64_t seed) {
    optim::zero_grads(m.params());
    Tape tp;
    auto parts = m.elbo(tp, x, opt);
    Tensor loss = tp.mul_scalar(parts.recon, -1.0);
    for (auto& k : parts.kls) loss = tp.add(loss, k);
    tp.backward(loss);

    Rng rng(seed);
    double worst = 0.0;
    // model losses sit near 1e2 so 1e-5 steps drown small gradients in
    // rounding noise; 1e-4 balances truncation against cancellation
    const double eps = 1e-4;
    for (auto& [name, p] : m.params()) {
        for (int probe = 0; probe < probes_per_param; ++probe) {
            const long idx = rng.uniform_int(p->numel());
            const double old = p->value[static_cast<size_t>(idx)];
            p->value[static_cast<size_t>(idx)] = old + eps;
            const double fp = loss_value(m, x, opt);
            p->value[static_cast<size_t>(idx)] = old - eps;
            const double fm = loss_value(m, x, opt);
            p->value[static_cast<size_t>(idx)] = old;
            const double central = (fp - fm) / (2.0 * eps);
            const double analytic = p->grad[static_cast<size_t>(idx)];
            const double err = std::abs(analytic - central) / (std::abs(analytic) + std::abs(central) + 1e-12);
            worst = std::max(worst, err);
            INFO("param " << name << " idx " << idx);
            CHECK(err < 1e-4);
        }
    }
    return worst;
}

audio::StackedSequence perturb_step(const audio::StackedSequence& x, long step, double delta) {
    audio::StackedSequence y = x;
    for (int d = 0; d < y.stack; ++d) {
        size_t i = static_cast<size_t>(step * y.stack + d);
        double v = y.data[i] + delta;
        y.data[i] = audio::quantize(std::min(1.0, std::max(-1.0, v)), 8);
    }
    return y;
}

}  // namespace

TEST_CASE("wavenet receptive field formula") {
    CHECK(nn::wavenet_receptive_field(5, 10) == 5116);
    CHECK(nn::wavenet_receptive_field(1, 1) == 2);
}

TEST_CASE("cwvae schedule") {
    auto sched = models::cwvae_schedule(1025, 64, 8, 2);
    REQUIRE(sched.size() == 2);
    // s2 = 512: updates at 1, 513, 1025
    CHECK(sched[1] == std::vector<long>{1, 513, 1025});
    CHECK(sched[0].size() == 17);  // ceil(1025/64)
    CHECK(sched[0][0] == 1);
    CHECK(sched[0][1] == 65);

    // |T_2| = ceil(T / (c s1))
    for (long T : {100, 1024, 4097}) {
        auto s = models::cwvae_schedule(T, 64, 8, 2);
        CHECK(static_cast<long>(s[1].size()) == (T + 511) / 512);
    }
}

TEST_CASE("all six models produce finite untrained elbos and exact bookkeeping") {
    for (Kind kind : {Kind::lstm, Kind::wavenet, Kind::vrnn, Kind::srnn, Kind::stcn, Kind::cwvae}) {
        INFO("model " << models::to_string(kind));
        auto model = models::make_model(tiny_config(kind));
        auto x = toy_sequence(61, model->config().stack, 8, 3);
        ElboOptions opt;
        opt.noise_seed = 5;
        Tape tp;
        tp.recording = false;
        auto vals = models::values_of(model->elbo(tp, x, opt));
        CHECK(std::isfinite(vals.recon));
        CHECK(vals.frames == 61);
        for (double kl : vals.kls) {
            CHECK(std::isfinite(kl));
            CHECK(kl >= 0.0);
        }
        // reconstruction alone is an upper bound on the elbo
        CHECK(vals.recon >= vals.recon - vals.kl_total());
    }
}

TEST_CASE("latent variable models: tied posterior gives exactly zero KL") {
    for (Kind kind : {Kind::vrnn, Kind::srnn, Kind::stcn, Kind::cwvae}) {
        INFO("model " << models::to_string(kind));
        auto model = models::make_model(tiny_config(kind));
        auto x = toy_sequence(45, model->config().stack, 8, 9);
        ElboOptions opt;
        opt.noise_seed = 2;
        opt.tie_posterior_to_prior = true;
        Tape tp;
        tp.recording = false;
        auto vals = models::values_of(model->elbo(tp, x, opt));
        CHECK(vals.kl_total() == 0.0);
        CHECK(vals.nll() == -vals.recon);
    }
}

TEST_CASE("elbo gradients match central differences with frozen noise") {
    for (Kind kind : {Kind::lstm, Kind::wavenet, Kind::vrnn, Kind::srnn, Kind::stcn, Kind::cwvae}) {
        INFO("model " << models::to_string(kind));
        Config cfg = tiny_config(kind);
        auto model = models::make_model(cfg);
        auto x = toy_sequence(kind == Kind::cwvae ? 16 : 13, model->config().stack, 8, 17);
        ElboOptions opt;
        opt.noise_seed = 23;
        model_grad_check(*model, x, opt, 2, 31);
    }
}

TEST_CASE("lstm hidden state is causal") {
    auto model = models::make_model(tiny_config(Kind::lstm));
    auto x = toy_sequence(48, 4, 8, 21);
    ElboOptions opt;
    auto base = model->infer(x, opt);
    for (long t : {3L, 7L}) {
        auto pert = model->infer(perturb_step(x, t, 0.25), opt);
        // h_u depends on x_{<u}: unchanged for u <= t, changed after
        for (long u = 0; u <= t; ++u)
            CHECK(pert.layers[0].samples[static_cast<size_t>(u)] == base.layers[0].samples[static_cast<size_t>(u)]);
        CHECK(pert.layers[0].samples[static_cast<size_t>(t + 1)] != base.layers[0].samples[static_cast<size_t>(t + 1)]);
    }
}

TEST_CASE("wavenet representation is causal") {
    auto model = models::make_model(tiny_config(Kind::wavenet));
    auto x = toy_sequence(48, 4, 8, 22);
    ElboOptions opt;
    auto base = model->infer(x, opt);
    const long t = 5;
    auto pert = model->infer(perturb_step(x, t, 0.25), opt);
    for (auto layer = 0u; layer < base.layers.size(); ++layer) {
        for (long u = 0; u <= t; ++u)
            CHECK(pert.layers[layer].samples[static_cast<size_t>(u)] ==
                  base.layers[layer].samples[static_cast<size_t>(u)]);
    }
}

TEST_CASE("vrnn prior is filtering") {
    auto model = models::make_model(tiny_config(Kind::vrnn));
    auto* vrnn = dynamic_cast<models::VrnnModel*>(model.get());
    auto x = toy_sequence(40, 4, 8, 25);
    ElboOptions opt;
    opt.noise_seed = 7;
    auto base = vrnn->prior_means(x, opt);
    const long t = 4;
    auto pert = vrnn->prior_means(perturb_step(x, t, 0.25), opt);
    for (long u = 0; u <= t; ++u) CHECK(pert[static_cast<size_t>(u)] == base[static_cast<size_t>(u)]);
    CHECK(pert[static_cast<size_t>(t + 1)] != base[static_cast<size_t>(t + 1)]);
}

TEST_CASE("srnn posterior smooths while its prior filters") {
    auto model = models::make_model(tiny_config(Kind::srnn));
    auto* srnn = dynamic_cast<models::SrnnModel*>(model.get());
    auto x = toy_sequence(40, 4, 8, 26);
    ElboOptions opt;
    opt.noise_seed = 3;
    // posterior at t=1 changes when the last step changes
    auto post = srnn->posterior_means(x, opt);
    auto post_p = srnn->posterior_means(perturb_step(x, x.steps - 1, 0.25), opt);
    CHECK(post_p[0] != post[0]);
    // the prior's own conditioning only sees x_<t; probe it with the latent
    // chain tied to the prior so no smoothing sample leaks future frames in
    ElboOptions tied = opt;
    tied.tie_posterior_to_prior = true;
    auto prior = srnn->prior_means(x, tied);
    const long t = 3;
    auto prior_p = srnn->prior_means(perturb_step(x, t, 0.25), tied);
    for (long u = 0; u <= t; ++u) CHECK(prior_p[static_cast<size_t>(u)] == prior[static_cast<size_t>(u)]);
    CHECK(prior_p[static_cast<size_t>(t + 1)] != prior[static_cast<size_t>(t + 1)]);
}

TEST_CASE("stcn structure: ladder, priors one step behind, temporal independence") {
    Config cfg = tiny_config(Kind::stcn);
    auto model = models::make_model(cfg);
    auto* stcn = dynamic_cast<models::StcnModel*>(model.get());
    CHECK(model->latent_layers() == 5);

    auto x = toy_sequence(60, 4, 8, 27);
    ElboOptions opt;
    opt.noise_seed = 13;

    // per-layer KLs reported separately and non-negative
    Tape tp;
    tp.recording = false;
    auto vals = models::values_of(model->elbo(tp, x, opt));
    CHECK(vals.kls.size() == 5);
    for (double kl : vals.kls) CHECK(kl >= 0.0);

    // prior at t conditions on x_{<t} only
    auto prior = stcn->prior_means_top(x, opt);
    const long t = 6;
    auto prior_p = stcn->prior_means_top(perturb_step(x, t, 0.25), opt);
    for (long u = 0; u <= t; ++u) CHECK(prior_p[static_cast<size_t>(u)] == prior[static_cast<size_t>(u)]);

    // posterior params at t are untouched by resampling z at t-1
    auto base = model->infer(x, opt);
    ElboOptions re = opt;
    re.resample_t = t - 1;
    re.resample_layer = cfg.layers - 1;  // top layer draw at t-1 changes
    auto resampled = model->infer(x, re);
    for (int l = 0; l < cfg.layers; ++l) {
        CHECK(resampled.layers[static_cast<size_t>(l)].means[static_cast<size_t>(t)] ==
              base.layers[static_cast<size_t>(l)].means[static_cast<size_t>(t)]);
    }
    // while the resampled draw itself changed
    CHECK(resampled.layers[static_cast<size_t>(cfg.layers - 1)].samples[static_cast<size_t>(t - 1)] !=
          base.layers[static_cast<size_t>(cfg.layers - 1)].samples[static_cast<size_t>(t - 1)]);

    // L=1 ablation keeps a single wide top latent
    Config ab = cfg;
    ab.layers = 1;
    ab.stcn_dims.clear();
    ab.validate();
    CHECK(ab.stcn_dims == std::vector<long>{256});
    ab.stcn_dims = {4};
    auto model1 = models::make_model(ab);
    CHECK(model1->latent_layers() == 1);
}

TEST_CASE("cwvae: strides, frozen-latent decode, encoder plays no part in sampling") {
    Config cfg = tiny_config(Kind::cwvae);
    auto model = models::make_model(cfg);
    auto* cw = dynamic_cast<models::CwvaeModel*>(model.get());
    auto x = toy_sequence(40, 1, 8, 31);
    ElboOptions opt;
    opt.noise_seed = 19;

    auto traj = model->infer(x, opt);
    REQUIRE(traj.layers.size() == 2);
    CHECK(traj.layers[0].stride_frames == 4);
    CHECK(traj.layers[1].stride_frames == 8);
    CHECK(traj.layers[0].times[0] == 1);
    CHECK(traj.layers[0].times[1] == 5);
    CHECK(traj.layers[1].times[1] == 9);
    // strides strictly increase up the hierarchy
    CHECK(traj.layers[1].stride_frames > traj.layers[0].stride_frames);

    // the reconstruction factors exactly through z^(1): decoding the inferred
    // samples reproduces the elbo's reconstruction term
    Tape tp;
    tp.recording = false;
    auto vals = models::values_of(model->elbo(tp, x, opt));
    auto rows = cw->decode_params(traj.layers[0].samples);
    double recon = 0.0;
    for (long f = 0; f < x.total_frames; ++f) {
        dists::DMoLParams p;
        p.mixture = cfg.output.mixture;
        p.bit_depth = cfg.output.bit_depth;
        const auto& r = rows[static_cast<size_t>(f)];
        const int K = cfg.output.mixture;
        p.logit_weights.assign(r.begin(), r.begin() + K);
        p.means.assign(r.begin() + K, r.begin() + 2 * K);
        p.log_scales.assign(r.begin() + 2 * K, r.begin() + 3 * K);
        recon += dists::dmol_log_prob(p, x.data[static_cast<size_t>(f)]);
    }
    CHECK(recon == doctest::Approx(vals.recon).epsilon(1e-9));

    // samples never read observed frames: scrambling the encoder and the
    // posterior nets leaves generation untouched
    Rng ra(77), rb(77);
    std::vector<double> s1 = model->sample(23, ra);
    for (auto& [name, p] : model->params()) {
        if (name.find("enc") == 0 || name.find("post") == 0) {
            for (auto& v : p->value) v = -v + 0.01;
        }
    }
    std::vector<double> s2 = model->sample(23, rb);
    CHECK(s1 == s2);
    CHECK(s1.size() == 23);
}

TEST_CASE("sampling returns exactly the requested frame count") {
    for (Kind kind : {Kind::lstm, Kind::wavenet, Kind::vrnn, Kind::srnn, Kind::stcn, Kind::cwvae}) {
        INFO("model " << models::to_string(kind));
        auto model = models::make_model(tiny_config(kind));
        Rng rng(5);
        auto s = model->sample(19, rng);
        CHECK(s.size() == 19);
        for (double v : s) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
}
