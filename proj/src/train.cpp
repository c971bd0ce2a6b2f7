#include "slvm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace slvm {
namespace train {

using numcore::Tape;
using numcore::Tensor;

void adam_step(optim::ParamTable& params, optim::AdamState& state, const TrainConfig& cfg) {
    optim::AdamConfig ac;
    ac.lr = cfg.lr;
    ac.beta1 = cfg.beta1;
    ac.beta2 = cfg.beta2;
    ac.eps = cfg.eps;
    optim::adam_step(params, state, ac);
}

namespace {

struct Unit {
    long seq = 0;
    long offset = 0;  // frame offset of the training window
    long frames = 0;
};

const double kLn2 = 0.6931471805599453;

bool is_stateless(models::Kind k) { return k == models::Kind::wavenet || k == models::Kind::stcn; }

// Epoch plan: which windows are visited, in which batch order. Everything is
// keyed off (seed, epoch) so a resumed run replays the identical plan.
std::vector<std::vector<Unit>> epoch_batches(const std::vector<audio::EncodedSequence>& data,
                                             const models::Config& mcfg, const TrainConfig& cfg,
                                             long epoch) {
    const bool subsegments = is_stateless(mcfg.kind) && mcfg.stack == 1 && cfg.segment_length > 0;
    std::vector<Unit> units(data.size());
    Rng rng = Rng(cfg.seed).derive(0xba7c, static_cast<uint64_t>(epoch));
    for (size_t i = 0; i < data.size(); ++i) {
        const long T = data[i].frames();
        Unit u;
        u.seq = static_cast<long>(i);
        if (subsegments && T > cfg.segment_length) {
            u.offset = rng.derive(1, i).uniform_int(T - cfg.segment_length + 1);
            u.frames = cfg.segment_length;
        } else {
            u.offset = 0;
            u.frames = T;
        }
        units[i] = u;
    }
    // length-bucketed batches, order shuffled per epoch
    std::vector<long> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
        return units[static_cast<size_t>(a)].frames < units[static_cast<size_t>(b)].frames;
    });
    std::vector<std::vector<Unit>> batches;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
        std::vector<Unit> b;
        for (size_t j = i; j < std::min(order.size(), i + static_cast<size_t>(cfg.batch_size)); ++j) {
            b.push_back(units[static_cast<size_t>(order[j])]);
        }
        batches.push_back(std::move(b));
    }
    std::vector<size_t> border(batches.size());
    std::iota(border.begin(), border.end(), 0);
    Rng shuffle_rng = Rng(cfg.seed).derive(0x54af, static_cast<uint64_t>(epoch));
    for (size_t i = border.size(); i > 1; --i) {
        std::swap(border[i - 1], border[static_cast<size_t>(shuffle_rng.uniform_int(static_cast<long>(i)))]);
    }
    std::vector<std::vector<Unit>> shuffled;
    shuffled.reserve(batches.size());
    for (size_t i : border) shuffled.push_back(std::move(batches[i]));
    return shuffled;
}

audio::StackedSequence window_of(const audio::EncodedSequence& seq, const Unit& u, int stack,
                                 long pad_to_frames) {
    audio::EncodedSequence w;
    w.id = seq.id;
    w.bit_depth = seq.bit_depth;
    w.sample_rate = seq.sample_rate;
    w.values.assign(seq.values.begin() + u.offset, seq.values.begin() + u.offset + u.frames);
    auto st = audio::stack(w, stack);
    if (pad_to_frames > u.frames) {
        const long steps = (pad_to_frames + stack - 1) / stack;
        st.data.resize(static_cast<size_t>(steps * stack), 0.0);
        st.steps = steps;
    }
    return st;
}

}  // namespace

TrainResult fit(models::SequenceModel& model, const std::vector<audio::EncodedSequence>& train_set,
                const std::vector<audio::EncodedSequence>& val_set, const TrainConfig& cfg,
                optim::AdamState& opt_state, long start_step) {
    require(!train_set.empty(), "fit: empty training set");
    const auto& mcfg = model.config();
    const double uniform_bpf = dists::baseline_uniform(mcfg.output.bit_depth);
    const int layers = std::max(1, model.latent_layers());

    TrainResult result;
    result.best_val_bpf = std::numeric_limits<double>::infinity();
    long divergence_run = 0;
    long step = 0;
    bool done = false;

    auto log_values = [&](long s, const std::string& split, double recon, double kl_total,
                          const std::vector<double>& kls, long frames) {
        StepLog log;
        log.step = s;
        log.split = split;
        log.nats = -(recon - kl_total);
        log.frames = frames;
        log.bpf = log.nats / kLn2 / static_cast<double>(frames);
        log.recon_bpf = -recon / kLn2 / static_cast<double>(frames);
        log.kl_bpf_total = kl_total / kLn2 / static_cast<double>(frames);
        log.kl_bpf.assign(static_cast<size_t>(layers), 0.0);
        for (size_t l = 0; l < kls.size() && l < log.kl_bpf.size(); ++l) {
            log.kl_bpf[l] = kls[l] / kLn2 / static_cast<double>(frames);
        }
        result.logs.push_back(log);
        return log.bpf;
    };

    auto run_validation = [&](long s) {
        if (val_set.empty()) return;
        double recon = 0.0, kl_total = 0.0;
        std::vector<double> kls(static_cast<size_t>(layers), 0.0);
        long frames = 0;
        for (size_t i = 0; i < val_set.size(); ++i) {
            auto x = audio::stack(val_set[i], mcfg.stack);
            models::ElboOptions opt;
            opt.noise_seed = cfg.seed ^ 0xe4a1;
            opt.stream = i;
            Tape tp;
            tp.recording = false;
            auto v = models::values_of(model.elbo(tp, x, opt));
            recon += v.recon;
            kl_total += v.kl_total();
            for (size_t l = 0; l < v.kls.size(); ++l) kls[l] += v.kls[l];
            frames += v.frames;
        }
        const double bpf = log_values(s, "val", recon, kl_total, kls, frames);
        result.best_val_bpf = std::min(result.best_val_bpf, bpf);
    };

    for (long epoch = 0; !done; ++epoch) {
        auto batches = epoch_batches(train_set, mcfg, cfg, epoch);
        for (const auto& batch : batches) {
            if (step >= cfg.max_steps) {
                done = true;
                break;
            }
            ++step;
            if (step <= start_step) continue;  // resume replay

            long pad_frames = 0;
            for (const auto& u : batch) pad_frames = std::max(pad_frames, u.frames);

            const double warm =
                cfg.kl_warmup_steps > 0
                    ? std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.kl_warmup_steps))
                    : 1.0;

            Tape tp;
            Tensor loss;
            double recon_v = 0.0, kl_total_v = 0.0;
            std::vector<double> kls_v(static_cast<size_t>(layers), 0.0);
            long frames = 0;
            for (const auto& u : batch) {
                auto x = window_of(train_set[static_cast<size_t>(u.seq)], u, mcfg.stack, pad_frames);
                models::ElboOptions opt;
                opt.noise_seed = cfg.seed;
                opt.stream = static_cast<uint64_t>(step) * 1000003ull + static_cast<uint64_t>(u.seq);
                auto parts = model.elbo(tp, x, opt);
                Tensor cost = tp.mul_scalar(parts.recon, -1.0);
                for (auto& k : parts.kls) cost = tp.add(cost, tp.mul_scalar(k, warm));
                loss = loss ? tp.add(loss, cost) : cost;
                recon_v += parts.recon->scalar();
                for (size_t l = 0; l < parts.kls.size(); ++l) {
                    const double k = parts.kls[l]->scalar();
                    kls_v[l] += k;
                    kl_total_v += k;
                }
                frames += parts.frames;
            }
            loss = tp.mul_scalar(loss, 1.0 / static_cast<double>(frames));
            optim::zero_grads(model.params());
            tp.backward(loss);
            optim::clip_grad_norm(model.params(), cfg.clip_norm);
            adam_step(model.params(), opt_state, cfg);
            tp.clear();

            const double bpf = -(recon_v - kl_total_v) / kLn2 / static_cast<double>(frames);
            if (bpf > uniform_bpf + 1.0) {
                if (++divergence_run == 500 && !result.divergence_flagged) {
                    result.divergence_flagged = true;
                    std::cerr << "warning: training flagged as diverged (bpf " << bpf << " above uniform + 1 "
                              << "for 500 consecutive steps); run continues\n";
                }
            } else {
                divergence_run = 0;
            }

            if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.max_steps)) {
                log_values(step, "train", recon_v, kl_total_v, kls_v, frames);
            }
            if (cfg.val_every > 0 && step % cfg.val_every == 0) run_validation(step);
            result.final_train_bpf = bpf;
            if (cfg.stop_bpf > 0.0 && bpf <= cfg.stop_bpf) {
                done = true;
                break;
            }
        }
        if (batches.empty()) break;
    }
    if (cfg.val_every > 0 && !val_set.empty()) run_validation(step);
    result.steps_run = step;
    return result;
}

void write_metrics_csv(const std::string& path, const std::vector<StepLog>& logs, int layers) {
    std::ofstream out(path);
    require(out.good(), "write_metrics_csv: cannot open " + path);
    out.precision(12);
    out << "step,split,nats,frames,bpf,recon_bpf,kl_bpf_total";
    for (int l = 1; l <= layers; ++l) out << ",kl_bpf_l" << l;
    out << "\n";
    for (const auto& log : logs) {
        out << log.step << "," << log.split << "," << log.nats << "," << log.frames << "," << log.bpf << ","
            << log.recon_bpf << "," << log.kl_bpf_total;
        for (int l = 0; l < layers; ++l) {
            out << "," << (l < static_cast<int>(log.kl_bpf.size()) ? log.kl_bpf[static_cast<size_t>(l)] : 0.0);
        }
        out << "\n";
    }
}

std::vector<StepLog> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "read_metrics_csv: cannot open " + path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<StepLog> logs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        StepLog log;
        std::getline(ls, field, ',');
        log.step = std::stol(field);
        std::getline(ls, log.split, ',');
        std::getline(ls, field, ',');
        log.nats = std::stod(field);
        std::getline(ls, field, ',');
        log.frames = std::stol(field);
        std::getline(ls, field, ',');
        log.bpf = std::stod(field);
        std::getline(ls, field, ',');
        log.recon_bpf = std::stod(field);
        std::getline(ls, field, ',');
        log.kl_bpf_total = std::stod(field);
        while (std::getline(ls, field, ',')) log.kl_bpf.push_back(std::stod(field));
        logs.push_back(std::move(log));
    }
    return logs;
}

namespace {

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& in) {
    const uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    write_u64(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}
std::vector<double> read_doubles(std::istream& in) {
    std::vector<double> v(read_u64(in));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const models::SequenceModel& model,
                     const optim::AdamState& opt_state, long step, uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_checkpoint: cannot open " + path);
    out.write("SLVM", 4);
    write_u32(out, 1);  // version
    write_string(out, models::config_to_text(model.config()));
    write_u64(out, model.params().size());
    for (const auto& [name, p] : model.params()) {
        write_string(out, name);
        write_u32(out, static_cast<uint32_t>(p->shape.size()));
        for (long d : p->shape) write_u64(out, static_cast<uint64_t>(d));
        write_doubles(out, p->value);
    }
    write_u64(out, opt_state.m.size());
    for (const auto& [name, m] : opt_state.m) {
        write_string(out, name);
        write_doubles(out, m);
        write_doubles(out, opt_state.v.at(name));
    }
    write_u64(out, static_cast<uint64_t>(opt_state.t));
    write_u64(out, static_cast<uint64_t>(step));
    write_u64(out, seed);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    require(std::strncmp(magic, "SLVM", 4) == 0, "load_checkpoint: bad magic in " + path);
    const uint32_t version = read_u32(in);
    require(version == 1, "load_checkpoint: unsupported version " + std::to_string(version));

    LoadedCheckpoint ck;
    models::Config cfg = models::config_from_text(read_string(in));
    ck.model = models::make_model(cfg);
    const uint64_t nparams = read_u64(in);
    for (uint64_t i = 0; i < nparams; ++i) {
        const std::string name = read_string(in);
        const uint32_t nd = read_u32(in);
        std::vector<long> shape(nd);
        for (auto& d : shape) d = static_cast<long>(read_u64(in));
        std::vector<double> values = read_doubles(in);
        auto it = ck.model->params().find(name);
        require(it != ck.model->params().end(), "load_checkpoint: unknown parameter " + name);
        require(it->second->shape == shape, "load_checkpoint: shape mismatch for " + name);
        it->second->value = std::move(values);
    }
    const uint64_t nmom = read_u64(in);
    for (uint64_t i = 0; i < nmom; ++i) {
        const std::string name = read_string(in);
        ck.opt_state.m[name] = read_doubles(in);
        ck.opt_state.v[name] = read_doubles(in);
    }
    ck.opt_state.t = static_cast<long>(read_u64(in));
    ck.step = static_cast<long>(read_u64(in));
    ck.seed = read_u64(in);
    require(in.good(), "load_checkpoint: truncated file " + path);
    return ck;
}

}  // namespace train
}  // namespace slvm
