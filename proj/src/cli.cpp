#include "slvm/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "slvm/dists.hpp"
#include "slvm/eval.hpp"
#include "slvm/models.hpp"
#include "slvm/probe.hpp"
#include "slvm/train.hpp"

namespace slvm {
namespace cli {

namespace fs = std::filesystem;

namespace {

std::string span_text(const std::vector<int>& labels) {
    if (labels.empty()) return "-";
    std::ostringstream os;
    auto spans = probe::spans_from_labels(labels);
    for (size_t i = 0; i < spans.size(); ++i) {
        if (i) os << ";";
        os << spans[i].begin << ":" << spans[i].end << ":" << spans[i].label;
    }
    return os.str();
}

std::vector<int> labels_from_spans(const std::string& text, long frames) {
    std::vector<int> labels;
    if (text == "-" || text.empty()) return labels;
    labels.assign(static_cast<size_t>(frames), 0);
    std::istringstream ss(text);
    std::string span;
    while (std::getline(ss, span, ';')) {
        long b = 0, e = 0;
        int c = 0;
        require(std::sscanf(span.c_str(), "%ld:%ld:%d", &b, &e, &c) == 3,
                "corpus manifest: bad span " + span);
        for (long t = b; t < e && t < frames; ++t) labels[static_cast<size_t>(t)] = c;
    }
    return labels;
}

}  // namespace

void write_corpus(const std::string& dir, const std::vector<audio::EncodedSequence>& seqs) {
    require(!seqs.empty(), "write_corpus: empty corpus");
    fs::create_directories(dir);
    std::ofstream meta(fs::path(dir) / "corpus.meta");
    require(meta.good(), "write_corpus: cannot open corpus.meta");
    meta << "sample_rate = " << seqs[0].sample_rate << "\n";
    meta << "bit_depth = " << seqs[0].bit_depth << "\n";
    meta << "encoding = " << (seqs[0].encoding == audio::EncodedSequence::Encoding::mu_law ? "mu_law" : "linear")
         << "\n";
    meta << "count = " << seqs.size() << "\n";
    std::ofstream man(fs::path(dir) / "manifest.tsv");
    require(man.good(), "write_corpus: cannot open manifest.tsv");
    for (const auto& s : seqs) {
        man << s.id << "\t" << s.frames() << "\t" << span_text(s.labels) << "\n";
        audio::write_wav((fs::path(dir) / (s.id + ".wav")).string(), s.values, s.sample_rate);
    }
}

std::vector<audio::EncodedSequence> load_corpus(const std::string& dir) {
    std::ifstream meta(fs::path(dir) / "corpus.meta");
    int bit_depth = 16;
    std::string encoding = "linear";
    if (meta.good()) {
        std::string line;
        while (std::getline(meta, line)) {
            std::istringstream ls(line);
            std::string key, eq, val;
            ls >> key >> eq >> val;
            if (key == "bit_depth") bit_depth = std::stoi(val);
            if (key == "encoding") encoding = val;
        }
    }
    std::ifstream man(fs::path(dir) / "manifest.tsv");
    require(man.good(), "load_corpus: cannot open manifest.tsv in " + dir);
    std::vector<audio::EncodedSequence> seqs;
    std::string line;
    while (std::getline(man, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, frames_s, spans;
        std::getline(ls, id, '\t');
        std::getline(ls, frames_s, '\t');
        std::getline(ls, spans, '\t');
        auto seq = audio::read_wav((fs::path(dir) / (id + ".wav")).string());
        seq.id = id;
        seq.bit_depth = bit_depth;
        seq.encoding = encoding == "mu_law" ? audio::EncodedSequence::Encoding::mu_law
                                            : audio::EncodedSequence::Encoding::linear;
        require(seq.frames() == std::stol(frames_s),
                "load_corpus: manifest length disagrees with " + id + ".wav");
        seq.labels = labels_from_spans(spans, seq.frames());
        seqs.push_back(std::move(seq));
    }
    return seqs;
}

namespace {

struct ModelFlags {
    std::string model = "lstm";
    long stack = 1;
    long stride = 0;  // cwvae s_1; 0 = take from --stack
    long stride_factor = 8;
    int layers = 0;  // 0 = model default
    long dz = 32, dd = 64, dc = 32, mlp_hidden = 64;
    std::string output = "dmol";
    int mixture = 10;
    int bit_depth = 0;  // 0 = corpus meta
    double var_floor = 1e-4;
    int wn_blocks = 2, wn_layers = 6, dec_blocks = 1, dec_layers = 2;
    std::string stcn_dims;
    uint64_t init_seed = 1;

    void add_options(CLI::App* cmd) {
        cmd->add_option("--model", model, "model kind: lstm|wavenet|vrnn|srnn|stcn|cwvae")
            ->capture_default_str();
        cmd->add_option("--stack", stack, "frames per step; for cwvae this is s_1")->capture_default_str();
        cmd->add_option("--stride", stride, "cwvae stride base s_1 (overrides --stack)")
            ->capture_default_str();
        cmd->add_option("--stride-factor", stride_factor, "cwvae stride factor c")->capture_default_str();
        cmd->add_option("--layers", layers, "latent layers (stcn: 1|5, cwvae: >=1)")->capture_default_str();
        cmd->add_option("--dz", dz, "latent width")->capture_default_str();
        cmd->add_option("--dd", dd, "recurrent state width")->capture_default_str();
        cmd->add_option("--dc", dc, "conv channels")->capture_default_str();
        cmd->add_option("--mlp-hidden", mlp_hidden, "mlp hidden width")->capture_default_str();
        cmd->add_option("--output", output, "output distribution: dmol|gaussian")->capture_default_str();
        cmd->add_option("--mixture", mixture, "DMoL components")->capture_default_str();
        cmd->add_option("--bit-depth", bit_depth, "amplitude bit depth (default: corpus meta)")
            ->capture_default_str();
        cmd->add_option("--var-floor", var_floor, "gaussian variance floor")->capture_default_str();
        cmd->add_option("--wn-blocks", wn_blocks, "wavenet/stcn encoder blocks")->capture_default_str();
        cmd->add_option("--wn-layers", wn_layers, "dilated layers per block")->capture_default_str();
        cmd->add_option("--dec-blocks", dec_blocks, "stcn decoder blocks")->capture_default_str();
        cmd->add_option("--dec-layers", dec_layers, "stcn decoder layers per block")->capture_default_str();
        cmd->add_option("--stcn-dims", stcn_dims, "stcn latent dims top-down, comma separated")
            ->capture_default_str();
        cmd->add_option("--init-seed", init_seed, "weight init seed")->capture_default_str();
    }

    models::Config resolve(int corpus_bits) const {
        models::Config cfg;
        cfg.kind = models::kind_from_string(model);
        cfg.output.kind = output == "gaussian" ? dists::OutputKind::gaussian : dists::OutputKind::dmol;
        require(output == "gaussian" || output == "dmol", "unknown output distribution " + output);
        cfg.output.mixture = mixture;
        cfg.output.bit_depth = bit_depth > 0 ? bit_depth : corpus_bits;
        cfg.output.var_floor = var_floor;
        cfg.dz = dz;
        cfg.dd = dd;
        cfg.dc = dc;
        cfg.mlp_hidden = mlp_hidden;
        cfg.layers = layers;
        cfg.wn_blocks = wn_blocks;
        cfg.wn_layers = wn_layers;
        cfg.dec_blocks = dec_blocks;
        cfg.dec_layers = dec_layers;
        cfg.init_seed = init_seed;
        if (cfg.kind == models::Kind::cwvae) {
            cfg.stack = 1;
            cfg.stride_base = stride > 0 ? stride : stack;  // "s refers to s_1"
            cfg.stride_factor = stride_factor;
            if (cfg.layers == 0) cfg.layers = 1;
        } else {
            cfg.stack = static_cast<int>(stack);
            if (cfg.layers == 0) cfg.layers = cfg.kind == models::Kind::stcn ? 5 : 1;
        }
        if (!stcn_dims.empty()) {
            cfg.stcn_dims.clear();
            std::istringstream ss(stcn_dims);
            std::string d;
            while (std::getline(ss, d, ',')) cfg.stcn_dims.push_back(std::stol(d));
        }
        cfg.validate();
        return cfg;
    }
};

int corpus_bits_of(const std::vector<audio::EncodedSequence>& seqs) {
    return seqs.empty() ? 16 : seqs[0].bit_depth;
}

void apply_encoding(std::vector<audio::EncodedSequence>& seqs, const std::string& encoding) {
    if (encoding.empty()) return;
    require(encoding == "mu_law" || encoding == "linear", "unknown encoding " + encoding);
    for (auto& s : seqs) {
        const bool is_mu = s.encoding == audio::EncodedSequence::Encoding::mu_law;
        if (encoding == "mu_law" && !is_mu) {
            for (auto& v : s.values) v = audio::quantize(audio::mulaw_encode(v), s.bit_depth);
            s.encoding = audio::EncodedSequence::Encoding::mu_law;
        } else if (encoding == "linear" && is_mu) {
            for (auto& v : s.values) v = audio::quantize(audio::mulaw_decode(v), s.bit_depth);
            s.encoding = audio::EncodedSequence::Encoding::linear;
        }
    }
}

void write_resolved(CLI::App& app, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "config.resolved");
    out << app.config_to_str(true, true);
}

void split_val(const std::vector<audio::EncodedSequence>& all, double val_frac,
               std::vector<audio::EncodedSequence>& train_set, std::vector<audio::EncodedSequence>& val_set) {
    const size_t n_val = static_cast<size_t>(std::floor(val_frac * static_cast<double>(all.size())));
    train_set.assign(all.begin(), all.end() - static_cast<long>(n_val));
    val_set.assign(all.end() - static_cast<long>(n_val), all.end());
    require(!train_set.empty(), "validation split leaves no training data");
}

// representation sources for the probe: model latent/hidden layers and mel
struct RepSource {
    std::string name;
    bool stochastic = false;
    // utterances for a given resample draw
    std::function<std::vector<probe::ProbeUtterance>(int)> draw;
};

std::vector<RepSource> model_rep_sources(models::SequenceModel& model,
                                         const std::vector<audio::EncodedSequence>& data, uint64_t seed) {
    std::vector<RepSource> out;
    const bool stochastic = model.latent_layers() > 0;
    const int n_layers = std::max(1, model.latent_layers());
    auto build = [&model, &data, seed](int layer, int draw_idx) {
        std::vector<probe::ProbeUtterance> utts;
        for (size_t i = 0; i < data.size(); ++i) {
            auto x = audio::stack(data[i], model.config().stack);
            models::ElboOptions opt;
            opt.noise_seed = seed ^ (0x9e37ull + static_cast<uint64_t>(draw_idx) * 1315423911ull);
            opt.stream = i;
            auto traj = model.infer(x, opt);
            const auto& lt = traj.layers[static_cast<size_t>(layer)];
            probe::ProbeUtterance u;
            u.id = data[i].id;
            u.rep = lt.samples;
            u.rep_times = lt.times;
            u.stride_frames = lt.stride_frames;
            u.spans = probe::spans_from_labels(data[i].labels);
            for (const auto& s : u.spans) u.ref_labels.push_back(s.label);
            utts.push_back(std::move(u));
        }
        return utts;
    };
    // probe every layer and let the report mark the best one
    auto traj0 = model.infer(audio::stack(data[0], model.config().stack), models::ElboOptions{});
    for (int l = 0; l < static_cast<int>(traj0.layers.size()); ++l) {
        RepSource src;
        src.name = models::to_string(model.config().kind) + "_l" + std::to_string(l + 1);
        src.stochastic = stochastic;
        src.draw = [build, l](int k) { return build(l, k); };
        out.push_back(std::move(src));
    }
    (void)n_layers;
    return out;
}

RepSource mel_rep_source(const std::vector<audio::EncodedSequence>& data, const probe::MelConfig& cfg) {
    RepSource src;
    src.name = "mel";
    src.stochastic = false;
    src.draw = [&data, cfg](int) {
        std::vector<probe::ProbeUtterance> utts;
        for (const auto& seq : data) {
            auto frames = probe::mel_frontend(seq.values, cfg);
            probe::ProbeUtterance u;
            u.id = seq.id;
            u.rep = frames;
            u.stride_frames = cfg.hop;
            for (size_t t = 0; t < frames.size(); ++t)
                u.rep_times.push_back(static_cast<long>(t) * cfg.hop + 1);
            u.spans = probe::spans_from_labels(seq.labels);
            for (const auto& s : u.spans) u.ref_labels.push_back(s.label);
            utts.push_back(std::move(u));
        }
        return utts;
    };
    return src;
}

int cmd_synth(const std::string& out_dir, const audio::SynthSpec& spec) {
    auto seqs = audio::synth_dataset(spec);
    write_corpus(out_dir, seqs);
    audio::write_manifest((fs::path(out_dir) / "labels.tsv").string(), seqs);
    std::cout << "wrote " << seqs.size() << " sequences to " << out_dir << "\n";
    return 0;
}

train::TrainConfig with_default_validation(train::TrainConfig t, bool has_val) {
    if (t.val_every == 0 && has_val) t.val_every = std::max(1L, t.max_steps / 10);
    return t;
}

struct BudgetTier {
    std::string name;
    double fraction = 1.0;
    double dropout = 0.3;
};

std::vector<BudgetTier> parse_budgets(const std::string& text) {
    std::vector<BudgetTier> tiers;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        BudgetTier t;
        require(std::sscanf(item.c_str(), "%lf:%lf", &t.fraction, &t.dropout) == 2,
                "bad --budgets entry " + item);
        std::ostringstream name;
        name << t.fraction;
        t.name = name.str();
        tiers.push_back(t);
    }
    require(!tiers.empty(), "no label budgets given");
    return tiers;
}

int cmd_probe(const std::string& data_dir, const std::string& ckpt, const std::string& out_dir,
              const std::string& reps_sel, const std::string& budgets_text, double test_frac, int resample,
              int knn_k, int lda_knn_dims, int lda_scatter_dims, probe::AsrConfig asr_base, int mel_bins,
              long mel_hop, long mel_window, uint64_t seed, CLI::App& app) {
    auto data = load_corpus(data_dir);
    bool labeled = false;
    for (const auto& s : data) labeled = labeled || !s.labels.empty();
    require(labeled, "probe needs a corpus with label spans in its manifest");
    int classes = 0;
    for (const auto& s : data)
        for (int l : s.labels) classes = std::max(classes, l + 1);

    fs::create_directories(out_dir);
    write_resolved(app, out_dir);

    std::vector<RepSource> sources;
    std::unique_ptr<models::SequenceModel> model;
    if (!ckpt.empty() && (reps_sel == "all" || reps_sel == "model")) {
        auto loaded = train::load_checkpoint(ckpt);
        model = std::move(loaded.model);
        auto srcs = model_rep_sources(*model, data, seed);
        sources.insert(sources.end(), srcs.begin(), srcs.end());
    }
    if (reps_sel == "all" || reps_sel == "mel") {
        probe::MelConfig mel;
        mel.n_mels = mel_bins;
        mel.hop = mel_hop;
        mel.window = mel_window;
        mel.sample_rate = data[0].sample_rate;
        sources.push_back(mel_rep_source(data, mel));
    }
    require(!sources.empty(), "no representation sources selected (checkpoint missing?)");

    const size_t n_test = std::max<size_t>(1, static_cast<size_t>(std::floor(test_frac * data.size())));
    const size_t n_train = data.size() - n_test;
    require(n_train >= 1, "probe: test fraction leaves no training utterances");
    auto tiers = parse_budgets(budgets_text);

    std::ofstream per_csv(fs::path(out_dir) / "per_report.csv");
    per_csv << "budget,representation,per,best\n";
    std::ofstream knn_csv(fs::path(out_dir) / "knn.csv");
    knn_csv << "representation,k,dims,accuracy\n";
    std::ofstream lda_csv(fs::path(out_dir) / "lda_scatter.csv");
    lda_csv << "representation,label";
    for (int d = 0; d < lda_scatter_dims; ++d) lda_csv << ",c" << d + 1;
    lda_csv << "\n";

    std::map<std::string, std::map<std::string, double>> per_by_budget;  // budget -> rep -> per
    for (const auto& src : sources) {
        const int draws = src.stochastic ? resample : 1;
        std::vector<std::vector<probe::ProbeUtterance>> cached;
        for (int k = 0; k < draws; ++k) cached.push_back(src.draw(k));

        // span means for LDA / KNN, pooled over utterances
        std::vector<std::vector<double>> vectors;
        std::vector<int> span_labels;
        for (size_t i = 0; i < data.size(); ++i) {
            const auto& u0 = cached[0][i];
            if (u0.rep.empty()) continue;
            probe::RepDraw rd = [&](int k) { return cached[static_cast<size_t>(k % draws)][i].rep; };
            auto avg = probe::segment_average(rd, draws, u0.spans, u0.rep_times, u0.stride_frames);
            vectors.insert(vectors.end(), avg.vectors.begin(), avg.vectors.end());
            span_labels.insert(span_labels.end(), avg.labels.begin(), avg.labels.end());
        }
        if (classes >= 2 && static_cast<int>(vectors.size()) > classes) {
            const int kd = std::min(lda_knn_dims, classes - 1);
            auto proj = probe::lda_fit(vectors, span_labels, kd);
            std::vector<std::vector<double>> projected;
            for (const auto& v : vectors) projected.push_back(proj.project(v));
            knn_csv << src.name << "," << knn_k << "," << kd << ","
                    << probe::knn_loo(projected, span_labels, knn_k) << "\n";
            const int sd = std::min(lda_scatter_dims, classes - 1);
            auto sproj = probe::lda_fit(vectors, span_labels, sd);
            for (size_t i = 0; i < vectors.size(); ++i) {
                auto p = sproj.project(vectors[i]);
                lda_csv << src.name << "," << span_labels[i];
                for (int d = 0; d < lda_scatter_dims; ++d)
                    lda_csv << "," << (d < sd ? p[static_cast<size_t>(d)] : 0.0);
                lda_csv << "\n";
            }
        }

        // representation dump for downstream tooling
        probe::write_representations((fs::path(out_dir) / (src.name + ".reps.bin")).string(),
                                     (fs::path(out_dir) / (src.name + ".reps.tsv")).string(), cached[0]);

        // CTC probe per label budget
        std::vector<probe::ProbeUtterance> test_utts(cached[0].begin() + static_cast<long>(n_train),
                                                     cached[0].end());
        for (const auto& tier : tiers) {
            const size_t n_lab = std::max<size_t>(1, static_cast<size_t>(std::floor(tier.fraction * n_train)));
            probe::AsrConfig acfg = asr_base;
            acfg.dropout = tier.dropout;
            acfg.classes = classes;
            acfg.seed = seed ^ 0xc7c;
            probe::EpochData provider = [&, n_lab](long epoch) {
                const auto& full = cached[static_cast<size_t>(epoch % draws)];
                return std::vector<probe::ProbeUtterance>(full.begin(), full.begin() + static_cast<long>(n_lab));
            };
            auto res = probe::asr_probe_train(provider, test_utts, acfg);
            per_by_budget[tier.name][src.name] = res.per;
            std::cout << "probe " << src.name << " budget " << tier.name << " per " << res.per << "\n";
        }
    }
    for (const auto& [budget, reps] : per_by_budget) {
        std::string best;
        double best_per = std::numeric_limits<double>::infinity();
        for (const auto& [rep, per] : reps) {
            if (per < best_per) {
                best_per = per;
                best = rep;
            }
        }
        for (const auto& [rep, per] : reps) {
            per_csv << budget << "," << rep << "," << per << "," << (rep == best ? 1 : 0) << "\n";
        }
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"sequence latent variable model benchmark"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from a flat key = value file");
    app.fallthrough(false);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    std::string synth_out;
    audio::SynthSpec spec;
    std::string regimes_text = "440:0.45|1320:0.45";
    bool linear_flag = false;
    synth->add_option("--out", synth_out, "output corpus directory")->required();
    synth->add_option("--n", spec.count, "sequence count")->capture_default_str();
    synth->add_option("--min-frames", spec.min_frames)->capture_default_str();
    synth->add_option("--max-frames", spec.max_frames)->capture_default_str();
    synth->add_option("--sample-rate", spec.sample_rate)->capture_default_str();
    synth->add_option("--bit-depth", spec.bit_depth)->capture_default_str();
    synth->add_option("--noise", spec.noise_amp, "additive noise amplitude")->capture_default_str();
    synth->add_option("--regime-frames", spec.regime_frames, "frames per label regime")
        ->capture_default_str();
    synth->add_option("--regimes", regimes_text,
                      "regimes 'f:a,f:a|f:a' (freq:amp pairs; '|' separates regimes)")
        ->capture_default_str();
    synth->add_flag("--linear", linear_flag, "store linear PCM instead of mu-law");
    synth->add_option("--seed", spec.seed)->capture_default_str();

    // ---- train ----
    auto* traincmd = app.add_subcommand("train", "train a model");
    std::string train_data, train_val_data, train_out, train_encoding;
    double val_frac = 0.0;
    ModelFlags mflags;
    train::TrainConfig tcfg;
    mflags.add_options(traincmd);
    traincmd->add_option("--data", train_data, "training corpus directory")->required();
    traincmd->add_option("--val-data", train_val_data, "validation corpus directory");
    traincmd->add_option("--val-frac", val_frac, "tail fraction of --data used for validation")
        ->capture_default_str();
    traincmd->add_option("--out", train_out, "run output directory")->required();
    traincmd->add_option("--encoding", train_encoding, "re-encode corpus: mu_law|linear");
    traincmd->add_option("--lr", tcfg.lr)->capture_default_str();
    traincmd->add_option("--batch", tcfg.batch_size)->capture_default_str();
    traincmd->add_option("--steps", tcfg.max_steps)->capture_default_str();
    traincmd->add_option("--segment-length", tcfg.segment_length)->capture_default_str();
    traincmd->add_option("--kl-warmup", tcfg.kl_warmup_steps)->capture_default_str();
    traincmd->add_option("--clip", tcfg.clip_norm)->capture_default_str();
    traincmd->add_option("--log-every", tcfg.log_every)->capture_default_str();
    traincmd->add_option("--val-every", tcfg.val_every)->capture_default_str();
    traincmd->add_option("--stop-bpf", tcfg.stop_bpf)->capture_default_str();
    traincmd->add_option("--seed", tcfg.seed)->capture_default_str();

    // ---- eval ----
    auto* evalcmd = app.add_subcommand("eval", "evaluate a checkpoint or baseline");
    std::string eval_data, eval_ckpt, eval_baseline, eval_out, eval_encoding, eval_fit_data;
    long eval_segment = 0;
    uint64_t eval_seed = 0;
    double flac_bpf = -1.0;
    int eval_threads = 1;
    evalcmd->add_option("--data", eval_data, "evaluation corpus directory")->required();
    evalcmd->add_option("--checkpoint", eval_ckpt, "model checkpoint");
    evalcmd->add_option("--baseline", eval_baseline, "uniform|fitdmol");
    evalcmd->add_option("--fit-data", eval_fit_data, "corpus for fitting the dmol baseline");
    evalcmd->add_option("--out", eval_out, "output directory")->required();
    evalcmd->add_option("--segment-frames", eval_segment, "evaluation segment length (0 = full)")
        ->capture_default_str();
    evalcmd->add_option("--encoding", eval_encoding, "re-encode corpus: mu_law|linear");
    evalcmd->add_option("--seed", eval_seed)->capture_default_str();
    evalcmd->add_option("--flac-bpf", flac_bpf, "append a FLAC constant row with this bpf");
    evalcmd->add_option("--threads", eval_threads, "worker count (capped by SLVM_THREADS)")
        ->capture_default_str();

    // ---- probe ----
    auto* probecmd = app.add_subcommand("probe", "latent representation probing");
    std::string probe_data, probe_ckpt, probe_out, probe_reps = "all", probe_budgets = "1.0:0.3,0.3:0.35,0.1:0.4";
    double probe_test_frac = 0.25;
    int probe_resample = 10, knn_k = 5, lda_knn_dims = 5, lda_scatter_dims = 2;
    probe::AsrConfig asr_cfg;
    long mel_hop = 64, mel_window = 128;
    int mel_bins = 80;
    uint64_t probe_seed = 0;
    probecmd->add_option("--data", probe_data, "labeled corpus directory")->required();
    probecmd->add_option("--checkpoint", probe_ckpt, "model checkpoint for latent representations");
    probecmd->add_option("--out", probe_out, "output directory")->required();
    probecmd->add_option("--reps", probe_reps, "all|mel|model");
    probecmd->add_option("--budgets", probe_budgets, "label budgets 'frac:dropout,...'")
        ->capture_default_str();
    probecmd->add_option("--test-frac", probe_test_frac)->capture_default_str();
    probecmd->add_option("--resample", probe_resample, "posterior draws for span means")
        ->capture_default_str();
    probecmd->add_option("--knn-k", knn_k)->capture_default_str();
    probecmd->add_option("--lda-dims", lda_knn_dims, "LDA dims for the KNN probe")->capture_default_str();
    probecmd->add_option("--lda-scatter-dims", lda_scatter_dims)->capture_default_str();
    probecmd->add_option("--asr-width", asr_cfg.width)->capture_default_str();
    probecmd->add_option("--asr-layers", asr_cfg.layers)->capture_default_str();
    probecmd->add_option("--asr-epochs", asr_cfg.epochs)->capture_default_str();
    probecmd->add_option("--asr-lr", asr_cfg.lr)->capture_default_str();
    probecmd->add_option("--mel-bins", mel_bins)->capture_default_str();
    probecmd->add_option("--mel-hop", mel_hop)->capture_default_str();
    probecmd->add_option("--mel-window", mel_window)->capture_default_str();
    probecmd->add_option("--seed", probe_seed)->capture_default_str();

    // ---- sample ----
    auto* samplecmd = app.add_subcommand("sample", "draw unconditional samples from a checkpoint");
    std::string sample_ckpt, sample_out;
    long sample_n = 4, sample_frames = 16000;
    uint64_t sample_seed = 0;
    bool decode_mulaw = false;
    samplecmd->add_option("--checkpoint", sample_ckpt)->required();
    samplecmd->add_option("--out", sample_out)->required();
    samplecmd->add_option("--n", sample_n)->capture_default_str();
    samplecmd->add_option("--frames", sample_frames)->capture_default_str();
    samplecmd->add_option("--seed", sample_seed)->capture_default_str();
    samplecmd->add_flag("--decode-mulaw", decode_mulaw, "mu-law expand before writing");

    // ---- report ----
    auto* reportcmd = app.add_subcommand("report", "merge report tables");
    std::vector<std::string> report_inputs;
    std::string report_out;
    double report_flac = -1.0;
    reportcmd->add_option("--inputs", report_inputs, "report CSVs to merge")->required();
    reportcmd->add_option("--out", report_out, "merged CSV path")->required();
    reportcmd->add_option("--flac-bpf", report_flac, "append a FLAC constant row");

    try {
        app.parse(argc, argv);

        if (*synth) {
            spec.mu_law = !linear_flag;
            spec.regimes.clear();
            std::istringstream rs(regimes_text);
            std::string regime;
            while (std::getline(rs, regime, '|')) {
                audio::SynthRegime r;
                std::istringstream ps(regime);
                std::string pair;
                while (std::getline(ps, pair, ',')) {
                    double f = 0, a = 0;
                    require(std::sscanf(pair.c_str(), "%lf:%lf", &f, &a) == 2,
                            "bad --regimes entry " + pair);
                    r.freqs_hz.push_back(f);
                    r.amps.push_back(a);
                }
                spec.regimes.push_back(std::move(r));
            }
            write_resolved(app, synth_out);
            return cmd_synth(synth_out, spec);
        }

        if (*traincmd) {
            auto all = load_corpus(train_data);
            apply_encoding(all, train_encoding);
            std::vector<audio::EncodedSequence> train_set, val_set;
            if (!train_val_data.empty()) {
                train_set = all;
                val_set = load_corpus(train_val_data);
                apply_encoding(val_set, train_encoding);
            } else {
                split_val(all, val_frac, train_set, val_set);
            }
            auto mcfg = mflags.resolve(corpus_bits_of(train_set));
            auto model = models::make_model(mcfg);
            write_resolved(app, train_out);
            optim::AdamState opt_state;
            auto result =
                train::fit(*model, train_set, val_set, with_default_validation(tcfg, !val_set.empty()), opt_state);
            train::write_metrics_csv((fs::path(train_out) / "metrics.csv").string(), result.logs,
                                     std::max(1, model->latent_layers()));
            train::save_checkpoint((fs::path(train_out) / "checkpoint.slvm").string(), *model, opt_state,
                                   result.steps_run, tcfg.seed);
            std::cout << "trained " << result.steps_run << " steps, final train bpf "
                      << result.final_train_bpf;
            if (!val_set.empty()) std::cout << ", best val bpf " << result.best_val_bpf;
            std::cout << "\n";
            return 0;
        }

        if (*evalcmd) {
            auto data = load_corpus(eval_data);
            apply_encoding(data, eval_encoding);
            fs::create_directories(eval_out);
            write_resolved(app, eval_out);
            std::vector<eval::ReportRow> rows;
            if (!eval_baseline.empty()) {
                require(eval_ckpt.empty(), "--baseline and --checkpoint are mutually exclusive");
                const int bits = corpus_bits_of(data);
                if (eval_baseline == "uniform") {
                    eval::ReportRow row{"1", "Uniform", "Uninformed", dists::baseline_uniform(bits),
                                        "computed"};
                    rows.push_back(row);
                } else if (eval_baseline == "fitdmol") {
                    auto fit_on = eval_fit_data.empty() ? data : load_corpus(eval_fit_data);
                    apply_encoding(fit_on, eval_encoding);
                    std::vector<double> frames;
                    for (const auto& s : fit_on) frames.insert(frames.end(), s.values.begin(), s.values.end());
                    auto fit = dists::baseline_fit_dmol(frames, bits);
                    double nats = 0.0;
                    long count = 0;
                    for (const auto& s : data) {
                        for (double v : s.values) nats -= dists::dmol_log_prob(fit.params, v);
                        count += s.frames();
                    }
                    eval::ReportRow row{"1", "DMoL", "Fitted-2", eval::to_bpf(nats, count), "computed"};
                    rows.push_back(row);
                } else {
                    throw contract_error("unknown baseline " + eval_baseline);
                }
            } else {
                require(!eval_ckpt.empty(), "eval needs --checkpoint or --baseline");
                auto ck = train::load_checkpoint(eval_ckpt);
                eval::EvalConfig ecfg;
                ecfg.segment_frames = eval_segment;
                ecfg.seed = eval_seed;
                ecfg.threads = eval_threads;
                auto record = eval::evaluate(*ck.model, data, ecfg);
                eval::write_per_example_csv((fs::path(eval_out) / "per_example.csv").string(), record);
                const auto& mc = ck.model->config();
                std::ostringstream cfgname;
                cfgname << "Dz=" << mc.dz << " L=" << std::max(1, ck.model->latent_layers());
                const long s_col = mc.kind == models::Kind::cwvae ? mc.stride_base : mc.stack;
                eval::ReportRow row{std::to_string(s_col), models::to_string(mc.kind), cfgname.str(),
                                    record.bpf(), "computed"};
                rows.push_back(row);
            }
            if (flac_bpf > 0.0) {
                rows.push_back({"-", "FLAC", "Linear PCM", flac_bpf, "constant:flac"});
            }
            eval::write_report_csv((fs::path(eval_out) / "report.csv").string(), rows);
            for (const auto& r : rows) {
                std::cout << r.s << "," << r.model << "," << r.config << "," << std::fixed
                          << std::setprecision(2) << r.bpf << "\n";
            }
            return 0;
        }

        if (*probecmd) {
            return cmd_probe(probe_data, probe_ckpt, probe_out, probe_reps, probe_budgets, probe_test_frac,
                             probe_resample, knn_k, lda_knn_dims, lda_scatter_dims, asr_cfg, mel_bins,
                             mel_hop, mel_window, probe_seed, app);
        }

        if (*samplecmd) {
            auto ck = train::load_checkpoint(sample_ckpt);
            fs::create_directories(sample_out);
            write_resolved(app, sample_out);
            for (long i = 0; i < sample_n; ++i) {
                Rng rng = Rng(sample_seed).derive(0x5a, static_cast<uint64_t>(i));
                auto values = ck.model->sample(sample_frames, rng);
                if (decode_mulaw) {
                    for (auto& v : values) v = audio::mulaw_decode(v);
                }
                std::ostringstream name;
                name << "sample_" << std::setw(3) << std::setfill('0') << i << ".wav";
                audio::write_wav((fs::path(sample_out) / name.str()).string(), values, 16000);
            }
            std::cout << "wrote " << sample_n << " samples to " << sample_out << "\n";
            return 0;
        }

        if (*reportcmd) {
            std::vector<eval::ReportRow> rows;
            for (const auto& path : report_inputs) {
                auto in = eval::read_report_csv(path);
                rows.insert(rows.end(), in.begin(), in.end());
            }
            if (report_flac > 0.0) rows.push_back({"-", "FLAC", "Linear PCM", report_flac, "constant:flac"});
            eval::write_report_csv(report_out, rows);
            std::cout << "merged " << rows.size() << " rows into " << report_out << "\n";
            return 0;
        }
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const contract_error& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric fault: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("slvm");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace cli
}  // namespace slvm
