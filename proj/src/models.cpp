#include "slvm/models.hpp"

#include <algorithm>
#include <sstream>

#include "models_impl.hpp"

namespace slvm {
namespace models {

std::string to_string(Kind k) {
    switch (k) {
        case Kind::lstm: return "lstm";
        case Kind::wavenet: return "wavenet";
        case Kind::vrnn: return "vrnn";
        case Kind::srnn: return "srnn";
        case Kind::stcn: return "stcn";
        case Kind::cwvae: return "cwvae";
    }
    return "?";
}

Kind kind_from_string(const std::string& s) {
    for (Kind k : {Kind::lstm, Kind::wavenet, Kind::vrnn, Kind::srnn, Kind::stcn, Kind::cwvae}) {
        if (to_string(k) == s) return k;
    }
    throw contract_error("unknown model kind: " + s);
}

void Config::validate() {
    require(stack >= 1, "stack must be >= 1");
    require(dz >= 1 && dd >= 1 && dc >= 1 && mlp_hidden >= 1, "dimensions must be positive");
    require(output.mixture >= 1, "mixture count must be >= 1");
    require(output.bit_depth >= 1 && output.bit_depth <= 24, "bit depth out of range");
    if (kind == Kind::stcn) {
        require(layers == 1 || layers == 5, "stcn supports 1 or 5 latent layers");
        if (stcn_dims.empty()) {
            stcn_dims = layers == 5 ? std::vector<long>{16, 32, 64, 128, 256} : std::vector<long>{256};
        }
        require(static_cast<int>(stcn_dims.size()) == layers, "stcn_dims must have one entry per layer");
    }
    if (kind == Kind::cwvae) {
        require(stack == 1, "cwvae consumes unstacked frames; the stride plays the role of the stack");
        require(layers >= 1, "cwvae needs at least one layer");
        require(stride_base >= 1, "cwvae stride base must be >= 1");
        require(stride_factor >= 2, "cwvae stride factor must be >= 2");
    }
    if (kind == Kind::wavenet || kind == Kind::stcn) {
        require(wn_blocks >= 1 && wn_layers >= 1, "wavenet stack shape must be positive");
    }
}

ElboValues values_of(const ElboParts& parts) {
    ElboValues v;
    v.recon = parts.recon->scalar();
    for (const auto& k : parts.kls) v.kls.push_back(k->scalar());
    v.frames = parts.frames;
    return v;
}

std::vector<std::vector<long>> cwvae_schedule(long total_frames, long stride_base, long stride_factor,
                                              int layers) {
    require(stride_base >= 1 && stride_factor >= 2 && layers >= 1, "bad schedule parameters");
    std::vector<std::vector<long>> out;
    long sl = stride_base;
    for (int l = 0; l < layers; ++l) {
        std::vector<long> times;
        for (long t = 1; t <= total_frames; t += sl) times.push_back(t);
        out.push_back(std::move(times));
        sl *= stride_factor;
    }
    return out;
}

std::vector<double> latent_noise(const ElboOptions& opt, long t_global, int layer, long n) {
    const uint64_t tag =
        (t_global == opt.resample_t && layer == opt.resample_layer) ? 0x6e02 : 0x6e01;
    Rng r = Rng(opt.noise_seed)
                .derive(tag, opt.stream, static_cast<uint64_t>(t_global), static_cast<uint64_t>(layer));
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = r.normal();
    return v;
}

std::vector<double> step_row(const audio::StackedSequence& x, long t) {
    return std::vector<double>(x.data.begin() + t * x.stack, x.data.begin() + (t + 1) * x.stack);
}

std::vector<double> mask_rows(const audio::StackedSequence& x, long begin, long end) {
    std::vector<double> m(static_cast<size_t>((end - begin) * x.stack), 0.0);
    for (long t = begin; t < end; ++t) {
        for (int d = 0; d < x.stack; ++d) {
            if (t * x.stack + d < x.total_frames) m[static_cast<size_t>((t - begin) * x.stack + d)] = 1.0;
        }
    }
    return m;
}

std::vector<double> value_rows(const audio::StackedSequence& x, long begin, long end) {
    return std::vector<double>(x.data.begin() + begin * x.stack, x.data.begin() + end * x.stack);
}

long count_mask(const std::vector<double>& mask) {
    long n = 0;
    for (double v : mask) n += v > 0.5 ? 1 : 0;
    return n;
}

double step_alive(const audio::StackedSequence& x, long t) {
    return t * x.stack < x.total_frames ? 1.0 : 0.0;
}

std::vector<double> padded_frames(const audio::StackedSequence& x, long frame_begin, long n) {
    std::vector<double> v(static_cast<size_t>(n), 0.0);
    const long avail = static_cast<long>(x.data.size());
    for (long i = 0; i < n; ++i) {
        const long f = frame_begin + i;
        if (f < avail) v[static_cast<size_t>(i)] = x.data[static_cast<size_t>(f)];
    }
    return v;
}

std::vector<double> padded_frame_mask(const audio::StackedSequence& x, long frame_begin, long n) {
    std::vector<double> m(static_cast<size_t>(n), 0.0);
    for (long i = 0; i < n; ++i) {
        if (frame_begin + i < x.total_frames) m[static_cast<size_t>(i)] = 1.0;
    }
    return m;
}

std::vector<double> sample_frame_row(const dists::OutputSpec& spec, const std::vector<double>& row,
                                     long dim, Rng& rng) {
    std::vector<double> out(static_cast<size_t>(dim));
    for (long d = 0; d < dim; ++d) {
        double v = dists::sample_output(spec, row, dim, d, rng);
        out[static_cast<size_t>(d)] = audio::quantize(v, spec.bit_depth);
    }
    return out;
}

ElboValues SequenceModel::run_full(const audio::StackedSequence& x, const ElboOptions& opt) {
    Tape tp;
    tp.recording = false;
    return values_of(elbo(tp, x, opt));
}

ElboValues SequenceModel::evaluate_segmented(const audio::StackedSequence& x, long /*segment_frames*/,
                                             const ElboOptions& opt) {
    return run_full(x, opt);
}

std::string config_to_text(const Config& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "kind = " << to_string(cfg.kind) << "\n";
    os << "stack = " << cfg.stack << "\n";
    os << "output = " << (cfg.output.kind == dists::OutputKind::dmol ? "dmol" : "gaussian") << "\n";
    os << "mixture = " << cfg.output.mixture << "\n";
    os << "bit_depth = " << cfg.output.bit_depth << "\n";
    os << "var_floor = " << cfg.output.var_floor << "\n";
    os << "dz = " << cfg.dz << "\n";
    os << "dd = " << cfg.dd << "\n";
    os << "dc = " << cfg.dc << "\n";
    os << "mlp_hidden = " << cfg.mlp_hidden << "\n";
    os << "layers = " << cfg.layers << "\n";
    os << "stride_base = " << cfg.stride_base << "\n";
    os << "stride_factor = " << cfg.stride_factor << "\n";
    os << "wn_blocks = " << cfg.wn_blocks << "\n";
    os << "wn_layers = " << cfg.wn_layers << "\n";
    os << "dec_blocks = " << cfg.dec_blocks << "\n";
    os << "dec_layers = " << cfg.dec_layers << "\n";
    os << "stcn_dims =";
    for (long d : cfg.stcn_dims) os << " " << d;
    os << "\n";
    os << "init_seed = " << cfg.init_seed << "\n";
    return os.str();
}

Config config_from_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t\r");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(val);
        if (key == "kind") cfg.kind = kind_from_string(val);
        else if (key == "stack") cfg.stack = std::stoi(val);
        else if (key == "output") cfg.output.kind = val == "dmol" ? dists::OutputKind::dmol : dists::OutputKind::gaussian;
        else if (key == "mixture") cfg.output.mixture = std::stoi(val);
        else if (key == "bit_depth") cfg.output.bit_depth = std::stoi(val);
        else if (key == "var_floor") cfg.output.var_floor = std::stod(val);
        else if (key == "dz") cfg.dz = std::stol(val);
        else if (key == "dd") cfg.dd = std::stol(val);
        else if (key == "dc") cfg.dc = std::stol(val);
        else if (key == "mlp_hidden") cfg.mlp_hidden = std::stol(val);
        else if (key == "layers") cfg.layers = std::stoi(val);
        else if (key == "stride_base") cfg.stride_base = std::stol(val);
        else if (key == "stride_factor") cfg.stride_factor = std::stol(val);
        else if (key == "wn_blocks") cfg.wn_blocks = std::stoi(val);
        else if (key == "wn_layers") cfg.wn_layers = std::stoi(val);
        else if (key == "dec_blocks") cfg.dec_blocks = std::stoi(val);
        else if (key == "dec_layers") cfg.dec_layers = std::stoi(val);
        else if (key == "stcn_dims") {
            cfg.stcn_dims.clear();
            std::istringstream vs(val);
            long d;
            while (vs >> d) cfg.stcn_dims.push_back(d);
        } else if (key == "init_seed") {
            cfg.init_seed = std::stoull(val);
        } else {
            throw contract_error("unknown model config key: " + key);
        }
    }
    return cfg;
}

std::unique_ptr<SequenceModel> make_model(const Config& cfg_in) {
    Config cfg = cfg_in;
    cfg.validate();
    switch (cfg.kind) {
        case Kind::lstm: return std::make_unique<LstmModel>(cfg);
        case Kind::wavenet: return std::make_unique<WaveNetModel>(cfg);
        case Kind::vrnn: return std::make_unique<VrnnModel>(cfg);
        case Kind::srnn: return std::make_unique<SrnnModel>(cfg);
        case Kind::stcn: return std::make_unique<StcnModel>(cfg);
        case Kind::cwvae: return std::make_unique<CwvaeModel>(cfg);
    }
    throw contract_error("unknown model kind");
}

}  // namespace models
}  // namespace slvm
