#include "slvm/eval.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace slvm {
namespace eval {

namespace {
const double kLn2 = 0.6931471805599453;
}

long MetricsRecord::total_frames() const {
    long n = 0;
    for (const auto& e : examples) n += e.frames;
    return n;
}

double MetricsRecord::total_nats() const {
    double s = 0.0;
    for (const auto& e : examples) s += e.nll_nats;
    return s;
}

double MetricsRecord::bpf() const { return to_bpf(total_nats(), total_frames()); }

double MetricsRecord::recon_bpf() const {
    double s = 0.0;
    for (const auto& e : examples) s += e.recon_nats;
    return to_bpf(s, total_frames());
}

double MetricsRecord::kl_bpf_total() const {
    double s = 0.0;
    for (const auto& e : examples)
        for (double k : e.kl_nats) s += k;
    return to_bpf(s, total_frames());
}

double to_bpf(double total_nats, long total_frames) {
    require(total_frames > 0, "to_bpf: frame count must be positive");
    return total_nats / kLn2 / static_cast<double>(total_frames);
}

int worker_count(int requested) {
    int n = std::max(1, requested);
    if (const char* env = std::getenv("SLVM_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return n;
}

MetricsRecord evaluate(models::SequenceModel& model, const std::vector<audio::EncodedSequence>& data,
                       const EvalConfig& cfg) {
    MetricsRecord record;
    record.examples.resize(data.size());
    const int workers = worker_count(cfg.threads);

    auto eval_one = [&](size_t i) {
        auto x = audio::stack(data[i], model.config().stack);
        models::ElboOptions opt;
        opt.noise_seed = cfg.seed;
        opt.stream = i;
        const long seg = cfg.segment_frames > 0 ? cfg.segment_frames : std::max(1L, x.total_frames);
        auto v = model.evaluate_segmented(x, seg, opt);
        ExampleMetrics e;
        e.id = data[i].id;
        e.frames = v.frames;
        e.nll_nats = v.nll();
        e.recon_nats = -v.recon;
        e.kl_nats = v.kls;
        record.examples[i] = std::move(e);
    };

    if (workers <= 1 || data.size() <= 1) {
        for (size_t i = 0; i < data.size(); ++i) eval_one(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (size_t i = static_cast<size_t>(w); i < data.size(); i += static_cast<size_t>(workers)) {
                    eval_one(i);
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    return record;
}

void write_per_example_csv(const std::string& path, const MetricsRecord& record) {
    std::ofstream out(path);
    require(out.good(), "write_per_example_csv: cannot open " + path);
    out.precision(17);
    size_t layers = 0;
    for (const auto& e : record.examples) layers = std::max(layers, e.kl_nats.size());
    out << "id,frames,nll_nats,recon_nats";
    for (size_t l = 1; l <= layers; ++l) out << ",kl_nats_l" << l;
    out << "\n";
    for (const auto& e : record.examples) {
        out << e.id << "," << e.frames << "," << e.nll_nats << "," << e.recon_nats;
        for (size_t l = 0; l < layers; ++l) out << "," << (l < e.kl_nats.size() ? e.kl_nats[l] : 0.0);
        out << "\n";
    }
}

MetricsRecord read_per_example_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "read_per_example_csv: cannot open " + path);
    std::string line;
    std::getline(in, line);
    MetricsRecord record;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        ExampleMetrics e;
        std::getline(ls, e.id, ',');
        std::getline(ls, field, ',');
        e.frames = std::stol(field);
        std::getline(ls, field, ',');
        e.nll_nats = std::stod(field);
        std::getline(ls, field, ',');
        e.recon_nats = std::stod(field);
        while (std::getline(ls, field, ',')) e.kl_nats.push_back(std::stod(field));
        record.examples.push_back(std::move(e));
    }
    return record;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream out(path);
    require(out.good(), "write_report_csv: cannot open " + path);
    out.precision(10);
    out << "s,model,config,bpf,source\n";
    for (const auto& r : rows) {
        out << r.s << "," << r.model << "," << r.config << "," << r.bpf << "," << r.source << "\n";
    }
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "read_report_csv: cannot open " + path);
    std::string line;
    std::getline(in, line);
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ReportRow r;
        std::string field;
        std::getline(ls, r.s, ',');
        std::getline(ls, r.model, ',');
        std::getline(ls, r.config, ',');
        std::getline(ls, field, ',');
        r.bpf = std::stod(field);
        std::getline(ls, r.source, ',');
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace eval
}  // namespace slvm
