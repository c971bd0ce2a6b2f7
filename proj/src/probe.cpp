#include "slvm/probe.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace slvm {
namespace probe {

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    require(n == im.size() && n > 0 && (n & (n - 1)) == 0, "fft_radix2: length must be a power of two");
    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.141592653589793 / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t j = 0; j < len / 2; ++j) {
                const size_t a = i + j, b = i + j + len / 2;
                const double xr = re[b] * cr - im[b] * ci;
                const double xi = re[b] * ci + im[b] * cr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// n_mels + 2 mel-spaced edge frequencies from 0 to Nyquist
std::vector<double> mel_edges(const MelConfig& cfg) {
    const double lo = hz_to_mel(0.0), hi = hz_to_mel(cfg.sample_rate / 2.0);
    std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
    for (size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (cfg.n_mels + 1));
    }
    return edges;
}

}  // namespace

std::vector<double> mel_band_centers_hz(const MelConfig& cfg) {
    auto edges = mel_edges(cfg);
    return std::vector<double>(edges.begin() + 1, edges.end() - 1);
}

std::vector<std::vector<double>> mel_frontend(const std::vector<double>& x, const MelConfig& cfg) {
    require(cfg.window >= cfg.hop && cfg.hop >= 1, "mel_frontend: window must be >= hop");
    require((cfg.window & (cfg.window - 1)) == 0, "mel_frontend: window must be a power of two");
    require(cfg.n_mels >= 1, "mel_frontend: need at least one filter");

    const long T = static_cast<long>(x.size());
    const long frames = T >= cfg.window ? (T - cfg.window) / cfg.hop + 1 : 0;
    const long bins = cfg.window / 2 + 1;

    // Hann window (periodic)
    std::vector<double> hann(static_cast<size_t>(cfg.window));
    for (long i = 0; i < cfg.window; ++i) {
        hann[static_cast<size_t>(i)] =
            0.5 * (1.0 - std::cos(2.0 * 3.141592653589793 * static_cast<double>(i) / static_cast<double>(cfg.window)));
    }

    // triangular filterbank over FFT bins
    auto edges = mel_edges(cfg);
    const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.window);
    std::vector<std::vector<double>> filters(static_cast<size_t>(cfg.n_mels),
                                             std::vector<double>(static_cast<size_t>(bins), 0.0));
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double fl = edges[static_cast<size_t>(m)], fc = edges[static_cast<size_t>(m) + 1],
                     fr = edges[static_cast<size_t>(m) + 2];
        for (long b = 0; b < bins; ++b) {
            const double f = b * bin_hz;
            double w = 0.0;
            if (f >= fl && f <= fc && fc > fl) w = (f - fl) / (fc - fl);
            else if (f > fc && f <= fr && fr > fc) w = (fr - f) / (fr - fc);
            filters[static_cast<size_t>(m)][static_cast<size_t>(b)] = w;
        }
    }

    std::vector<std::vector<double>> out(static_cast<size_t>(frames),
                                         std::vector<double>(static_cast<size_t>(cfg.n_mels)));
    std::vector<double> re(static_cast<size_t>(cfg.window)), im(static_cast<size_t>(cfg.window));
    for (long fidx = 0; fidx < frames; ++fidx) {
        const long off = fidx * cfg.hop;
        for (long i = 0; i < cfg.window; ++i) {
            re[static_cast<size_t>(i)] = x[static_cast<size_t>(off + i)] * hann[static_cast<size_t>(i)];
            im[static_cast<size_t>(i)] = 0.0;
        }
        fft_radix2(re, im);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            for (long b = 0; b < bins; ++b) {
                const double p = re[static_cast<size_t>(b)] * re[static_cast<size_t>(b)] +
                                 im[static_cast<size_t>(b)] * im[static_cast<size_t>(b)];
                acc += filters[static_cast<size_t>(m)][static_cast<size_t>(b)] * p;
            }
            out[static_cast<size_t>(fidx)][static_cast<size_t>(m)] = std::log(acc + 1e-10);
        }
    }
    return out;
}

std::vector<LabelSpan> spans_from_labels(const std::vector<int>& labels) {
    std::vector<LabelSpan> spans;
    const long T = static_cast<long>(labels.size());
    long start = 0;
    for (long t = 1; t <= T; ++t) {
        if (t == T || labels[static_cast<size_t>(t)] != labels[static_cast<size_t>(start)]) {
            spans.push_back({start, t, labels[static_cast<size_t>(start)]});
            start = t;
        }
    }
    return spans;
}

SegmentAverages segment_average(const RepDraw& draw, int n_resample, const std::vector<LabelSpan>& spans,
                                const std::vector<long>& rep_times, long stride_frames) {
    require(n_resample >= 1, "segment_average: n_resample must be >= 1");
    SegmentAverages out;
    // mean over draws first
    std::vector<std::vector<double>> mean = draw(0);
    require(mean.size() == rep_times.size(), "segment_average: representation/grid length mismatch");
    for (int k = 1; k < n_resample; ++k) {
        auto next = draw(k);
        require(next.size() == mean.size(), "segment_average: draw length changed between resamples");
        for (size_t r = 0; r < mean.size(); ++r)
            for (size_t d = 0; d < mean[r].size(); ++d) mean[r][d] += next[r][d];
    }
    for (auto& row : mean)
        for (auto& v : row) v /= static_cast<double>(n_resample);

    for (size_t si = 0; si < spans.size(); ++si) {
        const auto& span = spans[si];
        double weight = 0.0;
        std::vector<double> acc;
        for (size_t r = 0; r < rep_times.size(); ++r) {
            const long rb = rep_times[r] - 1;  // 0-based frame of this step
            const long re_ = rb + stride_frames;
            const long overlap = std::min(span.end, re_) - std::max(span.begin, rb);
            if (overlap <= 0) continue;
            if (acc.empty()) acc.assign(mean[r].size(), 0.0);
            for (size_t d = 0; d < mean[r].size(); ++d) acc[d] += static_cast<double>(overlap) * mean[r][d];
            weight += static_cast<double>(overlap);
        }
        if (weight <= 0.0) {
            std::cerr << "warning: span " << si << " [" << span.begin << "," << span.end
                      << ") overlaps no representation step; skipped\n";
            out.skipped.push_back(si);
            continue;
        }
        for (auto& v : acc) v /= weight;
        out.vectors.push_back(std::move(acc));
        out.labels.push_back(span.label);
    }
    return out;
}

std::vector<double> LdaProjection::project(const std::vector<double>& v) const {
    std::vector<double> out(basis.size(), 0.0);
    for (size_t i = 0; i < basis.size(); ++i) {
        require(basis[i].size() == v.size(), "LdaProjection: dimension mismatch");
        for (size_t d = 0; d < v.size(); ++d) out[i] += basis[i][d] * v[d];
    }
    return out;
}

LdaProjection lda_fit(const std::vector<std::vector<double>>& vectors, const std::vector<int>& labels,
                      int dims) {
    require(!vectors.empty() && vectors.size() == labels.size(), "lda_fit: empty or mismatched inputs");
    const long D = static_cast<long>(vectors[0].size());
    std::map<int, long> counts;
    for (int l : labels) counts[l]++;
    const long C = static_cast<long>(counts.size());
    require(dims >= 1 && dims <= C - 1, "lda_fit: dims must be in [1, classes-1]");

    Eigen::VectorXd global = Eigen::VectorXd::Zero(D);
    std::map<int, Eigen::VectorXd> mu;
    for (auto& [l, n] : counts) {
        (void)n;
        mu[l] = Eigen::VectorXd::Zero(D);
    }
    for (size_t i = 0; i < vectors.size(); ++i) {
        Eigen::Map<const Eigen::VectorXd> v(vectors[i].data(), D);
        global += v;
        mu[labels[i]] += v;
    }
    global /= static_cast<double>(vectors.size());
    for (auto& [l, m] : mu) m /= static_cast<double>(counts[l]);

    Eigen::MatrixXd Sw = Eigen::MatrixXd::Zero(D, D);
    Eigen::MatrixXd Sb = Eigen::MatrixXd::Zero(D, D);
    for (size_t i = 0; i < vectors.size(); ++i) {
        Eigen::Map<const Eigen::VectorXd> v(vectors[i].data(), D);
        Eigen::VectorXd c = v - mu[labels[i]];
        Sw += c * c.transpose();
    }
    for (auto& [l, m] : mu) {
        Eigen::VectorXd c = m - global;
        Sb += static_cast<double>(counts[l]) * c * c.transpose();
    }
    Sw += 1e-6 * Eigen::MatrixXd::Identity(D, D);

    // whiten by the Cholesky factor of Sw, then a symmetric eigensolve
    Eigen::LLT<Eigen::MatrixXd> llt(Sw);
    Eigen::MatrixXd L = llt.matrixL();
    Eigen::MatrixXd M = L.triangularView<Eigen::Lower>().solve(Sb);
    M = L.triangularView<Eigen::Lower>().solve(M.transpose()).transpose();
    M = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
    require(eig.info() == Eigen::Success, "lda_fit: eigensolver failed");

    LdaProjection proj;
    for (int k = 0; k < dims; ++k) {
        // eigenvalues ascend; take from the top
        Eigen::VectorXd u = eig.eigenvectors().col(D - 1 - k);
        Eigen::VectorXd w = L.transpose().triangularView<Eigen::Upper>().solve(u);
        std::vector<double> row(static_cast<size_t>(D));
        for (long d = 0; d < D; ++d) row[static_cast<size_t>(d)] = w(d);
        proj.basis.push_back(std::move(row));
    }
    return proj;
}

double knn_loo(const std::vector<std::vector<double>>& vectors, const std::vector<int>& labels, int k) {
    require(k >= 1, "knn_loo: k must be >= 1");
    require(vectors.size() == labels.size() && vectors.size() >= 2, "knn_loo: need at least two points");
    const size_t n = vectors.size();
    long correct = 0;
    std::vector<std::pair<double, size_t>> dist(n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            if (j == i) {
                dist[j] = {std::numeric_limits<double>::infinity(), j};
                continue;
            }
            double s = 0.0;
            for (size_t d = 0; d < vectors[i].size(); ++d) {
                const double df = vectors[i][d] - vectors[j][d];
                s += df * df;
            }
            dist[j] = {s, j};
        }
        const size_t kk = std::min(static_cast<size_t>(k), n - 1);
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(kk), dist.end());
        std::map<int, std::pair<long, double>> votes;  // label -> (count, summed distance)
        for (size_t j = 0; j < kk; ++j) {
            auto& v = votes[labels[dist[j].second]];
            v.first += 1;
            v.second += std::sqrt(dist[j].first);
        }
        int best = votes.begin()->first;
        for (auto& [l, v] : votes) {
            auto& b = votes[best];
            if (v.first > b.first || (v.first == b.first && v.second < b.second)) best = l;
        }
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

void write_representations(const std::string& bin_path, const std::string& manifest_path,
                           const std::vector<ProbeUtterance>& utterances) {
    std::ofstream bin(bin_path, std::ios::binary);
    std::ofstream man(manifest_path);
    require(bin.good() && man.good(), "write_representations: cannot open output files");
    for (const auto& u : utterances) {
        const uint32_t idlen = static_cast<uint32_t>(u.id.size());
        bin.write(reinterpret_cast<const char*>(&idlen), 4);
        bin.write(u.id.data(), idlen);
        const uint64_t T = u.rep.size();
        const uint64_t D = T > 0 ? u.rep[0].size() : 0;
        bin.write(reinterpret_cast<const char*>(&T), 8);
        bin.write(reinterpret_cast<const char*>(&D), 8);
        for (const auto& row : u.rep) {
            require(row.size() == D, "write_representations: ragged representation");
            bin.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(D * 8));
        }
        man << u.id << "\t" << u.stride_frames << "\t";
        for (size_t i = 0; i < u.spans.size(); ++i) {
            if (i) man << ";";
            man << u.spans[i].begin << "," << u.spans[i].end << "," << u.spans[i].label;
        }
        man << "\n";
    }
}

std::vector<ProbeUtterance> read_representations(const std::string& bin_path,
                                                 const std::string& manifest_path) {
    std::ifstream bin(bin_path, std::ios::binary);
    std::ifstream man(manifest_path);
    require(bin.good() && man.good(), "read_representations: cannot open input files");
    std::vector<ProbeUtterance> out;
    std::string line;
    while (std::getline(man, line)) {
        if (line.empty()) continue;
        ProbeUtterance u;
        std::istringstream ls(line);
        std::string field;
        std::getline(ls, u.id, '\t');
        std::getline(ls, field, '\t');
        u.stride_frames = std::stol(field);
        std::string spans;
        std::getline(ls, spans, '\t');
        std::istringstream ss(spans);
        std::string span;
        while (std::getline(ss, span, ';')) {
            LabelSpan s;
            std::sscanf(span.c_str(), "%ld,%ld,%d", &s.begin, &s.end, &s.label);
            u.spans.push_back(s);
        }
        uint32_t idlen = 0;
        bin.read(reinterpret_cast<char*>(&idlen), 4);
        std::string id(idlen, '\0');
        bin.read(id.data(), idlen);
        require(id == u.id, "read_representations: manifest and binary records out of sync");
        uint64_t T = 0, D = 0;
        bin.read(reinterpret_cast<char*>(&T), 8);
        bin.read(reinterpret_cast<char*>(&D), 8);
        u.rep.assign(T, std::vector<double>(D));
        for (auto& row : u.rep) bin.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(D * 8));
        for (uint64_t t = 0; t < T; ++t) u.rep_times.push_back(static_cast<long>(t) * u.stride_frames + 1);
        for (const auto& s : u.spans) {
            if (u.ref_labels.empty() || u.ref_labels.back() != s.label) u.ref_labels.push_back(s.label);
        }
        out.push_back(std::move(u));
    }
    return out;
}

}  // namespace probe
}  // namespace slvm
