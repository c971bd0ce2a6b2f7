#pragma once

#include <vector>

#include "slvm/base.hpp"
#include "slvm/numcore.hpp"

namespace slvm {
namespace dists {

constexpr double kLogScaleMin = -7.0;  // floors DMoL scales, just under one 16-bit grid gap

// Discretized mixture of logistics over the b-bit amplitude grid. Bin
// half-width is 2^-b (half the grid gap); the lowest bin integrates from
// -inf and the highest to +inf.
struct DMoLParams {
    int mixture = 10;
    std::vector<double> logit_weights;
    std::vector<double> means;
    std::vector<double> log_scales;
    int bit_depth = 16;
};

struct GaussianParams {
    std::vector<double> mean;
    std::vector<double> log_var;
    double var_floor = 1e-4;  // sigma_min^2
};

// log p(x) in nats for a single grid value. Off-grid x is a contract violation.
double dmol_log_prob(const DMoLParams& p, double x);
double dmol_sample(const DMoLParams& p, Rng& rng);

// Diagonal Gaussian with floored variance, summed over dimensions.
double gaussian_log_prob(const GaussianParams& g, const std::vector<double>& x);
// frames * (-0.5 ln 2pi - 0.5 ln sigma_min^2): the per-dataset likelihood
// ceiling of a floored Gaussian with perfect predictions.
double max_gaussian_ll(double sigma_min, long frames);
// KL(q || p) for diagonal Gaussians, summed over dimensions. Floors ignored.
double gaussian_kl(const GaussianParams& q, const GaussianParams& p);

// b bits per frame, exactly.
double baseline_uniform(int bit_depth);

struct FitResult {
    DMoLParams params;
    double nats_per_frame = 0.0;  // negative mean log-likelihood
    double bpf = 0.0;
    long iterations = 0;
};

// Two-component DMoL fitted to the pooled training frames by Adam ascent
// until the relative improvement drops below 1e-6.
FitResult baseline_fit_dmol(const std::vector<double>& frames, int bit_depth);

// ---------------------------------------------------------------------------
// Graph builders used by the sequence models. Parameter layout per step row:
//   dmol:      [D*K logits | D*K means | D*K log_scales], component-minor
//   gaussian:  [D means | D log_vars]
// ---------------------------------------------------------------------------

enum class OutputKind { dmol, gaussian };

struct OutputSpec {
    OutputKind kind = OutputKind::dmol;
    int mixture = 10;
    int bit_depth = 16;
    double var_floor = 1e-4;

    long params_per_dim() const { return kind == OutputKind::dmol ? 3L * mixture : 2L; }
};

// Sum over steps and dims of mask * log p(x | params); params is
// [steps, D * params_per_dim], x and mask are flat [steps * D].
numcore::Tensor log_prob_graph(numcore::Tape& tp, const OutputSpec& spec,
                               const numcore::Tensor& params, const std::vector<double>& x,
                               const std::vector<double>& mask, long steps, long dim);

// Draw one frame value from the distribution of dim d encoded in a step row.
double sample_output(const OutputSpec& spec, const std::vector<double>& step_params, long dim_count,
                     long d, Rng& rng);

// KL(q || p) summed over all elements; all four tensors share a shape.
// row_mask, when given, weights each leading-dimension row (0 drops it).
numcore::Tensor gaussian_kl_graph(numcore::Tape& tp, const numcore::Tensor& q_mean,
                                  const numcore::Tensor& q_logvar, const numcore::Tensor& p_mean,
                                  const numcore::Tensor& p_logvar,
                                  const std::vector<double>* row_mask = nullptr);

// mean + exp(0.5 log_var) * noise with gradients to mean/log_var only.
numcore::Tensor reparam_sample_graph(numcore::Tape& tp, const numcore::Tensor& mean,
                                     const numcore::Tensor& log_var, const std::vector<double>& noise);

}  // namespace dists
}  // namespace slvm
