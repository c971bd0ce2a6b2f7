#pragma once

#include <map>
#include <string>
#include <vector>

#include "slvm/numcore.hpp"

namespace slvm {
namespace optim {

using ParamTable = std::map<std::string, numcore::Tensor>;

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    long t = 0;
};

// Standard Adam with bias correction, reading each parameter's grad buffer.
// Parameters with no grad buffer are treated as zero-gradient (moments decay).
// A non-finite gradient aborts with the parameter's name.
void adam_step(ParamTable& params, AdamState& state, const AdamConfig& cfg);

void zero_grads(ParamTable& params);

// Global-norm gradient clip; returns the pre-clip norm.
double clip_grad_norm(ParamTable& params, double max_norm);

}  // namespace optim
}  // namespace slvm
