#pragma once

#include "mmvt/model.hpp"

namespace mmvt {

struct GradcheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t params_checked = 0;
    std::size_t elements_checked = 0;
};

// Central finite differences against the tape gradients for every parameter
// element, on the two-head smoothed loss. Relative error per element is
// |ad - fd| / max(|ad| + |fd|, 1e-6). Model must be f64 for h = 1e-5 to be
// meaningful.
GradcheckResult gradcheck_model(MMModel& m, const std::vector<Tensor>& inputs, int verb_target,
                                int noun_target, double h = 1e-5, double smoothing = 0.1);

// hidden 16, 2 layers per view, 4 frames at 32x32, one fusion, f64
ModelConfig tiny_gradcheck_config();

// deterministic inputs for the tiny config
std::vector<Tensor> tiny_gradcheck_inputs(const ModelConfig& cfg, Rng& rng);

}  // namespace mmvt
