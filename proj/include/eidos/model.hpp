#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eidos/backbone.hpp"
#include "eidos/objectives.hpp"
#include "eidos/tokenizer.hpp"

namespace eidos {

struct ModelConfig {
    BackboneConfig backbone;
    std::size_t tokenizer_d_ff = 0;  // 0: use backbone.d_intermediate
    std::size_t head_hidden = 0;     // 0: use backbone.d_model
    std::size_t horizon = 64;
    std::vector<double> levels = default_quantile_levels();
    // false: the grounding head is a gradient-blocked view of the live head.
    // true: it is a snapshot taken at initialization and never updated.
    bool frozen_head_at_init = false;

    std::size_t resolved_d_ff() const { return tokenizer_d_ff ? tokenizer_d_ff : backbone.d_intermediate; }
    std::size_t resolved_head_hidden() const { return head_hidden ? head_hidden : backbone.d_model; }
    std::size_t median_index() const;
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
    SiGluParams tokenizer;
    BackboneParams backbone;
    AggregatorParams aggregator;
    QuantileHeadParams head;
    std::optional<QuantileHeadParams> frozen_head;

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    // Every tensor with a stable dotted name, in a fixed order.
    template <typename F>
    void visit(F&& f) {
        visit_trainable(f);
        if (frozen_head) frozen_head->visit([&](const std::string& n, Tensor& t) { f("frozen_head." + n, t); });
    }

    // Tensors the optimizer updates (excludes the init-time grounding snapshot).
    template <typename F>
    void visit_trainable(F&& f) {
        tokenizer.visit([&](const std::string& n, Tensor& t) { f("tokenizer." + n, t); });
        backbone.visit([&](const std::string& n, Tensor& t) { f("backbone." + n, t); });
        aggregator.visit([&](const std::string& n, Tensor& t) { f("aggregator." + n, t); });
        head.visit([&](const std::string& n, Tensor& t) { f("head." + n, t); });
    }

    Tensor* find(const std::string& name);
    std::size_t parameter_count();
};

struct ModelVars {
    SiGluVars tokenizer;
    BackboneVars backbone;
    AggregatorVars aggregator;
    QuantileHeadVars head;
    QuantileHeadVars grounding_head;  // gradient-blocked
};

ModelVars bind(ParamBinder& binder, const ModelParams& p);

struct JointLoss {
    Var total;
    Var pred;
    Var latent;
    Var gnd;
};

// Joint objective for one normalized window x of length T > horizon:
// lambda_pred * L_pred + lambda_latent * L_latent + lambda_gnd * L_gnd.
JointLoss joint_loss(const ModelVars& vars, const ModelConfig& cfg, std::span<const double> x,
                     const LossWeights& weights);

// Throws TrainingGuardError naming the first non-finite component.
void check_finite(double pred, double latent, double gnd, double total);

}  // namespace eidos
