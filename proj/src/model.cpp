#include "eidos/model.hpp"

#include <cmath>

#include "eidos/errors.hpp"

namespace eidos {

std::size_t ModelConfig::median_index() const {
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (std::abs(levels[i] - 0.5) < 1e-12) return i;
    throw ConfigError("quantile levels must contain 0.5");
}

void ModelConfig::validate() const {
    backbone.validate();
    validate_levels(levels);
    median_index();
    if (horizon == 0) throw ConfigError("horizon must be positive");
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.backbone.d_model;
    ModelParams p;
    p.tokenizer = SiGluParams::init(cfg.resolved_d_ff(), d, rng);
    p.backbone = BackboneParams::init(cfg.backbone, rng);
    p.aggregator = AggregatorParams::init(cfg.horizon, d, rng);
    p.head = QuantileHeadParams::init(d, cfg.resolved_head_hidden(), cfg.horizon, cfg.levels.size(), rng);
    if (cfg.frozen_head_at_init) p.frozen_head = p.head;
    return p;
}

Tensor* ModelParams::find(const std::string& name) {
    Tensor* found = nullptr;
    visit([&](const std::string& n, Tensor& t) {
        if (n == name) found = &t;
    });
    return found;
}

std::size_t ModelParams::parameter_count() {
    std::size_t n = 0;
    visit_trainable([&](const std::string&, Tensor& t) { n += t.size(); });
    return n;
}

ModelVars bind(ParamBinder& binder, const ModelParams& p) {
    ModelVars v;
    v.tokenizer = bind(binder, p.tokenizer);
    v.backbone = bind(binder, p.backbone);
    v.aggregator = bind(binder, p.aggregator);
    v.head = bind(binder, p.head);
    v.grounding_head = bind_frozen(binder, p.frozen_head ? *p.frozen_head : p.head);
    return v;
}

JointLoss joint_loss(const ModelVars& vars, const ModelConfig& cfg, std::span<const double> x,
                     const LossWeights& weights) {
    const std::size_t T = x.size(), l = cfg.horizon;
    if (T <= l) {
        throw WindowError("joint_loss: window length " + std::to_string(T) + " must exceed horizon " +
                          std::to_string(l));
    }
    Tape& tape = *vars.tokenizer.w1.tape();
    Var z = embed_series(tape, x, vars.tokenizer);
    // Only rows 0..T-l-1 have a full future window; causality lets us drop the rest.
    Var h_pred = backbone_forward(slice_rows(z, 0, T - l), cfg.backbone, vars.backbone);
    Var h_target = aggregate_targets(z, vars.aggregator, l);

    JointLoss out;
    out.pred = forecast_loss(h_pred, x, vars.head, cfg.levels, l);
    out.latent = latent_loss(h_pred, h_target);
    out.gnd = grounding_loss(h_target, x, vars.grounding_head, cfg.levels, l);
    out.total = add(add(scale(out.pred, weights.lambda_pred), scale(out.latent, weights.lambda_latent)),
                    scale(out.gnd, weights.lambda_gnd));
    return out;
}

void check_finite(double pred, double latent, double gnd, double total) {
    if (!std::isfinite(pred)) throw TrainingGuardError("non-finite loss component: pred");
    if (!std::isfinite(latent)) throw TrainingGuardError("non-finite loss component: latent");
    if (!std::isfinite(gnd)) throw TrainingGuardError("non-finite loss component: gnd");
    if (!std::isfinite(total)) throw TrainingGuardError("non-finite loss component: total");
}

}  // namespace eidos
