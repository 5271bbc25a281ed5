#include "eidos/objectives.hpp"

#include <cmath>

#include "eidos/errors.hpp"

namespace eidos {

namespace {

constexpr double kNormFloor = 1e-12;

MlpParams init_mlp(std::size_t d, std::mt19937_64& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    return {init_normal({d, d}, s, rng), Tensor::zeros({1, d}), init_normal({d, d}, s, rng), Tensor::zeros({1, d})};
}

}  // namespace

std::vector<double> default_quantile_levels() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

void validate_levels(std::span<const double> levels) {
    if (levels.empty()) throw ConfigError("quantile levels: empty");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (!(levels[i] > 0.0 && levels[i] < 1.0)) throw ConfigError("quantile levels must lie in (0, 1)");
        if (i > 0 && !(levels[i] > levels[i - 1])) throw ConfigError("quantile levels must be strictly increasing");
    }
}

AggregatorParams AggregatorParams::init(std::size_t horizon, std::size_t d, std::mt19937_64& rng) {
    AggregatorParams p;
    p.kernel = init_normal({horizon, d}, 1.0 / std::sqrt(static_cast<double>(horizon)), rng);
    p.mlp = init_mlp(d, rng);
    return p;
}

QuantileHeadParams QuantileHeadParams::init(std::size_t d, std::size_t hidden, std::size_t horizon,
                                            std::size_t n_levels, std::mt19937_64& rng) {
    const std::size_t out = horizon * n_levels;
    QuantileHeadParams p;
    p.w_in = init_normal({d, hidden}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    p.b_in = Tensor::zeros({1, hidden});
    p.w_res = init_normal({hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    p.b_res = Tensor::zeros({1, d});
    p.w_out = init_normal({d, out}, 0.1 / std::sqrt(static_cast<double>(d)), rng);
    p.b_out = Tensor::zeros({1, out});
    return p;
}

void LossWeights::validate() const {
    if (!(lambda_latent >= 0.0) || !(lambda_gnd >= 0.0) || !(lambda_pred >= 0.0)) {
        throw ConfigError("loss weights must be non-negative");
    }
}

AggregatorVars bind(ParamBinder& binder, const AggregatorParams& p) {
    return {binder(p.kernel), {binder(p.mlp.w1), binder(p.mlp.b1), binder(p.mlp.w2), binder(p.mlp.b2)}};
}

QuantileHeadVars bind(ParamBinder& binder, const QuantileHeadParams& p) {
    return {binder(p.w_in), binder(p.b_in), binder(p.w_res), binder(p.b_res), binder(p.w_out), binder(p.b_out)};
}

QuantileHeadVars bind_frozen(ParamBinder& binder, const QuantileHeadParams& p) {
    return {binder.frozen(p.w_in),  binder.frozen(p.b_in),  binder.frozen(p.w_res),
            binder.frozen(p.b_res), binder.frozen(p.w_out), binder.frozen(p.b_out)};
}

Var apply_mlp(Var x, const MlpVars& mlp) {
    Var h = silu(add_row(matmul(x, mlp.w1), mlp.b1));
    return add_row(matmul(h, mlp.w2), mlp.b2);
}

Var apply_head(Var x, const QuantileHeadVars& head) {
    Var h = silu(add_row(matmul(x, head.w_in), head.b_in));
    Var r = add(x, add_row(matmul(h, head.w_res), head.b_res));
    return add_row(matmul(r, head.w_out), head.b_out);
}

Var aggregate_targets(Var z, Var kernel, const MlpVars* mlp, std::size_t horizon) {
    const std::size_t T = z.rows();
    if (kernel.rows() != horizon) {
        throw ConfigError("aggregator kernel length " + std::to_string(kernel.rows()) + " differs from horizon " +
                          std::to_string(horizon));
    }
    if (T <= horizon) {
        throw WindowError("aggregate_targets: sequence length " + std::to_string(T) + " must exceed horizon " +
                          std::to_string(horizon));
    }
    Var future = slice_rows(z, 1, T - 1);
    Var conv = depthwise_conv1d(future, kernel);
    return mlp ? apply_mlp(conv, *mlp) : conv;
}

Var aggregate_targets(Var z, const AggregatorVars& agg, std::size_t horizon) {
    return aggregate_targets(z, agg.kernel, &agg.mlp, horizon);
}

Var latent_loss(Var pred, Var target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("latent_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    Var p = l2_normalize_rows(pred, kNormFloor);
    Var t = l2_normalize_rows(stop_gradient(target), kNormFloor);
    return scale(mean(row_dot(p, t)), -1.0);
}

Var quantile_loss(Var pred_q, std::span<const double> y, std::span<const double> levels) {
    if (y.empty()) throw ContractError("quantile_loss: empty target");
    if (pred_q.rows() != y.size() || pred_q.cols() != levels.size()) {
        throw DimensionError("quantile_loss: prediction " + shape_str(pred_q.shape()) + " for " +
                             std::to_string(y.size()) + " steps and " + std::to_string(levels.size()) + " levels");
    }
    return pinball_mean(pred_q, pred_q.tape()->constant(Tensor::column(y)), levels);
}

Tensor future_windows(std::span<const double> x, std::size_t horizon) {
    if (x.size() <= horizon) {
        throw WindowError("future_windows: series length " + std::to_string(x.size()) + " must exceed horizon " +
                          std::to_string(horizon));
    }
    const std::size_t rows = x.size() - horizon;
    std::vector<double> out(rows * horizon);
    for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t s = 0; s < horizon; ++s) out[t * horizon + s] = x[t + 1 + s];
    return Tensor({rows, horizon}, std::move(out));
}

Var forecast_loss(Var rows, std::span<const double> x, const QuantileHeadVars& head, std::span<const double> levels,
                  std::size_t horizon) {
    Tensor y = future_windows(x, horizon);
    if (rows.rows() != y.rows()) {
        throw DimensionError("forecast_loss: " + std::to_string(rows.rows()) + " rows for " +
                             std::to_string(y.rows()) + " future windows");
    }
    Var pred = apply_head(rows, head);
    return pinball_mean(pred, rows.tape()->constant(std::move(y)), levels);
}

Var grounding_loss(Var h_target, std::span<const double> x, const QuantileHeadVars& head_frozen,
                   std::span<const double> levels, std::size_t horizon) {
    return forecast_loss(h_target, x, head_frozen, levels, horizon);
}

}  // namespace eidos
