#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "eidos/params.hpp"
#include "eidos/tensor.hpp"

namespace eidos {

// Default quantile grid {0.1, ..., 0.9}.
std::vector<double> default_quantile_levels();
void validate_levels(std::span<const double> levels);

// Two-layer d -> d channel-mixing MLP: silu(x A1 + a1) A2 + a2.
struct MlpParams {
    Tensor w1, b1, w2, b2;
};

struct MlpVars {
    Var w1, b1, w2, b2;
};

// Future aggregator: depthwise kernel of length l over the next l embeddings,
// followed by an MLP.
struct AggregatorParams {
    Tensor kernel;  // [l x d]
    MlpParams mlp;

    static AggregatorParams init(std::size_t horizon, std::size_t d, std::mt19937_64& rng);

    template <typename F>
    void visit(F&& f) {
        f("kernel", kernel);
        f("mlp.w1", mlp.w1);
        f("mlp.b1", mlp.b1);
        f("mlp.w2", mlp.w2);
        f("mlp.b2", mlp.b2);
    }
};

struct AggregatorVars {
    Var kernel;
    MlpVars mlp;
};

// Residual head: r = x + silu(x W_in + b_in) W_res + b_res, out = r W_out + b_out,
// d -> horizon*|Q| laid out step-major (index = step*|Q| + level).
struct QuantileHeadParams {
    Tensor w_in, b_in;    // [d x hidden], [1 x hidden]
    Tensor w_res, b_res;  // [hidden x d], [1 x d]
    Tensor w_out, b_out;  // [d x horizon*|Q|], [1 x horizon*|Q|]

    static QuantileHeadParams init(std::size_t d, std::size_t hidden, std::size_t horizon, std::size_t n_levels,
                                   std::mt19937_64& rng);
    std::size_t out_width() const { return w_out.cols(); }

    template <typename F>
    void visit(F&& f) {
        f("w_in", w_in);
        f("b_in", b_in);
        f("w_res", w_res);
        f("b_res", b_res);
        f("w_out", w_out);
        f("b_out", b_out);
    }
};

struct QuantileHeadVars {
    Var w_in, b_in, w_res, b_res, w_out, b_out;
};

struct LossWeights {
    double lambda_latent = 0.1;
    double lambda_gnd = 0.1;
    double lambda_pred = 1.0;

    void validate() const;
    double combine(double pred, double latent, double gnd) const {
        return lambda_pred * pred + lambda_latent * latent + lambda_gnd * gnd;
    }
};

AggregatorVars bind(ParamBinder& binder, const AggregatorParams& p);
QuantileHeadVars bind(ParamBinder& binder, const QuantileHeadParams& p);
// Every head parameter as a gradient-blocked view.
QuantileHeadVars bind_frozen(ParamBinder& binder, const QuantileHeadParams& p);

Var apply_mlp(Var x, const MlpVars& mlp);
Var apply_head(Var x, const QuantileHeadVars& head);

// Targets for predictor rows 0..T-l-1: row t aggregates z rows t+1..t+l.
// mlp == nullptr skips the MLP stage (identity).
Var aggregate_targets(Var z, Var kernel, const MlpVars* mlp, std::size_t horizon);
Var aggregate_targets(Var z, const AggregatorVars& agg, std::size_t horizon);

// -mean_t cos(pred_t, sg(target_t)); rows with norm < 1e-12 contribute 0.
Var latent_loss(Var pred, Var target);

// Pinball loss of a [l x |Q|] quantile block against l observations.
Var quantile_loss(Var pred_q, std::span<const double> y, std::span<const double> levels);

// [(T-l) x l] matrix of future windows: row t is x[t+1 .. t+l].
Tensor future_windows(std::span<const double> x, std::size_t horizon);

// Mean over rows of the pinball loss of head(rows) against their future windows.
Var forecast_loss(Var rows, std::span<const double> x, const QuantileHeadVars& head, std::span<const double> levels,
                  std::size_t horizon);

// Same as forecast_loss with a gradient-blocked head applied to aggregated targets.
Var grounding_loss(Var h_target, std::span<const double> x, const QuantileHeadVars& head_frozen,
                   std::span<const double> levels, std::size_t horizon);

}  // namespace eidos
