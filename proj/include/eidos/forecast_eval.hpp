#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eidos/config.hpp"
#include "eidos/datagen.hpp"
#include "eidos/model.hpp"

namespace eidos {

struct ForecastOptions {
    std::size_t block_l = 0;  // 0: the model horizon
    bool use_cache = true;
    bool sort_quantiles = false;
    // Rewrites the hidden state leaving each layer of a forward pass.
    std::function<Var(std::size_t layer, Var hidden)> intervene;
    bool intervene_first_pass_only = false;
};

struct ForecastResult {
    Tensor quantiles;  // [H x |Q|], original scale
    std::vector<double> levels;
    NormStats norm_stats;
    std::size_t horizon = 0;
    std::size_t forward_passes = 0;
    double crossing_rate = 0.0;  // before any sorting

    std::vector<double> median() const;
    std::vector<double> column(std::size_t level) const;
};

// Autoregressive block forecast. Medians are fed back in normalized scale.
ForecastResult forecast(std::span<const double> context, std::size_t H, const ModelConfig& cfg,
                        const ModelParams& params, const ForecastOptions& opts = {});

// Fraction of adjacent level pairs (t, q) with yhat^{q+1} < yhat^q.
double crossing_rate(const Tensor& quantiles);
void sort_quantile_rows(Tensor& quantiles);

void write_forecast_csv(const std::string& path, const ForecastResult& r);

// ---- metrics ------------------------------------------------------------------

// yhat_{T+h} = y_{T+h-m*ceil(h/m)}; contexts shorter than m fall back to m = 1.
std::vector<double> seasonal_naive(std::span<const double> context, std::size_t H, std::size_t m,
                                   std::size_t* m_used = nullptr);

double mase(std::span<const double> forecast, std::span<const double> truth, std::span<const double> insample,
            std::size_t m);

// Mean over (t, q) of 2 * pinball.
double crps_quantile(const Tensor& pred_q, std::span<const double> truth, std::span<const double> levels);
// crps_quantile / mean |truth|.
double crps_normalized(const Tensor& pred_q, std::span<const double> truth, std::span<const double> levels);
// Sum over (t, q) of 2 * pinball / sum |truth|.
double wql(const Tensor& pred_q, std::span<const double> truth, std::span<const double> levels);

// Degenerate quantile matrix: every level equals the point forecast.
Tensor point_as_quantiles(std::span<const double> point, std::size_t n_levels);

// ---- reports -------------------------------------------------------------------

struct EvalTask {
    std::string id;
    std::vector<double> context;
    std::vector<double> truth;
    std::size_t season_m = 1;
};

// Last H points of each record become the truth; the rest is the context.
std::vector<EvalTask> make_tasks(const std::vector<SeriesRecord>& records, std::size_t H);

struct TaskRow {
    std::string task_id;
    std::optional<double> mase, crps, wql;  // empty: undefined for this task
    std::optional<double> base_mase, base_crps;
    std::optional<double> mase_ratio, crps_ratio;
    double crossing_rate = 0.0;
};

struct Aggregate {
    double geomean = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0;
};

struct EvalReport {
    std::vector<TaskRow> rows;
    Aggregate mase_ratio, crps_ratio;
    std::string model_hash;
    std::uint64_t seed = 0;
    std::string noise = "none";

    json summary() const;
    void write_csv(const std::string& path) const;
    void write_json(const std::string& path) const;
};

// exp(mean(log r)) over finite r > 0.
Aggregate geometric_mean(std::span<const std::optional<double>> ratios);
EvalReport aggregate(std::vector<TaskRow> rows);

// scores[model][task], lower is better; ties share the average rank.
// Returns each model's rank averaged over tasks.
std::vector<double> average_ranks(const std::vector<std::vector<double>>& scores);

struct EvalOptions {
    ForecastOptions forecast;
    std::size_t threads = 1;
};

TaskRow evaluate_task(const EvalTask& task, const ModelConfig& cfg, const ModelParams& params,
                      const ForecastOptions& opts = {});
EvalReport evaluate(const std::vector<EvalTask>& tasks, const ModelConfig& cfg, const ModelParams& params,
                    const EvalOptions& opts = {});

// ---- noise robustness ------------------------------------------------------------

enum class NoiseKind { Gaussian, Impulse };
NoiseKind parse_noise_kind(const std::string& s);
std::string to_string(NoiseKind k);
std::vector<double> default_noise_levels(NoiseKind k);

struct NoiseRow {
    double level = 0.0;
    double crps = 0.0;  // geometric mean of per-task normalized CRPS
    double relative_crps = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0;
};

// Perturbs every context at each level (truth stays clean), forecasts, and
// reports CRPS relative to level 0. levels must contain 0.
std::vector<NoiseRow> noise_bench(const std::vector<EvalTask>& tasks, const ModelConfig& cfg,
                                  const ModelParams& params, NoiseKind kind, std::span<const double> levels,
                                  std::uint64_t seed = 42, std::size_t threads = 1);

void write_noise_csv(const std::string& path, NoiseKind kind, const std::vector<NoiseRow>& rows);

}  // namespace eidos
