#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eidos/forecast_eval.hpp"
#include "eidos/model.hpp"

namespace eidos {

using Series = std::vector<double>;
using States = std::vector<std::vector<double>>;  // [example][d]

enum class ConceptKind { Trend, Periodicity };
ConceptKind parse_concept_kind(const std::string& s);
std::string to_string(ConceptKind k);

struct ProbeDataset {
    ConceptKind kind = ConceptKind::Trend;
    std::vector<Series> class0, class1;
    std::size_t length = 512;
    double sigma = 0.1;
};

struct ProbeOptions {
    std::size_t count = 1000;  // per class
    std::size_t length = 512;
    double sigma = 0.1;
    std::uint64_t seed = 0;
};

// Probing classes. Trend: downward vs upward ramps, |slope| in [0.5, 2].
// Periodicity: white noise vs sines with 1..5 cycles per series.
ProbeDataset make_probe_dataset(ConceptKind kind, const ProbeOptions& o = {});
// Steering classes. Trend: flat vs upward ramps. Periodicity: white noise vs sines.
ProbeDataset make_steering_dataset(ConceptKind kind, const ProbeOptions& o = {});

// Last-position hidden state of each z-normalized series at `layer`
// (0 = tokenizer output, n = last block, before the final norm).
States extract_states(const ModelConfig& cfg, const ModelParams& params, std::span<const Series> series,
                      std::size_t layer, std::size_t threads = 1);
// Same for every layer at once: [layer][example][d].
std::vector<States> extract_all_layers(const ModelConfig& cfg, const ModelParams& params,
                                       std::span<const Series> series, std::size_t threads = 1);

// ||mu1 - mu0||^2 / (tr S1 + tr S0 + eps) with population variances.
double ldr(const States& class0, const States& class1, double eps = 1e-6);

// LDR at layers 0..n_layers.
std::vector<double> probe_sweep(const ModelConfig& cfg, const ModelParams& params, const ProbeDataset& data,
                                std::size_t threads = 1);
void write_probe_csv(const std::string& path, const std::vector<double>& curve);

struct ConceptDirection {
    std::size_t layer = 0;
    std::vector<double> v_unit;
    std::vector<double> median0, median1;
    double energy = 0.0;  // mean L2 norm of the layer's states over the probe set
};

// Coordinate-wise median.
std::vector<double> coordinate_median(const States& s);

ConceptDirection direction_from_states(const States& class0, const States& class1, std::size_t layer);
ConceptDirection extract_direction(const ModelConfig& cfg, const ModelParams& params, const ProbeDataset& data,
                                   std::size_t layer, std::size_t threads = 1);

struct SteerOptions {
    std::size_t block_l = 0;
    bool last_position_only = false;
};

inline const std::vector<double> kDefaultInjectionRatios{0.2, 0.5};

// (baseline, steered). The steered run adds alpha * energy * v_unit to the
// target layer during the first generation block; later blocks run unmodified.
std::pair<ForecastResult, ForecastResult> steer_forecast(const ModelConfig& cfg, const ModelParams& params,
                                                         std::span<const double> context, std::size_t H,
                                                         const ConceptDirection& dir, double alpha,
                                                         const SteerOptions& o = {});

// Least-squares slope of y against 0..n-1.
double fitted_slope(std::span<const double> y);
// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

// ---- plots ------------------------------------------------------------------------

struct PlotSeries {
    std::string name;
    std::vector<double> x, y;
};

// Standalone SVG line chart.
void write_line_svg(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series);

}  // namespace eidos
