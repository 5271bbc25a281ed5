#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace eidos {

struct SeriesRecord {
    std::string id;
    std::string freq = "H";
    std::vector<double> target;
    std::size_t season_m = 1;

    bool operator==(const SeriesRecord&) const = default;
};

// ---- deterministic primitives ---------------------------------------------

enum class PrimitiveKind { Sine, Trend, SineTrend, Noise };

PrimitiveKind parse_primitive_kind(const std::string& name);
std::string to_string(PrimitiveKind kind);

struct PrimitiveParams {
    double frequency = 1.0;  // cycles per T
    double amplitude = 1.0;
    double phase = 0.0;
    double slope = 1.0;  // total rise over the series
    double offset = 0.0;
    double sigma = 0.0;  // additive Gaussian noise, applied last
};

// sine: A sin(2 pi f t / T + phase); trend: slope * t / (T - 1); noise: N(0, 1).
SeriesRecord gen_primitive(PrimitiveKind kind, const PrimitiveParams& params, std::size_t T, std::uint64_t seed);

// ---- TSMixup ---------------------------------------------------------------

struct MixupOptions {
    std::size_t k_max = 3;
    double alpha = 1.5;
    std::size_t length = 512;
    std::size_t max_attempts = 64;
    std::optional<std::size_t> force_k;
    std::optional<std::vector<double>> force_lambda;
};

struct MixupResult {
    SeriesRecord record;
    std::vector<double> lambda;
    std::vector<std::size_t> sources;  // pool indices
    std::vector<std::size_t> starts;   // segment offsets
};

std::vector<double> sample_dirichlet(std::size_t k, double alpha, std::mt19937_64& rng);
MixupResult tsmixup(std::span<const SeriesRecord> pool, const MixupOptions& opts, std::uint64_t seed);

// ---- simplified SCM generator ----------------------------------------------

enum class Activation { Identity, Tanh, Sin, LeakyRelu };

struct KernelComponent {
    enum class Kind { Periodic, Rbf, Linear } kind = Kind::Periodic;
    double weight = 1.0;
    double frequency = 1.0;     // periodic: cycles per T
    double lengthscale = 16.0;  // rbf: smoothing width in samples
    double slope = 1.0;         // linear
};

struct ScmNode {
    std::vector<std::size_t> parents;
    std::vector<double> weights;
    std::vector<Activation> activations;
    double bias = 0.0;
    std::vector<KernelComponent> recipe;  // roots only
};

struct ScmGraph {
    std::vector<ScmNode> nodes;

    // GraphError unless every parent index precedes its child, node 0 is a
    // root, roots carry a recipe and edges are fully specified.
    void validate() const;
    bool is_root(std::size_t i) const { return nodes.at(i).parents.empty(); }

    static ScmGraph sample(std::uint64_t seed, std::size_t max_nodes = 6);
};

std::vector<SeriesRecord> cauker_lite(const ScmGraph& graph, std::size_t T, std::uint64_t seed);
std::vector<SeriesRecord> cauker_lite(std::uint64_t seed, std::size_t T);

// ---- normalization and noise ----------------------------------------------

struct NormStats {
    double mean = 0.0;
    double std = 0.0;  // raw population std (may be 0)
    double eps = 1e-8;

    double scale() const { return std::max(std, eps); }
};

NormStats stats_of(std::span<const double> x, double eps = 1e-8);
std::vector<double> znorm(std::span<const double> x, NormStats* stats_out = nullptr, double eps = 1e-8);
std::vector<double> denorm(std::span<const double> x, const NormStats& stats);

std::vector<double> gaussian_noise(std::span<const double> x, double sigma_level, std::uint64_t seed = 42);

struct Spike {
    std::size_t index;
    double delta;  // exactly +-8 sigma_x
};

struct ImpulseResult {
    std::vector<double> values;
    std::vector<Spike> spikes;
    double sigma_x = 0.0;
};

inline constexpr double kImpulseMagnitude = 8.0;

ImpulseResult impulse_noise(std::span<const double> x, double p, std::uint64_t seed = 42);

// ---- corpus specs ------------------------------------------------------------

// One named generator with its parameter block. Primitive kinds draw their
// parameters per series from the ranges below.
struct GeneratorSpec {
    std::string kind = "sine+trend";  // sine | trend | sine+trend | noise | cauker | tsmixup
    std::size_t count = 64;
    std::size_t length = 512;
    std::vector<double> frequencies{2, 4, 8, 16};  // drawn uniformly
    double amplitude_min = 0.5, amplitude_max = 1.5;
    double slope_min = -2.0, slope_max = 2.0;
    double sigma = 0.1;
    bool random_phase = true;
    std::string freq_tag = "H";
    MixupOptions mixup;
    std::string mixup_base = "sine+trend";

    void validate() const;
};

nlohmann::json to_json(const GeneratorSpec& spec);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);

std::vector<SeriesRecord> generate_corpus(const GeneratorSpec& spec, std::uint64_t seed);

// ---- JSONL dataset files ---------------------------------------------------

std::string format_record(const SeriesRecord& r);
SeriesRecord parse_record(const std::string& line, std::size_t line_no);

class SeriesReader {
   public:
    explicit SeriesReader(const std::string& path);
    std::optional<SeriesRecord> next();
    std::size_t line() const { return line_no_; }
    std::size_t buffer_capacity() const { return buf_.capacity(); }

   private:
    std::string path_;
    std::ifstream in_;
    std::string buf_;
    std::size_t line_no_ = 0;
};

class SeriesWriter {
   public:
    explicit SeriesWriter(const std::string& path);
    void write(const SeriesRecord& r);
    std::size_t count() const { return count_; }
    void close();

   private:
    std::string path_;
    std::ofstream out_;
    std::size_t count_ = 0;
};

std::vector<SeriesRecord> read_series(const std::string& path);
void write_series(const std::string& path, std::span<const SeriesRecord> records);

}  // namespace eidos
