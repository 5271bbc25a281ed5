#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "eidos/config.hpp"
#include "eidos/datagen.hpp"
#include "eidos/model.hpp"

namespace eidos {

// Linear warmup from 0 to lr_peak, then cosine to 0 at total_steps.
// Steps past total_steps clamp to the final value.
double lr_at(std::size_t step, const OptimConfig& o);

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

AdamState adam_init(const std::vector<Tensor*>& params);

// Bias-corrected Adam update plus decoupled weight decay w -= lr * wd * w.
void adamw_step(const std::vector<Tensor*>& params, const std::vector<std::vector<double>>& grads, AdamState& state,
                const OptimConfig& o, double lr);

// Scales grads in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping; max_norm <= 0 leaves grads unchanged.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

struct SourcePool {
    std::string name;
    double weight = 1.0;
    std::vector<SeriesRecord> records;
};

// Draws raw training windows of a fixed length. Sources are picked by weight;
// inside a source, records are visited in a shuffled order that is reshuffled
// every pass (epoch). Everything derives from (seed, draw counters).
class WindowSampler {
   public:
    WindowSampler(std::vector<SourcePool> sources, std::size_t length, std::uint64_t seed);

    std::vector<double> next();

    json state() const;
    void restore(const json& state);

   private:
    const std::vector<std::size_t>& order(std::size_t source, std::uint64_t epoch);

    std::vector<SourcePool> sources_;
    std::size_t length_;
    std::uint64_t seed_;
    std::vector<double> cumulative_;
    std::uint64_t draws_ = 0;
    std::vector<std::uint64_t> source_draws_;
    std::vector<std::uint64_t> cached_epoch_;
    std::vector<std::vector<std::size_t>> cached_order_;
};

std::vector<SourcePool> load_sources(const TrainConfig& cfg);

struct StepLog {
    std::size_t step = 0;
    double lr = 0.0;
    double total = 0.0;
    double pred = 0.0;
    double latent = 0.0;
    double gnd = 0.0;
    double grad_norm = 0.0;
};

struct BatchResult {
    double total = 0.0, pred = 0.0, latent = 0.0, gnd = 0.0;
    std::vector<std::vector<double>> grads;  // trainable order, averaged over the batch
};

// Forward/backward over normalized windows. Elements may run on worker threads;
// the reduction is always in element order.
BatchResult batch_gradients(const ModelParams& params, const ModelConfig& cfg, const LossWeights& w,
                            const std::vector<std::vector<double>>& windows, std::size_t threads);

// Worker count: EIDOSLAB_THREADS if set, else hardware concurrency; at least 1.
std::size_t worker_threads();

class Trainer {
   public:
    Trainer(TrainConfig cfg, std::vector<SourcePool> sources);

    static Trainer resume(const std::string& checkpoint_path, std::vector<SourcePool> sources);

    StepLog step();
    // Steps until `until` (default: total_steps), calling on_log every log_every steps.
    void run(std::size_t until = 0, const std::function<void(const StepLog&)>& on_log = {});

    void save(const std::string& path) const;

    const TrainConfig& config() const { return cfg_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }
    std::size_t current_step() const { return adam_.step; }
    void set_threads(std::size_t n) { threads_ = n == 0 ? 1 : n; }

   private:
    Trainer(TrainConfig cfg, std::vector<SourcePool> sources, bool init_params);

    std::vector<Tensor*> trainable();

    TrainConfig cfg_;
    ModelParams params_;
    AdamState adam_;
    WindowSampler sampler_;
    std::size_t threads_ = 1;
};

// ---- checkpoint container ---------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'E', 'I', 'D', 'O', 'S', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    ModelParams params;
    AdamState optim;
    json rng_state;
    std::size_t step = 0;
    std::string config_hash;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// CSV writer for the per-step metric log.
class MetricLog {
   public:
    explicit MetricLog(const std::string& path, bool append = false);
    void write(const StepLog& s);

   private:
    std::ofstream out_;
};

}  // namespace eidos
