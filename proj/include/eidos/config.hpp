#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eidos/datagen.hpp"
#include "eidos/model.hpp"
#include "json.hpp"

namespace eidos {

using json = nlohmann::json;

struct OptimConfig {
    double lr_peak = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    double eps = 1e-8;
    std::size_t total_steps = 5000;
    std::size_t warmup_steps = 500;
    double clip_norm = 1.0;  // <= 0 disables clipping

    void validate() const;
    bool operator==(const OptimConfig&) const = default;
};

// One training data source: a JSONL file or a named generator, with a mixing weight.
struct DataSource {
    std::string path;
    std::optional<GeneratorSpec> generator;
    double weight = 1.0;
};

struct TrainConfig {
    ModelConfig model;
    LossWeights weights;
    OptimConfig optim;
    std::vector<DataSource> data{DataSource{"", GeneratorSpec{}, 1.0}};
    std::size_t context_length = 512;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    std::size_t log_every = 1;
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint

    void validate() const;
};

// The small preset shrunk to 2 layers, d=64, as used by the smoke and acceptance runs.
ModelConfig toy_model_config();
TrainConfig toy_train_config();

json to_json(const BackboneConfig& c);
json to_json(const ModelConfig& c);
json to_json(const LossWeights& w);
json to_json(const OptimConfig& o);
json to_json(const DataSource& d);
json to_json(const TrainConfig& t);

// Strict readers: start from `base`, override present keys, reject unknown keys.
// A "preset" key in a backbone block selects a named preset before overrides.
BackboneConfig backbone_from_json(const json& j, BackboneConfig base = {});
ModelConfig model_from_json(const json& j, ModelConfig base = {});
LossWeights weights_from_json(const json& j, LossWeights base = {});
OptimConfig optim_from_json(const json& j, OptimConfig base = {});
DataSource data_source_from_json(const json& j);
TrainConfig train_from_json(const json& j, TrainConfig base = {});

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);
// Hash of the canonical model-architecture JSON.
std::string model_hash(const ModelConfig& c);

}  // namespace eidos
