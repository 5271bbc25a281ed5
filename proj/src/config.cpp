#include "eidos/config.hpp"

#include <cstdio>
#include <functional>
#include <map>

#include "eidos/errors.hpp"

namespace eidos {

namespace {

using Setter = std::function<void(const json&)>;

void read_object(const json& j, const std::string& what, const std::map<std::string, Setter>& setters) {
    if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto s = setters.find(it.key());
        if (s == setters.end()) throw ConfigError(what + ": unknown key '" + it.key() + "'");
        try {
            s->second(it.value());
        } catch (const json::exception& e) {
            throw ConfigError(what + "." + it.key() + ": " + e.what());
        }
    }
}

template <typename T>
Setter set(T& field) {
    return [&field](const json& v) { field = v.get<T>(); };
}

}  // namespace

void OptimConfig::validate() const {
    if (!(lr_peak > 0.0)) throw ConfigError("optim.lr_peak must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optim betas must lie in [0, 1)");
    if (!(weight_decay >= 0.0) || !(eps > 0.0)) throw ConfigError("optim.weight_decay >= 0 and optim.eps > 0 required");
    if (total_steps == 0) throw ConfigError("optim.total_steps must be positive");
    if (warmup_steps > total_steps) throw ConfigError("optim.warmup_steps exceeds total_steps");
}

void TrainConfig::validate() const {
    model.validate();
    weights.validate();
    optim.validate();
    if (context_length <= model.horizon)
        throw ConfigError("context_length " + std::to_string(context_length) + " must exceed horizon " +
                          std::to_string(model.horizon));
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (log_every == 0) throw ConfigError("log_every must be positive");
    for (const auto& d : data) {
        if (d.path.empty() == !d.generator.has_value())
            throw ConfigError("each data source needs exactly one of 'path' or 'generator'");
        if (!(d.weight > 0.0)) throw ConfigError("data source weight must be > 0");
        if (d.generator) d.generator->validate();
    }
}

ModelConfig toy_model_config() {
    ModelConfig m;
    m.backbone = BackboneConfig::preset("small");
    m.backbone.n_layers = 2;
    m.backbone.d_model = 64;
    m.backbone.d_intermediate = 128;
    m.backbone.n_heads = 4;
    m.tokenizer_d_ff = 64;
    m.head_hidden = 64;
    m.horizon = 64;
    return m;
}

TrainConfig toy_train_config() {
    TrainConfig t;
    t.model = toy_model_config();
    t.optim.total_steps = 600;
    t.optim.warmup_steps = 60;
    t.context_length = 512;
    t.batch_size = 16;
    DataSource d;
    GeneratorSpec g;
    g.kind = "sine+trend";
    g.count = 512;
    g.length = 512;
    d.generator = g;
    t.data = {d};
    return t;
}

json to_json(const BackboneConfig& c) {
    return {{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"d_intermediate", c.d_intermediate},
            {"n_heads", c.n_heads},   {"rope_theta", c.rope_theta}, {"ln_eps", c.ln_eps}};
}

json to_json(const ModelConfig& c) {
    return {{"backbone", to_json(c.backbone)}, {"tokenizer_d_ff", c.tokenizer_d_ff},
            {"head_hidden", c.head_hidden},    {"horizon", c.horizon},
            {"levels", c.levels},              {"frozen_head_at_init", c.frozen_head_at_init}};
}

json to_json(const LossWeights& w) {
    return {{"lambda_pred", w.lambda_pred}, {"lambda_latent", w.lambda_latent}, {"lambda_gnd", w.lambda_gnd}};
}

json to_json(const OptimConfig& o) {
    return {{"lr_peak", o.lr_peak},         {"beta1", o.beta1},
            {"beta2", o.beta2},             {"weight_decay", o.weight_decay},
            {"eps", o.eps},                 {"total_steps", o.total_steps},
            {"warmup_steps", o.warmup_steps}, {"clip_norm", o.clip_norm}};
}

json to_json(const DataSource& d) {
    json j = {{"weight", d.weight}};
    if (!d.path.empty()) j["path"] = d.path;
    if (d.generator) j["generator"] = to_json(*d.generator);
    return j;
}

json to_json(const TrainConfig& t) {
    json data = json::array();
    for (const auto& d : t.data) data.push_back(to_json(d));
    return {{"model", to_json(t.model)},
            {"loss", to_json(t.weights)},
            {"optim", to_json(t.optim)},
            {"data", data},
            {"context_length", t.context_length},
            {"batch_size", t.batch_size},
            {"seed", t.seed},
            {"log_every", t.log_every},
            {"checkpoint_every", t.checkpoint_every}};
}

BackboneConfig backbone_from_json(const json& j, BackboneConfig c) {
    if (j.is_object() && j.contains("preset")) {
        const BackboneConfig p = BackboneConfig::preset(j.at("preset").get<std::string>());
        c = p;
    }
    std::string ignored;
    read_object(j, "backbone",
                {{"preset", set(ignored)},
                 {"n_layers", set(c.n_layers)},
                 {"d_model", set(c.d_model)},
                 {"d_intermediate", set(c.d_intermediate)},
                 {"n_heads", set(c.n_heads)},
                 {"rope_theta", set(c.rope_theta)},
                 {"ln_eps", set(c.ln_eps)}});
    c.validate();
    return c;
}

ModelConfig model_from_json(const json& j, ModelConfig c) {
    read_object(j, "model",
                {{"backbone", [&](const json& v) { c.backbone = backbone_from_json(v, c.backbone); }},
                 {"preset", [&](const json& v) { c.backbone = BackboneConfig::preset(v.get<std::string>()); }},
                 {"tokenizer_d_ff", set(c.tokenizer_d_ff)},
                 {"head_hidden", set(c.head_hidden)},
                 {"horizon", set(c.horizon)},
                 {"levels", set(c.levels)},
                 {"frozen_head_at_init", set(c.frozen_head_at_init)}});
    c.validate();
    return c;
}

LossWeights weights_from_json(const json& j, LossWeights w) {
    read_object(j, "loss",
                {{"lambda_pred", set(w.lambda_pred)},
                 {"lambda_latent", set(w.lambda_latent)},
                 {"lambda_gnd", set(w.lambda_gnd)}});
    w.validate();
    return w;
}

OptimConfig optim_from_json(const json& j, OptimConfig o) {
    bool warmup_given = false;
    read_object(j, "optim",
                {{"lr_peak", set(o.lr_peak)},
                 {"beta1", set(o.beta1)},
                 {"beta2", set(o.beta2)},
                 {"weight_decay", set(o.weight_decay)},
                 {"eps", set(o.eps)},
                 {"total_steps", set(o.total_steps)},
                 {"warmup_steps",
                  [&](const json& v) {
                      o.warmup_steps = v.get<std::size_t>();
                      warmup_given = true;
                  }},
                 {"clip_norm", set(o.clip_norm)}});
    if (!warmup_given && j.contains("total_steps")) o.warmup_steps = o.total_steps / 10;
    o.validate();
    return o;
}

DataSource data_source_from_json(const json& j) {
    DataSource d;
    read_object(j, "data[]",
                {{"path", set(d.path)},
                 {"weight", set(d.weight)},
                 {"generator", [&](const json& v) { d.generator = generator_spec_from_json(v); }}});
    return d;
}

TrainConfig train_from_json(const json& j, TrainConfig t) {
    read_object(j, "train",
                {{"model", [&](const json& v) { t.model = model_from_json(v, t.model); }},
                 {"loss", [&](const json& v) { t.weights = weights_from_json(v, t.weights); }},
                 {"optim", [&](const json& v) { t.optim = optim_from_json(v, t.optim); }},
                 {"data",
                  [&](const json& v) {
                      if (!v.is_array()) throw ConfigError("train.data must be an array");
                      t.data.clear();
                      for (const auto& e : v) t.data.push_back(data_source_from_json(e));
                  }},
                 {"context_length", set(t.context_length)},
                 {"batch_size", set(t.batch_size)},
                 {"seed", set(t.seed)},
                 {"log_every", set(t.log_every)},
                 {"checkpoint_every", set(t.checkpoint_every)}});
    t.validate();
    return t;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string model_hash(const ModelConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

}  // namespace eidos
