#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "eidos/params.hpp"
#include "eidos/tensor.hpp"

namespace eidos {

struct BackboneConfig {
    std::size_t n_layers = 6;
    std::size_t d_model = 384;
    std::size_t d_intermediate = 1024;
    std::size_t n_heads = 12;
    double rope_theta = 10000.0;
    double ln_eps = 1e-6;

    std::size_t head_dim() const { return d_model / n_heads; }

    // Throws ConfigError unless d_model splits into an even head_dim.
    void validate() const;

    // "small", "base", "large"; ConfigError otherwise.
    static BackboneConfig preset(const std::string& name);

    bool operator==(const BackboneConfig&) const = default;
};

struct BlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo;  // [d x d]
    Tensor ln2_g, ln2_b;
    Tensor w_gate, w_up;  // [d x d_int]
    Tensor w_down;        // [d_int x d]

    template <typename F>
    void visit(F&& f) {
        f("ln1_g", ln1_g);
        f("ln1_b", ln1_b);
        f("wq", wq);
        f("wk", wk);
        f("wv", wv);
        f("wo", wo);
        f("ln2_g", ln2_g);
        f("ln2_b", ln2_b);
        f("w_gate", w_gate);
        f("w_up", w_up);
        f("w_down", w_down);
    }
};

struct BackboneParams {
    std::vector<BlockParams> blocks;
    Tensor lnf_g, lnf_b;

    static BackboneParams init(const BackboneConfig& cfg, std::mt19937_64& rng);

    template <typename F>
    void visit(F&& f) {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string prefix = "layer" + std::to_string(i) + ".";
            blocks[i].visit([&](const std::string& n, Tensor& t) { f(prefix + n, t); });
        }
        f("lnf_g", lnf_g);
        f("lnf_b", lnf_b);
    }
};

struct BlockVars {
    Var ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w_gate, w_up, w_down;
};

struct BackboneVars {
    std::vector<BlockVars> blocks;
    Var lnf_g, lnf_b;
};

BackboneVars bind(ParamBinder& binder, const BackboneParams& p);

// Post-RoPE keys and values per layer for a contiguous prefix of positions.
class KvCache {
   public:
    KvCache(std::size_t n_layers, std::size_t d_model);

    std::size_t n_layers() const { return keys_.size(); }
    std::size_t d_model() const { return d_model_; }
    std::size_t filled_len() const { return filled_len_; }

    const std::vector<double>& keys(std::size_t layer) const { return keys_.at(layer); }
    const std::vector<double>& values(std::size_t layer) const { return values_.at(layer); }

    // Called by the backbone once per layer per forward; commit() then advances filled_len.
    void append(std::size_t layer, std::span<const double> k, std::span<const double> v);
    void commit(std::size_t positions);

   private:
    std::size_t d_model_;
    std::size_t filled_len_ = 0;
    std::vector<std::vector<double>> keys_;
    std::vector<std::vector<double>> values_;
};

struct ForwardHooks {
    // When set, new rows sit at positions filled_len.. and their K/V are appended.
    KvCache* cache = nullptr;
    // Receives [embedding, block_1 output, ..., block_n output] (before the final norm).
    std::vector<Var>* layer_states = nullptr;
    // Optional rewrite of the hidden state leaving layer `layer` (0 = embedding).
    std::function<Var(std::size_t layer, Var hidden)> intervene;
};

// Causal Pre-LN decoder. Row t of the result is the prediction for position t+1
// and depends on z rows <= t only.
Var backbone_forward(Var z, const BackboneConfig& cfg, const BackboneVars& p, const ForwardHooks& hooks = {});

// One-position cached step: equivalent to the last row of a full forward over the prefix.
Var generate_step(Var token_embedding, KvCache& cache, const BackboneConfig& cfg, const BackboneVars& p);

}  // namespace eidos
