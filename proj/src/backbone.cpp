#include "eidos/backbone.hpp"

#include <cmath>
#include <numeric>

#include "eidos/errors.hpp"

namespace eidos {

void BackboneConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || d_intermediate == 0 || n_heads == 0) {
        throw ConfigError("backbone: all extents must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("backbone: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (head_dim() % 2 != 0) {
        throw ConfigError("backbone: head_dim " + std::to_string(head_dim()) + " must be even for RoPE");
    }
    if (!(rope_theta > 0.0) || !(ln_eps > 0.0)) throw ConfigError("backbone: rope_theta and ln_eps must be > 0");
}

BackboneConfig BackboneConfig::preset(const std::string& name) {
    BackboneConfig c;
    if (name == "small") {
        c.n_layers = 6, c.d_model = 384, c.d_intermediate = 1024, c.n_heads = 12;
    } else if (name == "base") {
        c.n_layers = 12, c.d_model = 384, c.d_intermediate = 1024, c.n_heads = 12;
    } else if (name == "large") {
        c.n_layers = 12, c.d_model = 768, c.d_intermediate = 2048, c.n_heads = 12;
    } else {
        throw ConfigError("unknown backbone preset '" + name + "'");
    }
    return c;
}

BackboneParams BackboneParams::init(const BackboneConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const std::size_t d = cfg.d_model, di = cfg.d_intermediate;
    const double std_in = 0.02;
    const double std_out = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    BackboneParams p;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        BlockParams b;
        b.ln1_g = Tensor::filled({1, d}, 1.0);
        b.ln1_b = Tensor::zeros({1, d});
        b.wq = init_normal({d, d}, std_in, rng);
        b.wk = init_normal({d, d}, std_in, rng);
        b.wv = init_normal({d, d}, std_in, rng);
        b.wo = init_normal({d, d}, std_out, rng);
        b.ln2_g = Tensor::filled({1, d}, 1.0);
        b.ln2_b = Tensor::zeros({1, d});
        b.w_gate = init_normal({d, di}, std_in, rng);
        b.w_up = init_normal({d, di}, std_in, rng);
        b.w_down = init_normal({di, d}, std_out, rng);
        p.blocks.push_back(std::move(b));
    }
    p.lnf_g = Tensor::filled({1, d}, 1.0);
    p.lnf_b = Tensor::zeros({1, d});
    return p;
}

BackboneVars bind(ParamBinder& binder, const BackboneParams& p) {
    BackboneVars v;
    for (const auto& b : p.blocks) {
        v.blocks.push_back({binder(b.ln1_g), binder(b.ln1_b), binder(b.wq), binder(b.wk), binder(b.wv),
                            binder(b.wo), binder(b.ln2_g), binder(b.ln2_b), binder(b.w_gate), binder(b.w_up),
                            binder(b.w_down)});
    }
    v.lnf_g = binder(p.lnf_g);
    v.lnf_b = binder(p.lnf_b);
    return v;
}

KvCache::KvCache(std::size_t n_layers, std::size_t d_model)
    : d_model_(d_model), keys_(n_layers), values_(n_layers) {}

void KvCache::append(std::size_t layer, std::span<const double> k, std::span<const double> v) {
    auto& ks = keys_.at(layer);
    auto& vs = values_.at(layer);
    ks.insert(ks.end(), k.begin(), k.end());
    vs.insert(vs.end(), v.begin(), v.end());
}

void KvCache::commit(std::size_t positions) { filled_len_ += positions; }

Var backbone_forward(Var z, const BackboneConfig& cfg, const BackboneVars& p, const ForwardHooks& hooks) {
    Tape& tape = *z.tape();
    if (z.shape().size() != 2 || z.cols() != cfg.d_model) {
        throw ConfigError("backbone: input " + shape_str(z.shape()) + " does not match d_model " +
                          std::to_string(cfg.d_model));
    }
    if (p.blocks.size() != cfg.n_layers) throw ConfigError("backbone: parameter layer count differs from config");
    const std::size_t T = z.rows(), d = cfg.d_model;
    if (T == 0) throw ContractError("backbone: empty sequence");

    KvCache* cache = hooks.cache;
    std::size_t start = 0;
    if (cache) {
        if (cache->n_layers() != cfg.n_layers || cache->d_model() != d) {
            throw ConfigError("backbone: cache has " + std::to_string(cache->n_layers()) + " layers, model has " +
                              std::to_string(cfg.n_layers));
        }
        start = cache->filled_len();
    }
    std::vector<std::size_t> positions(T);
    std::iota(positions.begin(), positions.end(), start);

    Var h = z;
    if (hooks.intervene) h = hooks.intervene(0, h);
    if (hooks.layer_states) hooks.layer_states->push_back(h);

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const BlockVars& b = p.blocks[l];
        Var a = layer_norm(h, b.ln1_g, b.ln1_b, cfg.ln_eps);
        Var q = rope_rotate(matmul(a, b.wq), positions, cfg.n_heads, cfg.rope_theta);
        Var k = rope_rotate(matmul(a, b.wk), positions, cfg.n_heads, cfg.rope_theta);
        Var v = matmul(a, b.wv);
        Var k_all = k, v_all = v;
        if (cache) {
            if (start > 0) {
                k_all = concat_rows(tape.constant(Tensor({start, d}, cache->keys(l))), k);
                v_all = concat_rows(tape.constant(Tensor({start, d}, cache->values(l))), v);
            }
            cache->append(l, k.data(), v.data());
        }
        Var att = causal_attention(q, k_all, v_all, cfg.n_heads);
        h = add(h, matmul(att, b.wo));

        Var m = layer_norm(h, b.ln2_g, b.ln2_b, cfg.ln_eps);
        Var gated = mul(silu(matmul(m, b.w_gate)), matmul(m, b.w_up));
        h = add(h, matmul(gated, b.w_down));

        if (hooks.intervene) h = hooks.intervene(l + 1, h);
        if (hooks.layer_states) hooks.layer_states->push_back(h);
    }
    if (cache) cache->commit(T);
    return layer_norm(h, p.lnf_g, p.lnf_b, cfg.ln_eps);
}

Var generate_step(Var token_embedding, KvCache& cache, const BackboneConfig& cfg, const BackboneVars& p) {
    if (token_embedding.rows() != 1) throw ContractError("generate_step: expects a single [1 x d] embedding");
    ForwardHooks hooks;
    hooks.cache = &cache;
    return backbone_forward(token_embedding, cfg, p, hooks);
}

}  // namespace eidos
