#pragma once

#include <random>
#include <span>

#include "eidos/params.hpp"
#include "eidos/tensor.hpp"

namespace eidos {

// Sine-activated gated linear unit: z = (sigmoid(h W2) * (h W3)) W4,
// h = sin(x W1 + b), applied to each scalar observation on its own.
struct SiGluParams {
    Tensor w1;  // [1 x d_ff]
    Tensor b;   // [1 x d_ff]
    Tensor w2;  // [d_ff x d_ff], gate
    Tensor w3;  // [d_ff x d_ff], value
    Tensor w4;  // [d_ff x d]

    static SiGluParams init(std::size_t d_ff, std::size_t d, std::mt19937_64& rng);
    void validate(std::size_t d_ff, std::size_t d) const;

    template <typename F>
    void visit(F&& f) {
        f("w1", w1);
        f("b", b);
        f("w2", w2);
        f("w3", w3);
        f("w4", w4);
    }
};

struct SiGluVars {
    Var w1, b, w2, w3, w4;
};

SiGluVars bind(ParamBinder& binder, const SiGluParams& p);

// Embeds an instance-normalized series. Returns [T x d]; row t depends on x[t] only.
Var embed_series(Tape& tape, std::span<const double> x, const SiGluVars& p);

}  // namespace eidos
