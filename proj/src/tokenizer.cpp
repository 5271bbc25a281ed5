#include "eidos/tokenizer.hpp"

#include <cmath>
#include <numbers>

#include "eidos/errors.hpp"

namespace eidos {

SiGluParams SiGluParams::init(std::size_t d_ff, std::size_t d, std::mt19937_64& rng) {
    const double pi = std::numbers::pi;
    SiGluParams p;
    // sine frequencies uniform in (-pi, pi)
    p.w1 = init_uniform({1, d_ff}, -pi, pi, rng);
    p.b = init_normal({1, d_ff}, 1.0, rng);
    const double s = 1.0 / std::sqrt(static_cast<double>(d_ff));
    p.w2 = init_normal({d_ff, d_ff}, s, rng);
    p.w3 = init_normal({d_ff, d_ff}, s, rng);
    p.w4 = init_normal({d_ff, d}, s, rng);
    return p;
}

void SiGluParams::validate(std::size_t d_ff, std::size_t d) const {
    auto check = [](const Tensor& t, Shape want, const char* name) {
        if (t.shape != want) {
            throw ConfigError(std::string("tokenizer.") + name + " has shape " + shape_str(t.shape) +
                              ", expected " + shape_str(want));
        }
    };
    check(w1, {1, d_ff}, "w1");
    check(b, {1, d_ff}, "b");
    check(w2, {d_ff, d_ff}, "w2");
    check(w3, {d_ff, d_ff}, "w3");
    check(w4, {d_ff, d}, "w4");
}

SiGluVars bind(ParamBinder& binder, const SiGluParams& p) {
    return {binder(p.w1), binder(p.b), binder(p.w2), binder(p.w3), binder(p.w4)};
}

Var embed_series(Tape& tape, std::span<const double> x, const SiGluVars& p) {
    if (x.empty()) throw ContractError("embed_series: empty input");
    Var xv = tape.constant(Tensor::column(x));
    Var h = sin(add_row(matmul(xv, p.w1), p.b));
    Var glu = mul(sigmoid(matmul(h, p.w2)), matmul(h, p.w3));
    return matmul(glu, p.w4);
}

}  // namespace eidos
