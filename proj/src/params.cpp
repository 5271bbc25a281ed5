#include "eidos/params.hpp"

namespace eidos {

Var ParamBinder::operator()(const Tensor& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    Var v = tape_->leaf(p, true, "param");
    bound_.emplace(&p, v);
    return v;
}

Var ParamBinder::frozen(const Tensor& p) { return tape_->leaf(p, false, "frozen_param"); }

std::span<const double> ParamBinder::grad_of(const Tensor& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return {};
    return it->second.grad();
}

Tensor init_normal(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

Tensor init_uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace eidos
