#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "eidos/tensor.hpp"

namespace eidos {

// Puts parameter tensors onto a tape as leaves and remembers which leaf came
// from which tensor, so gradients can be routed back after backward().
class ParamBinder {
   public:
    explicit ParamBinder(Tape& tape) : tape_(&tape) {}

    Tape& tape() const { return *tape_; }

    // Trainable leaf. Binding the same tensor twice returns the same leaf.
    Var operator()(const Tensor& p);

    // Gradient-blocked view of p: same values, never receives gradient.
    Var frozen(const Tensor& p);

    // Gradient accumulated on the leaf bound to p, or empty if p was not bound
    // or received no gradient.
    std::span<const double> grad_of(const Tensor& p) const;

   private:
    Tape* tape_;
    std::unordered_map<const Tensor*, Var> bound_;
};

// Deterministic initializers over a caller-owned engine.
Tensor init_normal(Shape shape, double stddev, std::mt19937_64& rng);
Tensor init_uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

// SplitMix64 finalizer: derives independent stream seeds from (seed, index) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace eidos
