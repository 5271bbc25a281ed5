#pragma once

// Dense row-major float64 tensors and a dynamic reverse-mode tape.
//
// A Tape owns every node created during one forward pass in creation order, so
// parent ids always precede child ids and backward() is a single reverse sweep.
// Tapes are rebuilt per training step; nothing is reused across steps.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace eidos {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Plain value tensor, used for parameters and anything living outside a tape.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(Shape s);
    static Tensor filled(Shape s, double value);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> d);
    static Tensor column(std::span<const double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.size() > 1 ? shape[1] : 1; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool operator==(const Tensor&) const = default;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
   public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Shape& shape() const;
    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const;
    std::span<const double> data() const;
    std::span<const double> grad() const;
    bool requires_grad() const;
    double item() const;
    double at(std::size_t r, std::size_t c) const;
    Tensor value() const;

   private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

using BackwardFn = std::function<void(Tape&, int self)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient reaches the node
    bool requires_grad = false;
    const char* op_tag = "leaf";
    std::vector<int> parents;
    BackwardFn backward_fn;
};

class Tape {
   public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var leaf(Tensor value, bool requires_grad, const char* tag = "leaf");
    Var constant(Tensor value) { return leaf(std::move(value), false, "const"); }

    // Records an op output. requires_grad is derived from the parents; the
    // backward closure is dropped when no parent needs a gradient.
    Var record(Shape shape, std::vector<double> data, std::vector<int> parents, const char* tag,
               BackwardFn fn);

    // Scalar loss only. Populates grad on every requires_grad ancestor.
    void backward(Var loss);

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // Gradient buffer of a node, allocated (zeroed) on first touch.
    std::vector<double>& grad_of(int id);
    bool needs_grad(int id) const { return node(id).requires_grad; }

   private:
    bool grad_enabled_;
    std::vector<Node> nodes_;
};

// ---- primitives ------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double c);
Var add_row(Var x, Var row);  // x[r, :] + row[0, :], row is [1 x cols] or [cols]
Var sin(Var x);
Var sigmoid(Var x);
Var silu(Var x);
Var tanh(Var x);
Var softmax_lastdim(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var depthwise_conv1d(Var x, Var kernel);
Var l2_normalize_rows(Var x, double eps);
Var row_dot(Var a, Var b);  // [R x C] . [R x C] -> [R x 1]
Var sum(Var x);
Var mean(Var x);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var concat_rows(Var a, Var b);
Var stop_gradient(Var x);

// Rotates consecutive pairs (2i, 2i+1) inside each head of x [T x n_heads*head_dim]
// by angle positions[t] * theta^(-2i/head_dim).
Var rope_rotate(Var x, std::span<const std::size_t> positions, std::size_t n_heads, double theta);

// Multi-head scaled dot-product attention. q is [T x d], k/v are [S x d] with S >= T;
// query row i sits at absolute position (S - T + i) and attends to key rows <= that.
Var causal_attention(Var q, Var k, Var v, std::size_t n_heads);

// Mean pinball loss. pred is [R x (steps*|levels|)] laid out step-major, target is
// [R x steps]. Returns mean over R, steps and levels of max[q(y-yhat), (1-q)(yhat-y)].
Var pinball_mean(Var pred, Var target, std::span<const double> levels);

}  // namespace eidos
