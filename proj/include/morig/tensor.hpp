#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "morig/rng.hpp"

namespace morig {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Dense row-major float64 tensor. Value semantics: the payload is shared and
// never mutated after construction. `node` is a handle into the active tape
// when the tensor participates in differentiation, -1 for constants.
struct Tensor {
    Shape shape;
    std::shared_ptr<const std::vector<double>> data;
    int node = -1;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);

    int64_t numel() const { return data ? int64_t(data->size()) : 0; }
    int64_t rank() const { return int64_t(shape.size()); }
    int64_t extent(int64_t axis) const;
    bool tracked() const { return node >= 0; }
    double scalar() const; // requires numel()==1
    const double* ptr() const { return data->data(); }
    double at(const std::vector<int64_t>& idx) const;
};

Tensor tensor(Shape s, std::vector<double> d);
Tensor scalar_tensor(double v);
Tensor zeros(Shape s);
Tensor ones(Shape s);
Tensor full(Shape s, double v);
Tensor randu(Rng& rng, Shape s, double lo = 0.0, double hi = 1.0);
Tensor randn(Rng& rng, Shape s, double mean = 0.0, double stddev = 1.0);

// A named leaf. The optimizer replaces `value` wholesale on each step;
// gradients accumulate into `grad` across backward() calls until zeroed.
struct Parameter {
    std::string name;
    Tensor value;
    std::vector<double> grad;
    bool trainable = true;

    void zero_grad() { grad.assign(size_t(value.numel()), 0.0); }
};

// Reverse-mode tape. Constructing one makes it the active tape for the
// current thread (ops record onto it when an input is tracked); destruction
// restores the previous one. One tape per training worker.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    // Registers a leaf for a parameter; gradients reaching it are added into
    // the parameter's grad buffer at the end of backward(). Watching the same
    // parameter again returns the existing leaf.
    Tensor watch(Parameter& p);
    // Leaf for a plain tensor (gradient readable via grad()).
    Tensor watch(const Tensor& t);

    // Reverse sweep from a scalar loss. Node gradients are recomputed from
    // scratch on each call; parameter gradients accumulate.
    void backward(const Tensor& loss);

    // Gradient of the most recent backward() w.r.t. a tracked tensor.
    const std::vector<double>& grad(const Tensor& t) const;

    void reset();
    size_t size() const { return nodes_.size(); }

    // --- used by op implementations ---
    using BackFn = std::function<void(Tape&, int self)>;
    int record(std::vector<int> parents, int64_t numel, BackFn back);
    std::vector<double>& grad_buf(int node, int64_t numel);
    const std::vector<double>& node_grad(int node) const { return grads_[size_t(node)]; }
    bool has_grad(int node) const { return !grads_[size_t(node)].empty(); }

  private:
    struct Node {
        std::vector<int> parents;
        int64_t numel;
        BackFn back;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::vector<std::pair<int, Parameter*>> leaves_;
    std::map<Parameter*, int> watched_;
    Tape* prev_ = nullptr;
};

// Watches `p` on the active tape, or returns its plain value when no tape is
// active (inference mode).
Tensor use_param(Parameter& p);

// ---- primitive ops --------------------------------------------------------
// Elementwise binaries broadcast trailing singleton axes (numpy-style on the
// trailing-aligned shapes). Shape mismatches throw with both shapes reported.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b); // any zero divisor element throws

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b); // [M,K]x[K,N]
Tensor bmm(const Tensor& a, const Tensor& b);    // [B,M,K]x[B,K,N]

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a); // any element <= 0 throws
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor tanh(const Tensor& a);

Tensor softmax(const Tensor& a, int64_t axis);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int64_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int64_t axis);
Tensor reduce_max(const Tensor& a);
Tensor reduce_max(const Tensor& a, int64_t axis); // ties -> lowest index

// Row gather/scatter on the leading axis (graph message passing, grouping).
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx);
Tensor scatter_add_rows(const Tensor& a, const std::vector<int64_t>& idx, int64_t n_rows);
// Max over rows sharing a segment id; empty segments yield `empty_value`.
// Ties route gradient to the lowest contributing row.
Tensor segment_max(const Tensor& a, const std::vector<int64_t>& seg, int64_t n_seg,
                   double empty_value = 0.0);

Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
Tensor reshape(const Tensor& a, Shape s);
Tensor transpose2d(const Tensor& a);

Tensor l2_normalize(const Tensor& a); // along last axis; zero rows stay zero

Tensor detach(const Tensor& a);

// ---- composites ------------------------------------------------------------
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor log_softmax(const Tensor& a, int64_t axis);
// mean BCE with probabilities clamped to [1e-7, 1-1e-7]
Tensor bce_mean(const Tensor& prob, const Tensor& target);

} // namespace morig
