#include "morig/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace morig {

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EigenRowMat>;
using CMapMat = Eigen::Map<const EigenRowMat>;

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

static void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)) {
    if (int64_t(d.size()) != shape_numel(shape))
        throw std::invalid_argument("tensor: data length " + std::to_string(d.size()) +
                                    " does not match shape " + shape_str(shape));
    data = std::make_shared<const std::vector<double>>(std::move(d));
}

int64_t Tensor::extent(int64_t axis) const {
    if (axis < 0) axis += rank();
    check(axis >= 0 && axis < rank(), "axis out of range for shape " + shape_str(shape));
    return shape[size_t(axis)];
}

double Tensor::scalar() const {
    check(numel() == 1, "scalar() on tensor of shape " + shape_str(shape));
    return (*data)[0];
}

double Tensor::at(const std::vector<int64_t>& idx) const {
    check(int64_t(idx.size()) == rank(), "at(): index rank mismatch");
    int64_t off = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] >= 0 && idx[i] < shape[i], "at(): index out of range");
        off = off * shape[i] + idx[i];
    }
    return (*data)[size_t(off)];
}

Tensor tensor(Shape s, std::vector<double> d) { return Tensor(std::move(s), std::move(d)); }
Tensor scalar_tensor(double v) { return Tensor({1}, {v}); }
Tensor zeros(Shape s) { return full(std::move(s), 0.0); }
Tensor ones(Shape s) { return full(std::move(s), 1.0); }

Tensor full(Shape s, double v) {
    std::vector<double> d(size_t(shape_numel(s)), v);
    return Tensor(std::move(s), std::move(d));
}

Tensor randu(Rng& rng, Shape s, double lo, double hi) {
    std::vector<double> d(size_t(shape_numel(s)));
    for (double& x : d) x = rng.uniform(lo, hi);
    return Tensor(std::move(s), std::move(d));
}

Tensor randn(Rng& rng, Shape s, double mean, double stddev) {
    std::vector<double> d(size_t(shape_numel(s)));
    for (double& x : d) x = rng.normal(mean, stddev);
    return Tensor(std::move(s), std::move(d));
}

// ---- tape ------------------------------------------------------------------

static thread_local Tape* g_active_tape = nullptr;

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::record(std::vector<int> parents, int64_t numel, BackFn back) {
    nodes_.push_back(Node{std::move(parents), numel, std::move(back)});
    return int(nodes_.size()) - 1;
}

Tensor Tape::watch(Parameter& p) {
    auto it = watched_.find(&p);
    if (it != watched_.end()) {
        Tensor t = p.value;
        t.node = it->second;
        return t;
    }
    Tensor t = p.value;
    t.node = record({}, t.numel(), nullptr);
    watched_[&p] = t.node;
    if (p.trainable) leaves_.emplace_back(t.node, &p);
    return t;
}

Tensor use_param(Parameter& p) {
    Tape* tp = Tape::active();
    return tp ? tp->watch(p) : p.value;
}

Tensor Tape::watch(const Tensor& t) {
    Tensor r = t;
    r.node = record({}, t.numel(), nullptr);
    return r;
}

std::vector<double>& Tape::grad_buf(int node, int64_t numel) {
    auto& g = grads_[size_t(node)];
    if (g.empty()) g.assign(size_t(numel), 0.0);
    return g;
}

void Tape::backward(const Tensor& loss) {
    check(!nodes_.empty(), "backward: tape is empty");
    check(loss.tracked(), "backward: loss is not on the tape");
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape));
    grads_.assign(nodes_.size(), {});
    grads_[size_t(loss.node)] = {1.0};
    for (int i = loss.node; i >= 0; --i) {
        if (grads_[size_t(i)].empty()) continue;
        if (nodes_[size_t(i)].back) nodes_[size_t(i)].back(*this, i);
    }
    for (auto& [node, param] : leaves_) {
        const auto& g = grads_[size_t(node)];
        if (g.empty()) continue;
        if (param->grad.size() != g.size()) param->grad.assign(g.size(), 0.0);
        for (size_t k = 0; k < g.size(); ++k) param->grad[k] += g[k];
    }
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
    check(t.tracked(), "grad: tensor is not tracked");
    return grads_[size_t(t.node)];
}

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    leaves_.clear();
    watched_.clear();
}

// ---- broadcasting ----------------------------------------------------------

namespace {

struct BcastPlan {
    Shape out;
    std::vector<int64_t> stride_a, stride_b; // 0 where broadcast
};

BcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* opname) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    std::vector<int64_t> ea(rank, 1), eb(rank, 1);
    for (size_t i = 0; i < a.size(); ++i) ea[rank - a.size() + i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) eb[rank - b.size() + i] = b[i];
    for (size_t i = 0; i < rank; ++i) {
        if (ea[i] == eb[i]) out[i] = ea[i];
        else if (ea[i] == 1) out[i] = eb[i];
        else if (eb[i] == 1) out[i] = ea[i];
        else
            throw std::invalid_argument(std::string(opname) + ": incompatible shapes " +
                                        shape_str(a) + " vs " + shape_str(b));
    }
    BcastPlan p;
    p.out = out;
    p.stride_a.assign(rank, 0);
    p.stride_b.assign(rank, 0);
    int64_t sa = 1, sb = 1;
    for (size_t i = rank; i-- > 0;) {
        p.stride_a[i] = (ea[i] == 1) ? 0 : sa;
        p.stride_b[i] = (eb[i] == 1) ? 0 : sb;
        sa *= ea[i];
        sb *= eb[i];
    }
    return p;
}

// Sums `g` (laid out as `out` shape) into a buffer of `target` shape,
// reducing over broadcast axes. Deterministic: sequential in output order.
void reduce_to_shape(const std::vector<double>& g, const Shape& out, const Shape& target,
                     std::vector<double>& acc) {
    if (shape_numel(out) == int64_t(acc.size()) && out.size() == target.size() &&
        std::equal(out.begin(), out.end(), target.begin())) {
        for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        return;
    }
    size_t rank = out.size();
    std::vector<int64_t> ext(rank, 1);
    for (size_t i = 0; i < target.size(); ++i) ext[rank - target.size() + i] = target[i];
    std::vector<int64_t> stride(rank, 0);
    int64_t s = 1;
    for (size_t i = rank; i-- > 0;) {
        stride[i] = (ext[i] == 1) ? 0 : s;
        s *= ext[i];
    }
    std::vector<int64_t> idx(rank, 0);
    int64_t toff = 0;
    for (size_t lin = 0; lin < g.size(); ++lin) {
        acc[size_t(toff)] += g[lin];
        for (size_t i = rank; i-- > 0;) {
            idx[i]++;
            toff += stride[i];
            if (idx[i] < out[i]) break;
            toff -= stride[i] * out[i];
            idx[i] = 0;
        }
    }
}

Tensor make_tracked(Shape shape, std::vector<double> data, std::vector<int> parents,
                    Tape::BackFn back) {
    Tensor r(std::move(shape), std::move(data));
    Tape* tp = Tape::active();
    bool any = false;
    for (int p : parents)
        if (p >= 0) any = true;
    if (tp && any) r.node = tp->record(std::move(parents), r.numel(), std::move(back));
    return r;
}

template <class F>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f,
                 std::function<void(Tape&, int, const Tensor&, const Tensor&, const Tensor&)>
                     back_builder) {
    check(a.data && b.data, std::string(name) + ": empty tensor");
    BcastPlan plan = broadcast_plan(a.shape, b.shape, name);
    int64_t n = shape_numel(plan.out);
    std::vector<double> out(static_cast<size_t>(n));
    const auto& da = *a.data;
    const auto& db = *b.data;
    if (a.shape == b.shape) {
        for (int64_t i = 0; i < n; ++i) out[size_t(i)] = f(da[size_t(i)], db[size_t(i)]);
    } else {
        size_t rank = plan.out.size();
        std::vector<int64_t> idx(rank, 0);
        int64_t oa = 0, ob = 0;
        for (int64_t lin = 0; lin < n; ++lin) {
            out[size_t(lin)] = f(da[size_t(oa)], db[size_t(ob)]);
            for (size_t i = rank; i-- > 0;) {
                idx[i]++;
                oa += plan.stride_a[i];
                ob += plan.stride_b[i];
                if (idx[i] < plan.out[i]) break;
                oa -= plan.stride_a[i] * plan.out[i];
                ob -= plan.stride_b[i] * plan.out[i];
                idx[i] = 0;
            }
        }
    }
    Tensor r(plan.out, std::move(out));
    Tape* tp = Tape::active();
    if (tp && (a.tracked() || b.tracked())) {
        Tensor rc = r; // value copy for the closure
        r.node = tp->record({a.node, b.node}, n, [=](Tape& t, int self) {
            back_builder(t, self, a, b, rc);
        });
    }
    return r;
}

// dL/da contribution laid out in output shape -> reduce into parent a.
void push_grad(Tape& t, int parent, const Tensor& parent_t, const std::vector<double>& g,
               const Shape& out_shape) {
    if (parent < 0) return;
    auto& buf = t.grad_buf(parent, parent_t.numel());
    reduce_to_shape(g, out_shape, parent_t.shape, buf);
}

// Evaluates elementwise grads through the broadcast layout.
template <class FA, class FB>
void binary_backward(Tape& t, int self, const Tensor& a, const Tensor& b, const Tensor& out,
                     FA ga, FB gb) {
    const auto& gout = t.node_grad(self);
    BcastPlan plan = broadcast_plan(a.shape, b.shape, "backward");
    int64_t n = shape_numel(plan.out);
    const auto& da = *a.data;
    const auto& db = *b.data;
    std::vector<double> grad_a, grad_b;
    if (a.tracked()) grad_a.assign(size_t(n), 0.0);
    if (b.tracked()) grad_b.assign(size_t(n), 0.0);
    size_t rank = plan.out.size();
    std::vector<int64_t> idx(rank, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        double x = da[size_t(oa)], y = db[size_t(ob)], g = gout[size_t(lin)];
        if (a.tracked()) grad_a[size_t(lin)] = g * ga(x, y);
        if (b.tracked()) grad_b[size_t(lin)] = g * gb(x, y);
        for (size_t i = rank; i-- > 0;) {
            idx[i]++;
            oa += plan.stride_a[i];
            ob += plan.stride_b[i];
            if (idx[i] < plan.out[i]) break;
            oa -= plan.stride_a[i] * plan.out[i];
            ob -= plan.stride_b[i] * plan.out[i];
            idx[i] = 0;
        }
    }
    (void)out;
    if (a.tracked()) push_grad(t, a.node, a, grad_a, plan.out);
    if (b.tracked()) push_grad(t, b.node, b, grad_b, plan.out);
}

template <class F, class G>
Tensor unary_op(const Tensor& a, const char* name, F f, G dfdx) {
    check(a.data != nullptr, std::string(name) + ": empty tensor");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const auto& da = *a.data;
    for (int64_t i = 0; i < n; ++i) out[size_t(i)] = f(da[size_t(i)]);
    return make_tracked(a.shape, std::move(out), {a.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        auto& buf = t.grad_buf(a.node, n);
        const auto& x = *a.data;
        for (int64_t i = 0; i < n; ++i) buf[size_t(i)] += g[size_t(i)] * dfdx(x[size_t(i)]);
    });
}

} // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                     [](Tape& t, int self, const Tensor& aa, const Tensor& bb, const Tensor& o) {
                         binary_backward(t, self, aa, bb, o,
                                         [](double, double) { return 1.0; },
                                         [](double, double) { return 1.0; });
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                     [](Tape& t, int self, const Tensor& aa, const Tensor& bb, const Tensor& o) {
                         binary_backward(t, self, aa, bb, o,
                                         [](double, double) { return 1.0; },
                                         [](double, double) { return -1.0; });
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                     [](Tape& t, int self, const Tensor& aa, const Tensor& bb, const Tensor& o) {
                         binary_backward(t, self, aa, bb, o,
                                         [](double, double y) { return y; },
                                         [](double x, double) { return x; });
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double y : *b.data)
        if (y == 0.0) throw std::invalid_argument("div: zero divisor element");
    return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                     [](Tape& t, int self, const Tensor& aa, const Tensor& bb, const Tensor& o) {
                         binary_backward(t, self, aa, bb, o,
                                         [](double, double y) { return 1.0 / y; },
                                         [](double x, double y) { return -x / (y * y); });
                     });
}

Tensor neg(const Tensor& a) {
    return unary_op(a, "neg", [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, "scale", [c](double x) { return c * x; }, [c](double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, "add_scalar", [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); },
                    [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
    for (double x : *a.data)
        if (x <= 0.0)
            throw std::invalid_argument("log: non-positive operand " + std::to_string(x));
    return unary_op(a, "log", [](double x) { return std::log(x); },
                    [](double x) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                    [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary_op(a, "leaky_relu", [slope](double x) { return x > 0 ? x : slope * x; },
                    [slope](double x) { return x > 0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                    [](double x) {
                        double t = std::tanh(x);
                        return 1.0 - t * t;
                    });
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2,
          "matmul: need rank-2 operands, got " + shape_str(a.shape) + " and " +
              shape_str(b.shape));
    check(a.shape[1] == b.shape[0], "matmul: inner extents differ, " + shape_str(a.shape) +
                                        " vs " + shape_str(b.shape));
    int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    std::vector<double> out(static_cast<size_t>(m * n));
    {
        CMapMat A(a.ptr(), m, k), B(b.ptr(), k, n);
        MapMat C(out.data(), m, n);
        C.noalias() = A * B;
    }
    return make_tracked({m, n}, std::move(out), {a.node, b.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        CMapMat G(g.data(), m, n);
        if (a.tracked()) {
            auto& ga = t.grad_buf(a.node, m * k);
            MapMat GA(ga.data(), m, k);
            CMapMat B(b.ptr(), k, n);
            GA.noalias() += G * B.transpose();
        }
        if (b.tracked()) {
            auto& gb = t.grad_buf(b.node, k * n);
            MapMat GB(gb.data(), k, n);
            CMapMat A(a.ptr(), m, k);
            GB.noalias() += A.transpose() * G;
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    check(a.rank() == 3 && b.rank() == 3,
          "bmm: need rank-3 operands, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
    check(a.shape[0] == b.shape[0] && a.shape[2] == b.shape[1],
          "bmm: incompatible shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    int64_t bs = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2];
    std::vector<double> out(static_cast<size_t>(bs * m * n));
    for (int64_t i = 0; i < bs; ++i) {
        CMapMat A(a.ptr() + i * m * k, m, k), B(b.ptr() + i * k * n, k, n);
        MapMat C(out.data() + i * m * n, m, n);
        C.noalias() = A * B;
    }
    return make_tracked({bs, m, n}, std::move(out), {a.node, b.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        for (int64_t i = 0; i < bs; ++i) {
            CMapMat G(g.data() + i * m * n, m, n);
            if (a.tracked()) {
                auto& ga = t.grad_buf(a.node, bs * m * k);
                MapMat GA(ga.data() + i * m * k, m, k);
                CMapMat B(b.ptr() + i * k * n, k, n);
                GA.noalias() += G * B.transpose();
            }
            if (b.tracked()) {
                auto& gb = t.grad_buf(b.node, bs * k * n);
                MapMat GB(gb.data() + i * k * n, k, n);
                CMapMat A(a.ptr() + i * m * k, m, k);
                GB.noalias() += A.transpose() * G;
            }
        }
    });
}

// ---- softmax and reductions -------------------------------------------------

namespace {

// Decomposes shape around `axis` into [outer, extent, inner].
struct AxisView {
    int64_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int64_t axis) {
    AxisView v;
    v.extent = s[size_t(axis)];
    for (int64_t i = 0; i < axis; ++i) v.outer *= s[size_t(i)];
    for (size_t i = size_t(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

int64_t norm_axis(const Tensor& a, int64_t axis, const char* name) {
    if (axis < 0) axis += a.rank();
    check(axis >= 0 && axis < a.rank(),
          std::string(name) + ": axis out of range for " + shape_str(a.shape));
    return axis;
}

} // namespace

Tensor softmax(const Tensor& a, int64_t axis) {
    axis = norm_axis(a, axis, "softmax");
    AxisView v = axis_view(a.shape, axis);
    const auto& x = *a.data;
    std::vector<double> out(x.size());
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t in = 0; in < v.inner; ++in) {
            int64_t base = o * v.extent * v.inner + in;
            double mx = -HUGE_VAL;
            for (int64_t e = 0; e < v.extent; ++e)
                mx = std::max(mx, x[size_t(base + e * v.inner)]);
            double z = 0;
            for (int64_t e = 0; e < v.extent; ++e) {
                double ev = std::exp(x[size_t(base + e * v.inner)] - mx);
                out[size_t(base + e * v.inner)] = ev;
                z += ev;
            }
            for (int64_t e = 0; e < v.extent; ++e) out[size_t(base + e * v.inner)] /= z;
        }
    Tensor r(a.shape, std::move(out));
    Tape* tp = Tape::active();
    if (tp && a.tracked()) {
        Tensor y = r;
        r.node = tp->record({a.node}, a.numel(), [=](Tape& t, int self) {
            const auto& g = t.node_grad(self);
            auto& buf = t.grad_buf(a.node, a.numel());
            const auto& yd = *y.data;
            for (int64_t o = 0; o < v.outer; ++o)
                for (int64_t in = 0; in < v.inner; ++in) {
                    int64_t base = o * v.extent * v.inner + in;
                    double dot = 0;
                    for (int64_t e = 0; e < v.extent; ++e) {
                        size_t k = size_t(base + e * v.inner);
                        dot += g[k] * yd[k];
                    }
                    for (int64_t e = 0; e < v.extent; ++e) {
                        size_t k = size_t(base + e * v.inner);
                        buf[k] += yd[k] * (g[k] - dot);
                    }
                }
        });
    }
    return r;
}

Tensor sum(const Tensor& a) {
    double s = 0;
    for (double x : *a.data) s += x;
    return make_tracked({1}, {s}, {a.node}, [=](Tape& t, int self) {
        double g = t.node_grad(self)[0];
        auto& buf = t.grad_buf(a.node, a.numel());
        for (double& b : buf) b += g;
    });
}

Tensor mean(const Tensor& a) {
    int64_t n = a.numel();
    check(n > 0, "mean: empty tensor");
    return scale(sum(a), 1.0 / double(n));
}

Tensor sum(const Tensor& a, int64_t axis) {
    axis = norm_axis(a, axis, "sum");
    AxisView v = axis_view(a.shape, axis);
    Shape out_shape = a.shape;
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(size_t(v.outer * v.inner), 0.0);
    const auto& x = *a.data;
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t e = 0; e < v.extent; ++e)
            for (int64_t in = 0; in < v.inner; ++in)
                out[size_t(o * v.inner + in)] += x[size_t((o * v.extent + e) * v.inner + in)];
    return make_tracked(out_shape, std::move(out), {a.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        auto& buf = t.grad_buf(a.node, a.numel());
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t e = 0; e < v.extent; ++e)
                for (int64_t in = 0; in < v.inner; ++in)
                    buf[size_t((o * v.extent + e) * v.inner + in)] += g[size_t(o * v.inner + in)];
    });
}

Tensor mean(const Tensor& a, int64_t axis) {
    axis = norm_axis(a, axis, "mean");
    return scale(sum(a, axis), 1.0 / double(a.shape[size_t(axis)]));
}

Tensor reduce_max(const Tensor& a) {
    const auto& x = *a.data;
    check(!x.empty(), "reduce_max: empty tensor");
    int64_t arg = 0;
    for (int64_t i = 1; i < a.numel(); ++i)
        if (x[size_t(i)] > x[size_t(arg)]) arg = i;
    double m = x[size_t(arg)];
    return make_tracked({1}, {m}, {a.node}, [=](Tape& t, int self) {
        double g = t.node_grad(self)[0];
        t.grad_buf(a.node, a.numel())[size_t(arg)] += g;
    });
}

Tensor reduce_max(const Tensor& a, int64_t axis) {
    axis = norm_axis(a, axis, "reduce_max");
    AxisView v = axis_view(a.shape, axis);
    check(v.extent > 0, "reduce_max: empty axis");
    Shape out_shape = a.shape;
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(static_cast<size_t>(v.outer * v.inner));
    auto args = std::make_shared<std::vector<int64_t>>(size_t(v.outer * v.inner));
    const auto& x = *a.data;
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t in = 0; in < v.inner; ++in) {
            int64_t best = 0;
            double bv = x[size_t((o * v.extent) * v.inner + in)];
            for (int64_t e = 1; e < v.extent; ++e) {
                double cv = x[size_t((o * v.extent + e) * v.inner + in)];
                if (cv > bv) {
                    bv = cv;
                    best = e;
                }
            }
            out[size_t(o * v.inner + in)] = bv;
            (*args)[size_t(o * v.inner + in)] = best;
        }
    return make_tracked(out_shape, std::move(out), {a.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        auto& buf = t.grad_buf(a.node, a.numel());
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t in = 0; in < v.inner; ++in) {
                int64_t e = (*args)[size_t(o * v.inner + in)];
                buf[size_t((o * v.extent + e) * v.inner + in)] += g[size_t(o * v.inner + in)];
            }
    });
}

// ---- gather / scatter / segments --------------------------------------------

namespace {
int64_t row_width(const Tensor& a, const char* name) {
    check(a.rank() >= 1, std::string(name) + ": need rank >= 1");
    int64_t w = 1;
    for (size_t i = 1; i < a.shape.size(); ++i) w *= a.shape[i];
    return w;
}
} // namespace

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx) {
    int64_t w = row_width(a, "gather_rows");
    int64_t rows = a.shape[0];
    for (int64_t i : idx)
        check(i >= 0 && i < rows, "gather_rows: index " + std::to_string(i) +
                                      " out of range [0," + std::to_string(rows) + ")");
    Shape out_shape = a.shape;
    out_shape[0] = int64_t(idx.size());
    std::vector<double> out(idx.size() * size_t(w));
    const auto& x = *a.data;
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(x.begin() + idx[r] * w, w, out.begin() + int64_t(r) * w);
    auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
    return make_tracked(out_shape, std::move(out), {a.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        auto& buf = t.grad_buf(a.node, a.numel());
        for (size_t r = 0; r < idx_copy->size(); ++r) {
            int64_t src = (*idx_copy)[r];
            for (int64_t c = 0; c < w; ++c)
                buf[size_t(src * w + c)] += g[r * size_t(w) + size_t(c)];
        }
    });
}

Tensor scatter_add_rows(const Tensor& a, const std::vector<int64_t>& idx, int64_t n_rows) {
    int64_t w = row_width(a, "scatter_add_rows");
    check(int64_t(idx.size()) == a.shape[0], "scatter_add_rows: one index per row required");
    for (int64_t i : idx)
        check(i >= 0 && i < n_rows, "scatter_add_rows: index out of range");
    Shape out_shape = a.shape;
    out_shape[0] = n_rows;
    std::vector<double> out(size_t(n_rows * w), 0.0);
    const auto& x = *a.data;
    for (size_t r = 0; r < idx.size(); ++r)
        for (int64_t c = 0; c < w; ++c)
            out[size_t(idx[r] * w + c)] += x[r * size_t(w) + size_t(c)];
    auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
    return make_tracked(out_shape, std::move(out), {a.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        auto& buf = t.grad_buf(a.node, a.numel());
        for (size_t r = 0; r < idx_copy->size(); ++r)
            for (int64_t c = 0; c < w; ++c)
                buf[r * size_t(w) + size_t(c)] += g[size_t((*idx_copy)[r] * w + c)];
    });
}

Tensor segment_max(const Tensor& a, const std::vector<int64_t>& seg, int64_t n_seg,
                   double empty_value) {
    int64_t w = row_width(a, "segment_max");
    check(int64_t(seg.size()) == a.shape[0], "segment_max: one segment id per row required");
    for (int64_t s : seg)
        check(s >= 0 && s < n_seg, "segment_max: segment id out of range");
    Shape out_shape = a.shape;
    out_shape[0] = n_seg;
    std::vector<double> out(size_t(n_seg * w), empty_value);
    auto args = std::make_shared<std::vector<int64_t>>(size_t(n_seg * w), -1);
    const auto& x = *a.data;
    for (size_t r = 0; r < seg.size(); ++r) {
        int64_t s = seg[r];
        for (int64_t c = 0; c < w; ++c) {
            double v = x[r * size_t(w) + size_t(c)];
            int64_t& cur = (*args)[size_t(s * w + c)];
            if (cur < 0 || v > out[size_t(s * w + c)]) {
                out[size_t(s * w + c)] = v;
                cur = int64_t(r);
            }
        }
    }
    return make_tracked(out_shape, std::move(out), {a.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        auto& buf = t.grad_buf(a.node, a.numel());
        for (int64_t s = 0; s < n_seg; ++s)
            for (int64_t c = 0; c < w; ++c) {
                int64_t r = (*args)[size_t(s * w + c)];
                if (r >= 0) buf[size_t(r * w + c)] += g[size_t(s * w + c)];
            }
    });
}

// ---- shape ops ---------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
    check(!parts.empty(), "concat: no inputs");
    const Tensor& p0 = parts[0];
    int64_t ax = axis < 0 ? axis + p0.rank() : axis;
    check(ax >= 0 && ax < p0.rank(), "concat: axis out of range");
    Shape out_shape = p0.shape;
    int64_t total = 0;
    for (const Tensor& p : parts) {
        check(p.rank() == p0.rank(), "concat: rank mismatch " + shape_str(p.shape) + " vs " +
                                         shape_str(p0.shape));
        for (int64_t i = 0; i < p0.rank(); ++i)
            if (i != ax)
                check(p.shape[size_t(i)] == p0.shape[size_t(i)],
                      "concat: shape mismatch " + shape_str(p.shape) + " vs " +
                          shape_str(p0.shape));
        total += p.shape[size_t(ax)];
    }
    out_shape[size_t(ax)] = total;
    AxisView v = axis_view(out_shape, ax);
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    int64_t off = 0;
    for (const Tensor& p : parts) {
        int64_t pe = p.shape[size_t(ax)];
        const auto& x = *p.data;
        for (int64_t o = 0; o < v.outer; ++o)
            std::copy_n(x.begin() + o * pe * v.inner, pe * v.inner,
                        out.begin() + (o * v.extent + off) * v.inner);
        off += pe;
    }
    std::vector<int> parent_ids;
    for (const Tensor& p : parts) parent_ids.push_back(p.node);
    auto parts_copy = std::make_shared<std::vector<Tensor>>(parts);
    return make_tracked(out_shape, std::move(out), parent_ids, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        int64_t o2 = 0;
        for (const Tensor& p : *parts_copy) {
            int64_t pe = p.shape[size_t(ax)];
            if (p.tracked()) {
                auto& buf = t.grad_buf(p.node, p.numel());
                for (int64_t o = 0; o < v.outer; ++o)
                    for (int64_t k = 0; k < pe * v.inner; ++k)
                        buf[size_t(o * pe * v.inner + k)] +=
                            g[size_t((o * v.extent + o2) * v.inner + k)];
            }
            o2 += pe;
        }
    });
}

Tensor reshape(const Tensor& a, Shape s) {
    check(shape_numel(s) == a.numel(), "reshape: numel mismatch, " + shape_str(a.shape) +
                                           " -> " + shape_str(s));
    Tensor r = a;
    r.shape = std::move(s);
    Tape* tp = Tape::active();
    if (a.tracked() && tp) {
        r.node = tp->record({a.node}, a.numel(), [=](Tape& t, int self) {
            const auto& g = t.node_grad(self);
            auto& buf = t.grad_buf(a.node, a.numel());
            for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
        });
    }
    return r;
}

Tensor transpose2d(const Tensor& a) {
    check(a.rank() == 2, "transpose2d: need rank 2, got " + shape_str(a.shape));
    int64_t m = a.shape[0], n = a.shape[1];
    std::vector<double> out(static_cast<size_t>(m * n));
    const auto& x = *a.data;
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[size_t(j * m + i)] = x[size_t(i * n + j)];
    return make_tracked({n, m}, std::move(out), {a.node}, [=](Tape& t, int self) {
        const auto& g = t.node_grad(self);
        auto& buf = t.grad_buf(a.node, m * n);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) buf[size_t(i * n + j)] += g[size_t(j * m + i)];
    });
}

Tensor l2_normalize(const Tensor& a) {
    check(a.rank() >= 1, "l2_normalize: need rank >= 1");
    int64_t w = a.shape.back();
    int64_t rows = a.numel() / w;
    std::vector<double> out(static_cast<size_t>(a.numel()));
    auto norms = std::make_shared<std::vector<double>>(size_t(rows));
    const auto& x = *a.data;
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0;
        for (int64_t c = 0; c < w; ++c) s += x[size_t(r * w + c)] * x[size_t(r * w + c)];
        double n = std::sqrt(s);
        (*norms)[size_t(r)] = std::max(n, 1e-12);
        for (int64_t c = 0; c < w; ++c)
            out[size_t(r * w + c)] = x[size_t(r * w + c)] / (*norms)[size_t(r)];
    }
    Tensor r(a.shape, std::move(out));
    Tape* tp = Tape::active();
    if (tp && a.tracked()) {
        Tensor y = r;
        r.node = tp->record({a.node}, a.numel(), [=](Tape& t, int self) {
            const auto& g = t.node_grad(self);
            auto& buf = t.grad_buf(a.node, a.numel());
            const auto& yd = *y.data;
            for (int64_t rr = 0; rr < rows; ++rr) {
                double dot = 0;
                for (int64_t c = 0; c < w; ++c)
                    dot += g[size_t(rr * w + c)] * yd[size_t(rr * w + c)];
                double inv = 1.0 / (*norms)[size_t(rr)];
                for (int64_t c = 0; c < w; ++c)
                    buf[size_t(rr * w + c)] +=
                        (g[size_t(rr * w + c)] - yd[size_t(rr * w + c)] * dot) * inv;
            }
        });
    }
    return r;
}

Tensor detach(const Tensor& a) {
    Tensor r = a;
    r.node = -1;
    return r;
}

// ---- composites --------------------------------------------------------------

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, "sigmoid",
                    [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double x) {
                        double s = 1.0 / (1.0 + std::exp(-x));
                        return s * (1.0 - s);
                    });
}

Tensor abs(const Tensor& a) { return add(relu(a), relu(neg(a))); }

Tensor log_softmax(const Tensor& a, int64_t axis) {
    int64_t ax = norm_axis(a, axis, "log_softmax");
    // logsumexp with a detached max shift; identical gradient, safe log.
    Tensor m = detach(reduce_max(a, ax));
    Shape keep = a.shape;
    keep[size_t(ax)] = 1;
    Tensor mk = reshape(m, keep);
    Tensor shifted = sub(a, mk);
    Tensor lse = log(sum(exp(shifted), ax));
    return sub(shifted, reshape(lse, keep));
}

Tensor bce_mean(const Tensor& prob, const Tensor& target) {
    check(prob.shape == target.shape, "bce_mean: shape mismatch " + shape_str(prob.shape) +
                                          " vs " + shape_str(target.shape));
    const double eps = 1e-7;
    // clamp via the composite: p' = relu(p - eps)·(1-2eps)/(1-2eps)... keep it
    // direct instead: p' = min(max(p, eps), 1-eps) with a dedicated unary.
    Tensor clamped = unary_op(prob, "clamp01",
                              [eps](double x) { return std::min(std::max(x, eps), 1.0 - eps); },
                              [eps](double x) { return (x > eps && x < 1.0 - eps) ? 1.0 : 0.0; });
    Tensor one_minus_t = add_scalar(neg(target), 1.0);
    Tensor one_minus_p = add_scalar(neg(clamped), 1.0);
    Tensor ll = add(mul(target, log(clamped)), mul(one_minus_t, log(one_minus_p)));
    return neg(mean(ll));
}

} // namespace morig
