#ifndef LAPAEL_TENSOR_HPP
#define LAPAEL_TENSOR_HPP

// Dense double-precision tensors with a record/replay tape for reverse-mode
// differentiation. Single-threaded and deterministic: the same ops on the
// same inputs produce bitwise-identical values and gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace lapael {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct TensorData {
    Shape shape;
    std::vector<double> v;
    bool requires_grad = false; // trainable leaf
    bool needs_grad = false;    // on a path from a trainable leaf
    std::vector<double> g;      // allocated by backward()
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

    static Tensor from(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor: shape/data length mismatch");
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->v = std::move(values);
        return Tensor(d);
    }
    static Tensor zeros(Shape shape) {
        std::size_t n = shape_numel(shape);
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->v.assign(n, 0.0);
        return Tensor(d);
    }
    static Tensor full(Shape shape, double value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.d_->v.begin(), t.d_->v.end(), value);
        return t;
    }
    static Tensor scalar(double value) { return from({}, {value}); }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t numel() const { return d_->v.size(); }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    std::vector<double>& values() { return d_->v; }
    const std::vector<double>& values() const { return d_->v; }
    double item() const {
        if (d_->v.size() != 1) throw std::logic_error("item(): tensor is not a scalar");
        return d_->v[0];
    }
    double at(std::size_t i) const { return d_->v[i]; }

    bool requires_grad() const { return d_->requires_grad; }
    // For leaf tensors; op outputs derive their flag at creation time.
    Tensor& set_requires_grad(bool rg) {
        d_->requires_grad = rg;
        d_->needs_grad = rg;
        return *this;
    }
    bool needs_grad() const { return d_->needs_grad; }
    const std::vector<double>& grad() const {
        if (d_->g.size() != d_->v.size())
            throw std::logic_error("grad(): no gradient has been computed for this tensor");
        return d_->g;
    }
    bool has_grad() const { return d_->g.size() == d_->v.size(); }

    Tensor clone() const {
        auto d = std::make_shared<TensorData>();
        d->shape = d_->shape;
        d->v = d_->v;
        d->requires_grad = d_->requires_grad;
        d->needs_grad = d_->needs_grad;
        return Tensor(d);
    }

    bool all_finite() const {
        for (double x : d_->v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::shared_ptr<TensorData> data_ptr() const { return d_; }
    TensorData* raw() const { return d_.get(); }

private:
    std::shared_ptr<TensorData> d_;
};

namespace detail {

inline double sigmoid_stable(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_stable(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline double gelu_exact(double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}
inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

// Trailing-dimension broadcast: shapes are right-aligned; dims must match or
// be 1. Anything else is a contract violation, never an implicit loop.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const int da = i < r - ra ? 1 : a[i - (r - ra)];
        const int db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) +
                                        " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides with 0 on broadcast dimensions, right-aligned to rank r.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, std::size_t r,
                                                  const Shape& out) {
    std::vector<std::size_t> st(r, 0);
    std::size_t acc = 1;
    const std::size_t rs = s.size();
    for (std::size_t i = 0; i < rs; ++i) {
        const std::size_t axis = rs - 1 - i;
        st[r - 1 - i] = (s[axis] == 1 && out[r - 1 - i] != 1) ? 0 : acc;
        acc *= static_cast<std::size_t>(s[axis]);
    }
    return st;
}

// Sum `src` (shaped `from`) into `dst` (shaped `to`), reversing a broadcast.
inline void reduce_into(const std::vector<double>& src, const Shape& from,
                        std::vector<double>& dst, const Shape& to) {
    if (from == to) {
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        return;
    }
    const std::size_t r = from.size();
    const auto st = broadcast_strides(to, r, from);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * st[i];
        dst[off] += src[flat];
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < static_cast<std::size_t>(from[i])) break;
            idx[i] = 0;
        }
    }
}

} // namespace detail

class Tape {
    enum class Op {
        MatMul,    // C[m,n] = A[m,k] B[k,n]
        MatMulNT,  // C[m,n] = A[m,k] B[n,k]^T
        Transpose, // 2-d
        Add, Sub, Mul, Div,
        Exp, Log, Sqrt, Tanh, Sigmoid, Softplus, Gelu, Abs,
        PowScalar, AddScalar, MulScalar, MaxScalar,
        SumAll, MeanAll, SumAxis, MeanAxis,
        BroadcastTo, Reshape, Concat, Slice,
        Softmax,   // last axis
        LayerNorm, // last axis, learnable scale/shift
        Embedding,
        CrossEntropy,
    };

    struct Node {
        Op op;
        std::vector<std::shared_ptr<TensorData>> in;
        std::shared_ptr<TensorData> out;
        int i0 = 0, i1 = 0, i2 = 0;
        double x0 = 0.0;
        std::vector<int> ids;
        std::vector<double> saved;
    };

public:
    // When recording is off the tape computes values only; backward() is
    // unavailable for those results. Used for evaluation-only forwards.
    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }
    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

    // ---- elementwise binaries (trailing broadcast) ----

    Tensor add(const Tensor& a, const Tensor& b) { return binary(Op::Add, a, b); }
    Tensor sub(const Tensor& a, const Tensor& b) { return binary(Op::Sub, a, b); }
    Tensor mul(const Tensor& a, const Tensor& b) { return binary(Op::Mul, a, b); }
    Tensor div(const Tensor& a, const Tensor& b) { return binary(Op::Div, a, b); }

    // ---- elementwise unaries ----

    Tensor exp(const Tensor& x) { return unary(Op::Exp, x); }
    Tensor log(const Tensor& x) {
        for (double v : x.values())
            if (v <= 0.0) throw std::domain_error("log: non-positive input");
        return unary(Op::Log, x);
    }
    Tensor sqrt(const Tensor& x) {
        for (double v : x.values())
            if (v < 0.0) throw std::domain_error("sqrt: negative input");
        return unary(Op::Sqrt, x);
    }
    Tensor tanh(const Tensor& x) { return unary(Op::Tanh, x); }
    Tensor sigmoid(const Tensor& x) { return unary(Op::Sigmoid, x); }
    Tensor softplus(const Tensor& x) { return unary(Op::Softplus, x); }
    Tensor gelu(const Tensor& x) { return unary(Op::Gelu, x); }
    Tensor abs(const Tensor& x) { return unary(Op::Abs, x); }

    Tensor pow_scalar(const Tensor& x, double p) {
        Tensor out = Tensor::zeros(x.shape());
        const auto& xv = x.values();
        auto& ov = out.values();
        if (p == 2.0) {
            for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * xv[i];
        } else {
            for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::pow(xv[i], p);
        }
        return record(Op::PowScalar, {x}, out, 0, 0, 0, p);
    }
    Tensor add_scalar(const Tensor& x, double c) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) out.values()[i] = x.values()[i] + c;
        return record(Op::AddScalar, {x}, out, 0, 0, 0, c);
    }
    Tensor mul_scalar(const Tensor& x, double c) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) out.values()[i] = x.values()[i] * c;
        return record(Op::MulScalar, {x}, out, 0, 0, 0, c);
    }
    // max(x, c) elementwise; subgradient 0 where clamped.
    Tensor max_scalar(const Tensor& x, double c) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i)
            out.values()[i] = std::max(x.values()[i], c);
        return record(Op::MaxScalar, {x}, out, 0, 0, 0, c);
    }

    // ---- matrix ops ----

    Tensor matmul(const Tensor& a, const Tensor& b) {
        require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-d");
        const int m = a.shape()[0], k = a.shape()[1];
        require(b.shape()[0] == k, "matmul: inner dimensions differ");
        const int n = b.shape()[1];
        Tensor out = Tensor::zeros({m, n});
        const double* A = a.values().data();
        const double* B = b.values().data();
        double* C = out.values().data();
        for (int i = 0; i < m; ++i) {
            const double* Ai = A + static_cast<std::size_t>(i) * k;
            double* Ci = C + static_cast<std::size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const double aip = Ai[p];
                const double* Bp = B + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
            }
        }
        return record(Op::MatMul, {a, b}, out);
    }

    // a [m,k] times b[n,k] transposed; the attention score kernel.
    Tensor matmul_nt(const Tensor& a, const Tensor& b) {
        require(a.rank() == 2 && b.rank() == 2, "matmul_nt: operands must be 2-d");
        const int m = a.shape()[0], k = a.shape()[1];
        require(b.shape()[1] == k, "matmul_nt: inner dimensions differ");
        const int n = b.shape()[0];
        Tensor out = Tensor::zeros({m, n});
        const double* A = a.values().data();
        const double* B = b.values().data();
        double* C = out.values().data();
        for (int i = 0; i < m; ++i) {
            const double* Ai = A + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < n; ++j) {
                const double* Bj = B + static_cast<std::size_t>(j) * k;
                double acc = 0.0;
                for (int p = 0; p < k; ++p) acc += Ai[p] * Bj[p];
                C[static_cast<std::size_t>(i) * n + j] = acc;
            }
        }
        return record(Op::MatMulNT, {a, b}, out);
    }

    Tensor transpose(const Tensor& x) {
        require(x.rank() == 2, "transpose: 2-d only");
        const int m = x.shape()[0], n = x.shape()[1];
        Tensor out = Tensor::zeros({n, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                out.values()[static_cast<std::size_t>(j) * m + i] =
                    x.values()[static_cast<std::size_t>(i) * n + j];
        return record(Op::Transpose, {x}, out);
    }

    // ---- reductions / shape ----

    Tensor sum_all(const Tensor& x) {
        double acc = 0.0;
        for (double v : x.values()) acc += v;
        return record(Op::SumAll, {x}, Tensor::scalar(acc));
    }
    Tensor mean_all(const Tensor& x) {
        require(x.numel() > 0, "mean_all: empty tensor");
        double acc = 0.0;
        for (double v : x.values()) acc += v;
        return record(Op::MeanAll, {x}, Tensor::scalar(acc / static_cast<double>(x.numel())));
    }
    Tensor sum_axis(const Tensor& x, int axis) { return reduce_axis(Op::SumAxis, x, axis); }
    Tensor mean_axis(const Tensor& x, int axis) { return reduce_axis(Op::MeanAxis, x, axis); }

    Tensor broadcast_to(const Tensor& x, const Shape& shape) {
        const Shape out_shape = detail::broadcast_shape(x.shape(), shape);
        require(out_shape == shape, "broadcast_to: source shape does not broadcast to target");
        Tensor out = Tensor::zeros(shape);
        const auto st = detail::broadcast_strides(x.shape(), shape.size(), shape);
        fill_broadcast(x.values(), st, out.values(), shape);
        return record(Op::BroadcastTo, {x}, out);
    }

    Tensor reshape(const Tensor& x, Shape shape) {
        require(shape_numel(shape) == x.numel(), "reshape: element count mismatch");
        Tensor out = Tensor::from(std::move(shape), x.values());
        return record(Op::Reshape, {x}, out);
    }

    Tensor concat(const std::vector<Tensor>& xs, int axis) {
        require(!xs.empty(), "concat: no inputs");
        const int r = xs[0].rank();
        require(axis >= 0 && axis < r, "concat: bad axis");
        Shape out_shape = xs[0].shape();
        int total = 0;
        for (const auto& x : xs) {
            require(x.rank() == r, "concat: rank mismatch");
            for (int i = 0; i < r; ++i)
                require(i == axis || x.shape()[i] == out_shape[i], "concat: shape mismatch");
            total += x.shape()[axis];
        }
        out_shape[axis] = total;
        Tensor out = Tensor::zeros(out_shape);
        // outer = product of dims before axis, inner = product after
        std::size_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(out_shape[i]);
        for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(out_shape[i]);
        std::size_t off = 0;
        for (const auto& x : xs) {
            const std::size_t ax = static_cast<std::size_t>(x.shape()[axis]);
            for (std::size_t o = 0; o < outer; ++o) {
                const double* src = x.values().data() + o * ax * inner;
                double* dst = out.values().data() +
                              (o * static_cast<std::size_t>(total) + off) * inner;
                std::copy(src, src + ax * inner, dst);
            }
            off += ax;
        }
        Node n;
        n.op = Op::Concat;
        for (const auto& x : xs) n.in.push_back(x.data_ptr());
        n.out = out.data_ptr();
        n.i0 = axis;
        finish(std::move(n), out);
        return out;
    }

    Tensor slice(const Tensor& x, int axis, int start, int len) {
        const int r = x.rank();
        require(axis >= 0 && axis < r, "slice: bad axis");
        require(start >= 0 && len >= 0 && start + len <= x.shape()[axis], "slice: out of range");
        Shape out_shape = x.shape();
        out_shape[axis] = len;
        Tensor out = Tensor::zeros(out_shape);
        std::size_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.shape()[i]);
        for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(x.shape()[i]);
        const std::size_t ax = static_cast<std::size_t>(x.shape()[axis]);
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = x.values().data() + (o * ax + start) * inner;
            double* dst = out.values().data() + o * static_cast<std::size_t>(len) * inner;
            std::copy(src, src + static_cast<std::size_t>(len) * inner, dst);
        }
        return record(Op::Slice, {x}, out, axis, start, len);
    }

    // ---- fused nn primitives ----

    Tensor softmax(const Tensor& x) {
        require(x.rank() >= 1, "softmax: rank >= 1 required");
        const int n = x.shape().back();
        const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = x.values().data() + r * n;
            double* yr = out.values().data() + r * n;
            double mx = xr[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                yr[j] = std::exp(xr[j] - mx);
                sum += yr[j];
            }
            const double inv = 1.0 / sum;
            for (int j = 0; j < n; ++j) yr[j] *= inv;
        }
        return record(Op::Softmax, {x}, out);
    }

    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-5) {
        require(x.rank() >= 1, "layer_norm: rank >= 1 required");
        const int d = x.shape().back();
        require(gamma.rank() == 1 && gamma.shape()[0] == d, "layer_norm: gamma shape");
        require(beta.rank() == 1 && beta.shape()[0] == d, "layer_norm: beta shape");
        const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
        Tensor out = Tensor::zeros(x.shape());
        std::vector<double> saved(rows * 2); // mean, invstd per row
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = x.values().data() + r * d;
            double* yr = out.values().data() + r * d;
            double mean = 0.0;
            for (int j = 0; j < d; ++j) mean += xr[j];
            mean /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                const double c = xr[j] - mean;
                var += c * c;
            }
            var /= d;
            const double invstd = 1.0 / std::sqrt(var + eps);
            for (int j = 0; j < d; ++j)
                yr[j] = (xr[j] - mean) * invstd * gamma.values()[j] + beta.values()[j];
            saved[2 * r] = mean;
            saved[2 * r + 1] = invstd;
        }
        Node n;
        n.op = Op::LayerNorm;
        n.in = {x.data_ptr(), gamma.data_ptr(), beta.data_ptr()};
        n.out = out.data_ptr();
        n.x0 = eps;
        n.saved = std::move(saved);
        finish(std::move(n), out);
        return out;
    }

    Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
        require(table.rank() == 2, "embedding: table must be 2-d");
        const int v = table.shape()[0], d = table.shape()[1];
        Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
        for (std::size_t t = 0; t < ids.size(); ++t) {
            require(ids[t] >= 0 && ids[t] < v, "embedding: id out of range");
            const double* src = table.values().data() + static_cast<std::size_t>(ids[t]) * d;
            std::copy(src, src + d, out.values().data() + t * d);
        }
        Node n;
        n.op = Op::Embedding;
        n.in = {table.data_ptr()};
        n.out = out.data_ptr();
        n.ids = ids;
        finish(std::move(n), out);
        return out;
    }

    // Mean over rows of -log softmax(logits)[target]; saves the softmax.
    Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
        require(logits.rank() == 2, "cross_entropy: logits must be 2-d");
        const int t = logits.shape()[0], v = logits.shape()[1];
        require(static_cast<int>(targets.size()) == t, "cross_entropy: target length mismatch");
        std::vector<double> probs(static_cast<std::size_t>(t) * v);
        double loss = 0.0;
        for (int r = 0; r < t; ++r) {
            require(targets[r] >= 0 && targets[r] < v, "cross_entropy: target out of range");
            const double* lr = logits.values().data() + static_cast<std::size_t>(r) * v;
            double* pr = probs.data() + static_cast<std::size_t>(r) * v;
            double mx = lr[0];
            for (int j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
            double sum = 0.0;
            for (int j = 0; j < v; ++j) {
                pr[j] = std::exp(lr[j] - mx);
                sum += pr[j];
            }
            const double inv = 1.0 / sum;
            for (int j = 0; j < v; ++j) pr[j] *= inv;
            loss -= std::log(pr[targets[r]]);
        }
        loss /= t;
        Node n;
        n.op = Op::CrossEntropy;
        n.in = {logits.data_ptr()};
        n.out = Tensor::scalar(loss).data_ptr();
        n.ids = targets;
        n.saved = std::move(probs);
        Tensor out(n.out);
        finish(std::move(n), out);
        return out;
    }

    // ---- reverse pass ----

    // Accumulates d(output)/d(leaf) into .grad of every tensor on a path from
    // a requires_grad leaf to `output`. Fan-out sums naturally.
    void backward(const Tensor& output) {
        if (output.rank() != 0)
            throw std::invalid_argument("backward: output must be a 0-dimensional scalar");
        if (!recording_)
            throw std::logic_error("backward: tape was not recording");
        for (auto& n : nodes_) {
            prepare_grad(*n.out);
            for (auto& in : n.in) prepare_grad(*in);
        }
        prepare_grad(*output.data_ptr());
        if (output.data_ptr()->needs_grad) output.data_ptr()->g[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) backward_node(nodes_[i]);
    }

private:
    bool recording_ = true;
    std::vector<Node> nodes_;

    static void require(bool cond, const char* msg) {
        if (!cond) throw std::invalid_argument(msg);
    }

    static void prepare_grad(TensorData& t) {
        if (!t.needs_grad) return;
        t.g.assign(t.v.size(), 0.0);
    }

    void finish(Node&& n, Tensor& out) {
        bool needs = false;
        for (const auto& in : n.in) needs = needs || in->needs_grad;
        out.data_ptr()->needs_grad = needs;
        if (recording_ && needs) nodes_.push_back(std::move(n));
    }

    Tensor record(Op op, std::initializer_list<Tensor> ins, Tensor out, int i0 = 0,
                  int i1 = 0, int i2 = 0, double x0 = 0.0) {
        Node n;
        n.op = op;
        for (const auto& t : ins) n.in.push_back(t.data_ptr());
        n.out = out.data_ptr();
        n.i0 = i0;
        n.i1 = i1;
        n.i2 = i2;
        n.x0 = x0;
        finish(std::move(n), out);
        return out;
    }

    static void fill_broadcast(const std::vector<double>& src,
                               const std::vector<std::size_t>& st,
                               std::vector<double>& dst, const Shape& out_shape) {
        const std::size_t r = out_shape.size();
        std::vector<std::size_t> idx(r, 0);
        for (std::size_t flat = 0; flat < dst.size(); ++flat) {
            std::size_t off = 0;
            for (std::size_t i = 0; i < r; ++i) off += idx[i] * st[i];
            dst[flat] = src[off];
            for (std::size_t i = r; i-- > 0;) {
                if (++idx[i] < static_cast<std::size_t>(out_shape[i])) break;
                idx[i] = 0;
            }
        }
    }

    Tensor binary(Op op, const Tensor& a, const Tensor& b) {
        Tensor out;
        if (a.shape() == b.shape()) {
            out = Tensor::zeros(a.shape());
            const auto& av = a.values();
            const auto& bv = b.values();
            auto& ov = out.values();
            apply_binary(op, av.data(), bv.data(), ov.data(), ov.size(), nullptr, nullptr);
        } else {
            const Shape os = detail::broadcast_shape(a.shape(), b.shape());
            out = Tensor::zeros(os);
            const auto sa = detail::broadcast_strides(a.shape(), os.size(), os);
            const auto sb = detail::broadcast_strides(b.shape(), os.size(), os);
            std::vector<std::size_t> idx(os.size(), 0);
            auto& ov = out.values();
            for (std::size_t flat = 0; flat < ov.size(); ++flat) {
                std::size_t oa = 0, ob = 0;
                for (std::size_t i = 0; i < os.size(); ++i) {
                    oa += idx[i] * sa[i];
                    ob += idx[i] * sb[i];
                }
                apply_binary(op, a.values().data() + oa, b.values().data() + ob,
                             ov.data() + flat, 1, nullptr, nullptr);
                for (std::size_t i = os.size(); i-- > 0;) {
                    if (++idx[i] < static_cast<std::size_t>(os[i])) break;
                    idx[i] = 0;
                }
            }
        }
        return record(op, {a, b}, out);
    }

    static void apply_binary(Op op, const double* a, const double* b, double* o,
                             std::size_t n, const double*, const double*) {
        switch (op) {
            case Op::Add: for (std::size_t i = 0; i < n; ++i) o[i] = a[i] + b[i]; break;
            case Op::Sub: for (std::size_t i = 0; i < n; ++i) o[i] = a[i] - b[i]; break;
            case Op::Mul: for (std::size_t i = 0; i < n; ++i) o[i] = a[i] * b[i]; break;
            case Op::Div:
                for (std::size_t i = 0; i < n; ++i) {
                    if (b[i] == 0.0) throw std::domain_error("div: zero denominator");
                    o[i] = a[i] / b[i];
                }
                break;
            default: throw std::logic_error("apply_binary: not a binary op");
        }
    }

    Tensor unary(Op op, const Tensor& x) {
        Tensor out = Tensor::zeros(x.shape());
        const auto& xv = x.values();
        auto& ov = out.values();
        switch (op) {
            case Op::Exp: for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::exp(xv[i]); break;
            case Op::Log: for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::log(xv[i]); break;
            case Op::Sqrt: for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::sqrt(xv[i]); break;
            case Op::Tanh: for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::tanh(xv[i]); break;
            case Op::Sigmoid:
                for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = detail::sigmoid_stable(xv[i]);
                break;
            case Op::Softplus:
                for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = detail::softplus_stable(xv[i]);
                break;
            case Op::Gelu:
                for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = detail::gelu_exact(xv[i]);
                break;
            case Op::Abs: for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::abs(xv[i]); break;
            default: throw std::logic_error("unary: not a unary op");
        }
        return record(op, {x}, out);
    }

    Tensor reduce_axis(Op op, const Tensor& x, int axis) {
        const int r = x.rank();
        require(axis >= 0 && axis < r, "reduce: bad axis");
        Shape out_shape;
        for (int i = 0; i < r; ++i)
            if (i != axis) out_shape.push_back(x.shape()[i]);
        Tensor out = Tensor::zeros(out_shape);
        std::size_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.shape()[i]);
        for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(x.shape()[i]);
        const std::size_t ax = static_cast<std::size_t>(x.shape()[axis]);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < ax; ++a) {
                const double* src = x.values().data() + (o * ax + a) * inner;
                double* dst = out.values().data() + o * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
        if (op == Op::MeanAxis) {
            const double inv = 1.0 / static_cast<double>(ax);
            for (auto& v : out.values()) v *= inv;
        }
        return record(op, {x}, out, axis);
    }

    void backward_node(Node& n) {
        TensorData& out = *n.out;
        if (!out.needs_grad) return;
        const std::vector<double>& go = out.g;
        switch (n.op) {
            case Op::MatMul: {
                TensorData& a = *n.in[0];
                TensorData& b = *n.in[1];
                const int m = a.shape[0], k = a.shape[1], nn = b.shape[1];
                if (a.needs_grad) {
                    // dA += dC B^T
                    for (int i = 0; i < m; ++i)
                        for (int p = 0; p < k; ++p) {
                            const double* Gi = go.data() + static_cast<std::size_t>(i) * nn;
                            const double* Bp = b.v.data() + static_cast<std::size_t>(p) * nn;
                            double acc = 0.0;
                            for (int j = 0; j < nn; ++j) acc += Gi[j] * Bp[j];
                            a.g[static_cast<std::size_t>(i) * k + p] += acc;
                        }
                }
                if (b.needs_grad) {
                    // dB += A^T dC
                    for (int p = 0; p < k; ++p)
                        for (int i = 0; i < m; ++i) {
                            const double aip = a.v[static_cast<std::size_t>(i) * k + p];
                            const double* Gi = go.data() + static_cast<std::size_t>(i) * nn;
                            double* Bp = b.g.data() + static_cast<std::size_t>(p) * nn;
                            for (int j = 0; j < nn; ++j) Bp[j] += aip * Gi[j];
                        }
                }
                break;
            }
            case Op::MatMulNT: {
                TensorData& a = *n.in[0];
                TensorData& b = *n.in[1];
                const int m = a.shape[0], k = a.shape[1], nn = b.shape[0];
                if (a.needs_grad) {
                    // dA += dC B
                    for (int i = 0; i < m; ++i) {
                        const double* Gi = go.data() + static_cast<std::size_t>(i) * nn;
                        double* Ai = a.g.data() + static_cast<std::size_t>(i) * k;
                        for (int j = 0; j < nn; ++j) {
                            const double g = Gi[j];
                            const double* Bj = b.v.data() + static_cast<std::size_t>(j) * k;
                            for (int p = 0; p < k; ++p) Ai[p] += g * Bj[p];
                        }
                    }
                }
                if (b.needs_grad) {
                    // dB += dC^T A
                    for (int j = 0; j < nn; ++j) {
                        double* Bj = b.g.data() + static_cast<std::size_t>(j) * k;
                        for (int i = 0; i < m; ++i) {
                            const double g = go[static_cast<std::size_t>(i) * nn + j];
                            const double* Ai = a.v.data() + static_cast<std::size_t>(i) * k;
                            for (int p = 0; p < k; ++p) Bj[p] += g * Ai[p];
                        }
                    }
                }
                break;
            }
            case Op::Transpose: {
                TensorData& x = *n.in[0];
                if (!x.needs_grad) break;
                const int m = x.shape[0], nn = x.shape[1];
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < nn; ++j)
                        x.g[static_cast<std::size_t>(i) * nn + j] +=
                            go[static_cast<std::size_t>(j) * m + i];
                break;
            }
            case Op::Add: case Op::Sub: case Op::Mul: case Op::Div: {
                TensorData& a = *n.in[0];
                TensorData& b = *n.in[1];
                std::vector<double> da, db;
                const bool wa = a.needs_grad, wb = b.needs_grad;
                if (wa) da.assign(out.v.size(), 0.0);
                if (wb) db.assign(out.v.size(), 0.0);
                if (a.shape == b.shape) {
                    for (std::size_t i = 0; i < out.v.size(); ++i)
                        binary_grad(n.op, a.v[i], b.v[i], go[i], wa ? &da[i] : nullptr,
                                    wb ? &db[i] : nullptr);
                } else {
                    const Shape& os = out.shape;
                    const auto sa = detail::broadcast_strides(a.shape, os.size(), os);
                    const auto sb = detail::broadcast_strides(b.shape, os.size(), os);
                    std::vector<std::size_t> idx(os.size(), 0);
                    for (std::size_t flat = 0; flat < out.v.size(); ++flat) {
                        std::size_t oa = 0, ob = 0;
                        for (std::size_t i = 0; i < os.size(); ++i) {
                            oa += idx[i] * sa[i];
                            ob += idx[i] * sb[i];
                        }
                        binary_grad(n.op, a.v[oa], b.v[ob], go[flat], wa ? &da[flat] : nullptr,
                                    wb ? &db[flat] : nullptr);
                        for (std::size_t i = os.size(); i-- > 0;) {
                            if (++idx[i] < static_cast<std::size_t>(os[i])) break;
                            idx[i] = 0;
                        }
                    }
                }
                if (wa) detail::reduce_into(da, out.shape, a.g, pad_shape(a.shape, out.shape));
                if (wb) detail::reduce_into(db, out.shape, b.g, pad_shape(b.shape, out.shape));
                break;
            }
            case Op::Exp: unary_grad(n, [&](std::size_t i, double) { return out.v[i]; }); break;
            case Op::Log: unary_grad(n, [&](std::size_t, double x) { return 1.0 / x; }); break;
            case Op::Sqrt:
                unary_grad(n, [&](std::size_t i, double) { return 0.5 / out.v[i]; });
                break;
            case Op::Tanh:
                unary_grad(n, [&](std::size_t i, double) { return 1.0 - out.v[i] * out.v[i]; });
                break;
            case Op::Sigmoid:
                unary_grad(n, [&](std::size_t i, double) { return out.v[i] * (1.0 - out.v[i]); });
                break;
            case Op::Softplus:
                unary_grad(n, [](std::size_t, double x) { return detail::sigmoid_stable(x); });
                break;
            case Op::Gelu:
                unary_grad(n, [](std::size_t, double x) { return detail::gelu_grad(x); });
                break;
            case Op::Abs:
                unary_grad(n, [](std::size_t, double x) {
                    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                });
                break;
            case Op::PowScalar:
                unary_grad(n, [&](std::size_t, double x) {
                    return n.x0 * (n.x0 == 2.0 ? x : std::pow(x, n.x0 - 1.0));
                });
                break;
            case Op::AddScalar: unary_grad(n, [](std::size_t, double) { return 1.0; }); break;
            case Op::MulScalar:
                unary_grad(n, [&](std::size_t, double) { return n.x0; });
                break;
            case Op::MaxScalar:
                unary_grad(n, [&](std::size_t, double x) { return x > n.x0 ? 1.0 : 0.0; });
                break;
            case Op::SumAll: {
                TensorData& x = *n.in[0];
                if (!x.needs_grad) break;
                for (auto& g : x.g) g += go[0];
                break;
            }
            case Op::MeanAll: {
                TensorData& x = *n.in[0];
                if (!x.needs_grad) break;
                const double s = go[0] / static_cast<double>(x.v.size());
                for (auto& g : x.g) g += s;
                break;
            }
            case Op::SumAxis: case Op::MeanAxis: {
                TensorData& x = *n.in[0];
                if (!x.needs_grad) break;
                const int axis = n.i0;
                std::size_t outer = 1, inner = 1;
                const int r = static_cast<int>(x.shape.size());
                for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.shape[i]);
                for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(x.shape[i]);
                const std::size_t ax = static_cast<std::size_t>(x.shape[axis]);
                const double scale = n.op == Op::MeanAxis ? 1.0 / static_cast<double>(ax) : 1.0;
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t a = 0; a < ax; ++a) {
                        double* dst = x.g.data() + (o * ax + a) * inner;
                        const double* src = go.data() + o * inner;
                        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * scale;
                    }
                break;
            }
            case Op::BroadcastTo: {
                TensorData& x = *n.in[0];
                if (!x.needs_grad) break;
                detail::reduce_into(go, out.shape, x.g, pad_shape(x.shape, out.shape));
                break;
            }
            case Op::Reshape: {
                TensorData& x = *n.in[0];
                if (!x.needs_grad) break;
                for (std::size_t i = 0; i < go.size(); ++i) x.g[i] += go[i];
                break;
            }
            case Op::Concat: {
                const int axis = n.i0;
                const Shape& os = out.shape;
                std::size_t outer = 1, inner = 1;
                const int r = static_cast<int>(os.size());
                for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(os[i]);
                for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(os[i]);
                const std::size_t total = static_cast<std::size_t>(os[axis]);
                std::size_t off = 0;
                for (auto& inp : n.in) {
                    TensorData& x = *inp;
                    const std::size_t ax = static_cast<std::size_t>(x.shape[axis]);
                    if (x.needs_grad) {
                        for (std::size_t o = 0; o < outer; ++o) {
                            const double* src = go.data() + (o * total + off) * inner;
                            double* dst = x.g.data() + o * ax * inner;
                            for (std::size_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
                        }
                    }
                    off += ax;
                }
                break;
            }
            case Op::Slice: {
                TensorData& x = *n.in[0];
                if (!x.needs_grad) break;
                const int axis = n.i0, start = n.i1, len = n.i2;
                std::size_t outer = 1, inner = 1;
                const int r = static_cast<int>(x.shape.size());
                for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.shape[i]);
                for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(x.shape[i]);
                const std::size_t ax = static_cast<std::size_t>(x.shape[axis]);
                for (std::size_t o = 0; o < outer; ++o) {
                    double* dst = x.g.data() + (o * ax + start) * inner;
                    const double* src = go.data() + o * static_cast<std::size_t>(len) * inner;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(len) * inner; ++i)
                        dst[i] += src[i];
                }
                break;
            }
            case Op::Softmax: {
                TensorData& x = *n.in[0];
                if (!x.needs_grad) break;
                const int d = out.shape.back();
                const std::size_t rows = out.v.size() / static_cast<std::size_t>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* y = out.v.data() + r * d;
                    const double* gy = go.data() + r * d;
                    double dot = 0.0;
                    for (int j = 0; j < d; ++j) dot += gy[j] * y[j];
                    double* gx = x.g.data() + r * d;
                    for (int j = 0; j < d; ++j) gx[j] += (gy[j] - dot) * y[j];
                }
                break;
            }
            case Op::LayerNorm: {
                TensorData& x = *n.in[0];
                TensorData& gamma = *n.in[1];
                TensorData& beta = *n.in[2];
                const int d = x.shape.back();
                const std::size_t rows = x.v.size() / static_cast<std::size_t>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double mean = n.saved[2 * r];
                    const double invstd = n.saved[2 * r + 1];
                    const double* xr = x.v.data() + r * d;
                    const double* gy = go.data() + r * d;
                    if (gamma.needs_grad || beta.needs_grad) {
                        for (int j = 0; j < d; ++j) {
                            const double xhat = (xr[j] - mean) * invstd;
                            if (gamma.needs_grad) gamma.g[j] += gy[j] * xhat;
                            if (beta.needs_grad) beta.g[j] += gy[j];
                        }
                    }
                    if (x.needs_grad) {
                        double mg = 0.0, mgx = 0.0;
                        for (int j = 0; j < d; ++j) {
                            const double gyh = gy[j] * gamma.v[j];
                            const double xhat = (xr[j] - mean) * invstd;
                            mg += gyh;
                            mgx += gyh * xhat;
                        }
                        mg /= d;
                        mgx /= d;
                        double* gx = x.g.data() + r * d;
                        for (int j = 0; j < d; ++j) {
                            const double gyh = gy[j] * gamma.v[j];
                            const double xhat = (xr[j] - mean) * invstd;
                            gx[j] += (gyh - mg - xhat * mgx) * invstd;
                        }
                    }
                }
                break;
            }
            case Op::Embedding: {
                TensorData& table = *n.in[0];
                if (!table.needs_grad) break;
                const int d = table.shape[1];
                for (std::size_t t = 0; t < n.ids.size(); ++t) {
                    const double* src = go.data() + t * d;
                    double* dst = table.g.data() + static_cast<std::size_t>(n.ids[t]) * d;
                    for (int j = 0; j < d; ++j) dst[j] += src[j];
                }
                break;
            }
            case Op::CrossEntropy: {
                TensorData& logits = *n.in[0];
                if (!logits.needs_grad) break;
                const int t = logits.shape[0], v = logits.shape[1];
                const double scale = go[0] / static_cast<double>(t);
                for (int r = 0; r < t; ++r) {
                    const double* pr = n.saved.data() + static_cast<std::size_t>(r) * v;
                    double* gr = logits.g.data() + static_cast<std::size_t>(r) * v;
                    for (int j = 0; j < v; ++j) gr[j] += scale * pr[j];
                    gr[n.ids[r]] -= scale;
                }
                break;
            }
        }
    }

    static Shape pad_shape(const Shape& s, const Shape& to) {
        Shape out(to.size(), 1);
        std::copy(s.begin(), s.end(), out.end() - s.size());
        return out;
    }

    static void binary_grad(Op op, double a, double b, double g, double* da, double* db) {
        switch (op) {
            case Op::Add:
                if (da) *da += g;
                if (db) *db += g;
                break;
            case Op::Sub:
                if (da) *da += g;
                if (db) *db -= g;
                break;
            case Op::Mul:
                if (da) *da += g * b;
                if (db) *db += g * a;
                break;
            case Op::Div:
                if (da) *da += g / b;
                if (db) *db -= g * a / (b * b);
                break;
            default: break;
        }
    }

    template <class F>
    void unary_grad(Node& n, F&& dfdx) {
        TensorData& x = *n.in[0];
        if (!x.needs_grad) return;
        const auto& go = n.out->g;
        for (std::size_t i = 0; i < x.v.size(); ++i) x.g[i] += go[i] * dfdx(i, x.v[i]);
    }
};

// ---- finite-difference gradient verification ----

// Returns the max over all input elements of |analytic - numeric| / max(1, |numeric|)
// against central differences. Inputs must be strictly inside the op domain.
inline double check_gradient(
    const std::string& name,
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& build,
    const std::vector<Tensor>& point, double step = 1e-5) {
    std::vector<Tensor> inputs;
    inputs.reserve(point.size());
    for (const auto& p : point) inputs.push_back(p.clone().set_requires_grad(true));

    Tape tape;
    Tensor y = build(tape, inputs);
    if (y.rank() != 0) throw std::invalid_argument("check_gradient(" + name + "): non-scalar output");
    if (!std::isfinite(y.item()))
        throw std::runtime_error("check_gradient(" + name + "): non-finite forward value");
    tape.backward(y);

    auto eval = [&](const std::vector<Tensor>& at) {
        Tape t;
        t.set_recording(false);
        const double v = build(t, at).item();
        if (!std::isfinite(v))
            throw std::runtime_error("check_gradient(" + name + "): non-finite intermediate");
        return v;
    };

    double max_rel = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::vector<double> analytic = inputs[i].grad();
        std::vector<Tensor> probe;
        probe.reserve(inputs.size());
        for (const auto& t : inputs) probe.push_back(t.clone());
        for (std::size_t j = 0; j < probe[i].numel(); ++j) {
            const double orig = probe[i].values()[j];
            probe[i].values()[j] = orig + step;
            const double fp = eval(probe);
            probe[i].values()[j] = orig - step;
            const double fm = eval(probe);
            probe[i].values()[j] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double rel = std::abs(analytic[j] - numeric) / std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace lapael

#endif
