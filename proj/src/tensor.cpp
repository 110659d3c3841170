#include "zeggs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace zeggs::tc {

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::int64_t shape_size(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 0) fail(Errc::shape, "negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<int> shape) {
    Tensor<T> t;
    t.p_ = std::make_shared<TensorPayload<T>>();
    t.p_->shape = std::move(shape);
    t.p_->value.assign(std::size_t(shape_size(t.p_->shape)), T(0));
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<int> shape, T v) {
    Tensor<T> t = zeros(std::move(shape));
    std::fill(t.p_->value.begin(), t.p_->value.end(), v);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(std::vector<int> shape, std::vector<T> data) {
    if (shape_size(shape) != std::int64_t(data.size()))
        fail(Errc::shape, "data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    Tensor<T> t;
    t.p_ = std::make_shared<TensorPayload<T>>();
    t.p_->shape = std::move(shape);
    t.p_->value = std::move(data);
    return t;
}

template <typename T>
std::vector<T>& Tensor<T>::grad() const {
    if (!p_->requires_grad) fail(Errc::state, "tensor has no gradient");
    return p_->grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool b) {
    p_->requires_grad = b;
    if (b)
        p_->grad.assign(p_->value.size(), T(0));
    else
        p_->grad.clear();
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (p_->requires_grad) std::fill(p_->grad.begin(), p_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
    if (size() != 1) fail(Errc::shape, "item() on tensor of shape " + shape_str(shape()));
    return p_->value[0];
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename T>
Tensor<T> ParameterSet<T>::add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) fail(Errc::state, "duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, t});
    return t;
}

template <typename T>
Tensor<T> ParameterSet<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(Errc::state, "unknown parameter: " + name);
    return params_[it->second].tensor;
}

template <typename T>
std::int64_t ParameterSet<T>::total_size() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

// ---------------------------------------------------------------------------
// Tape plumbing

template <typename T>
bool Tape<T>::tracking(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!grad_enabled_) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
Tensor<T> Tape<T>::make_output(std::vector<int> shape, bool needs_grad) {
    Tensor<T> out = Tensor<T>::zeros(std::move(shape));
    if (needs_grad) out.set_requires_grad(true);
    return out;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
        fail(Errc::shape, "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad())
        fail(Errc::state, "loss does not require grad (no parameters reachable?)");
    loss.payload()->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

namespace {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        fail(Errc::shape, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

template <typename T>
void check_rank2(const char* op, const Tensor<T>& a) {
    if (a.rank() != 2)
        fail(Errc::shape, std::string(op) + ": expected rank-2 tensor, got " + shape_str(a.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops

// Shared plumbing for unary elementwise ops: fwd(x) computes the value,
// dfwd(x, y) the local derivative.
template <typename T, typename F, typename DF>
static Tensor<T> unary_op(Tape<T>& tape, const Tensor<T>& a, F fwd, DF dfwd, bool track,
                          std::vector<std::function<void()>>& nodes, Tensor<T> out) {
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
    if (track) {
        nodes.push_back([pa = a.payload(), po = out.payload(), dfwd]() {
            for (std::size_t i = 0; i < pa->value.size(); ++i)
                pa->grad[i] += po->grad[i] * dfwd(pa->value[i], po->value[i]);
        });
    }
    (void)tape;
    return out;
}

#define ZEGGS_UNARY(NAME, FWD, DFWD)                                                      \
    template <typename T>                                                                 \
    Tensor<T> Tape<T>::NAME(const Tensor<T>& a) {                                         \
        bool tr = tracking({&a}) && a.requires_grad();                                    \
        Tensor<T> out = make_output(a.shape(), tr);                                       \
        return unary_op(*this, a, FWD, DFWD, tr, nodes_, out);                            \
    }

ZEGGS_UNARY(abs, [](T x) { return x < T(0) ? -x : x; },
            ([](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); }))
ZEGGS_UNARY(exp, [](T x) { return std::exp(x); }, ([](T, T y) { return y; }))
ZEGGS_UNARY(sin, [](T x) { return std::sin(x); }, ([](T x, T) { return std::cos(x); }))
ZEGGS_UNARY(cos, [](T x) { return std::cos(x); }, ([](T x, T) { return -std::sin(x); }))
ZEGGS_UNARY(tanh, [](T x) { return std::tanh(x); }, ([](T, T y) { return T(1) - y * y; }))
ZEGGS_UNARY(sigmoid, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
            ([](T, T y) { return y * (T(1) - y); }))
ZEGGS_UNARY(relu, [](T x) { return x > T(0) ? x : T(0); },
            ([](T x, T) { return x > T(0) ? T(1) : T(0); }))
ZEGGS_UNARY(elu, [](T x) { return x > T(0) ? x : std::expm1(x); },
            ([](T x, T y) { return x > T(0) ? T(1) : y + T(1); }))

#undef ZEGGS_UNARY

template <typename T>
Tensor<T> Tape<T>::sqrt_eps(const Tensor<T>& a, T eps) {
    bool tr = tracking({&a});
    Tensor<T> out = make_output(a.shape(), tr);
    return unary_op(
        *this, a, [eps](T x) { return std::sqrt(x + eps); },
        [](T, T y) { return T(0.5) / y; }, tr, nodes_, out);
}

template <typename T>
Tensor<T> Tape<T>::rsqrt_eps(const Tensor<T>& a, T eps) {
    bool tr = tracking({&a});
    Tensor<T> out = make_output(a.shape(), tr);
    return unary_op(
        *this, a, [eps](T x) { return T(1) / std::sqrt(x + eps); },
        [](T, T y) { return T(-0.5) * y * y * y; }, tr, nodes_, out);
}

template <typename T>
Tensor<T> Tape<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("add", a, b);
    bool tr = tracking({&a, &b});
    Tensor<T> out = make_output(a.shape(), tr);
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
    if (tr)
        record([pa = a.payload(), pb = b.payload(), po = out.payload()]() {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pb->grad[i] += po->grad[i];
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("sub", a, b);
    bool tr = tracking({&a, &b});
    Tensor<T> out = make_output(a.shape(), tr);
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
    if (tr)
        record([pa = a.payload(), pb = b.payload(), po = out.payload()]() {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pb->grad[i] -= po->grad[i];
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("mul", a, b);
    bool tr = tracking({&a, &b});
    Tensor<T> out = make_output(a.shape(), tr);
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
    if (tr)
        record([pa = a.payload(), pb = b.payload(), po = out.payload()]() {
            if (pa->requires_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i)
                    pa->grad[i] += po->grad[i] * pb->value[i];
            if (pb->requires_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i)
                    pb->grad[i] += po->grad[i] * pa->value[i];
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::scale(const Tensor<T>& a, T c) {
    bool tr = tracking({&a});
    Tensor<T> out = make_output(a.shape(), tr);
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;
    if (tr)
        record([pa = a.payload(), po = out.payload(), c]() {
            for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i] * c;
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::add_scalar(const Tensor<T>& a, T c) {
    bool tr = tracking({&a});
    Tensor<T> out = make_output(a.shape(), tr);
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + c;
    if (tr)
        record([pa = a.payload(), po = out.payload()]() {
            for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::atan2(const Tensor<T>& y, const Tensor<T>& x) {
    check_same_shape("atan2", y, x);
    bool tr = tracking({&y, &x});
    Tensor<T> out = make_output(y.shape(), tr);
    const auto& yv = y.value();
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < yv.size(); ++i) ov[i] = std::atan2(yv[i], xv[i]);
    if (tr)
        record([py = y.payload(), px = x.payload(), po = out.payload()]() {
            for (std::size_t i = 0; i < po->grad.size(); ++i) {
                T a = py->value[i], b = px->value[i];
                T d = a * a + b * b;
                if (d == T(0)) continue;
                if (py->requires_grad) py->grad[i] += po->grad[i] * b / d;
                if (px->requires_grad) px->grad[i] -= po->grad[i] * a / d;
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::dropout(const Tensor<T>& a, T rate, bool training, RngStream& rng) {
    if (rate < T(0) || rate >= T(1)) fail(Errc::config, "dropout rate must be in [0,1)");
    if (!training || rate == T(0)) return a;  // exact identity in evaluation mode
    bool tr = tracking({&a});
    Tensor<T> out = make_output(a.shape(), tr);
    const auto& av = a.value();
    auto& ov = out.value();
    std::vector<T> mask(av.size());
    T keep_scale = T(1) / (T(1) - rate);
    for (std::size_t i = 0; i < av.size(); ++i) {
        mask[i] = (rng.uniform() < double(rate)) ? T(0) : keep_scale;
        ov[i] = av[i] * mask[i];
    }
    if (tr)
        record([pa = a.payload(), po = out.payload(), mask = std::move(mask)]() {
            for (std::size_t i = 0; i < po->grad.size(); ++i)
                pa->grad[i] += po->grad[i] * mask[i];
        });
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> Tape<T>::matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check_rank2("matmul", a);
    check_rank2("matmul", b);
    if (a.dim(1) != b.dim(0))
        fail(Errc::shape, "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    bool tr = tracking({&a, &b});
    Tensor<T> out = make_output({m, n}, tr);
    const T* av = a.value().data();
    const T* bv = b.value().data();
    T* ov = out.value().data();
    for (int i = 0; i < m; ++i) {
        T* orow = ov + std::size_t(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            T s = av[std::size_t(i) * k + kk];
            if (s == T(0)) continue;
            const T* brow = bv + std::size_t(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += s * brow[j];
        }
    }
    if (tr)
        record([pa = a.payload(), pb = b.payload(), po = out.payload(), m, k, n]() {
            const T* go = po->grad.data();
            if (pa->requires_grad) {
                // dA = dC * B^T
                T* ga = pa->grad.data();
                const T* bv2 = pb->value.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const T* grow = go + std::size_t(i) * n;
                        const T* brow = bv2 + std::size_t(kk) * n;
                        T acc = T(0);
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[std::size_t(i) * k + kk] += acc;
                    }
            }
            if (pb->requires_grad) {
                // dB = A^T * dC
                T* gb = pb->grad.data();
                const T* av2 = pa->value.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        T s = av2[std::size_t(i) * k + kk];
                        if (s == T(0)) continue;
                        const T* grow = go + std::size_t(i) * n;
                        T* brow = gb + std::size_t(kk) * n;
                        for (int j = 0; j < n; ++j) brow[j] += s * grow[j];
                    }
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    check_rank2("matmul_nt", a);
    check_rank2("matmul_nt", b);
    if (a.dim(1) != b.dim(1))
        fail(Errc::shape, "matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()) + "^T");
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    bool tr = tracking({&a, &b});
    Tensor<T> out = make_output({m, n}, tr);
    const T* av = a.value().data();
    const T* bv = b.value().data();
    T* ov = out.value().data();
    for (int i = 0; i < m; ++i) {
        const T* arow = av + std::size_t(i) * k;
        T* orow = ov + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = bv + std::size_t(j) * k;
            T acc = T(0);
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            orow[j] = acc;
        }
    }
    if (tr)
        record([pa = a.payload(), pb = b.payload(), po = out.payload(), m, k, n]() {
            const T* go = po->grad.data();
            if (pa->requires_grad) {
                // dA = dC * B
                T* ga = pa->grad.data();
                const T* bv2 = pb->value.data();
                for (int i = 0; i < m; ++i) {
                    const T* grow = go + std::size_t(i) * n;
                    T* garow = ga + std::size_t(i) * k;
                    for (int j = 0; j < n; ++j) {
                        T s = grow[j];
                        if (s == T(0)) continue;
                        const T* brow = bv2 + std::size_t(j) * k;
                        for (int kk = 0; kk < k; ++kk) garow[kk] += s * brow[kk];
                    }
                }
            }
            if (pb->requires_grad) {
                // dB = dC^T * A
                T* gb = pb->grad.data();
                const T* av2 = pa->value.data();
                for (int i = 0; i < m; ++i) {
                    const T* grow = go + std::size_t(i) * n;
                    const T* arow = av2 + std::size_t(i) * k;
                    for (int j = 0; j < n; ++j) {
                        T s = grow[j];
                        if (s == T(0)) continue;
                        T* gbrow = gb + std::size_t(j) * k;
                        for (int kk = 0; kk < k; ++kk) gbrow[kk] += s * arow[kk];
                    }
                }
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    check_rank2("linear", w);
    bool vec = (x.rank() == 1);
    if (!vec) check_rank2("linear", x);
    int in = vec ? x.dim(0) : x.dim(1);
    int rows = vec ? 1 : x.dim(0);
    if (in != w.dim(0))
        fail(Errc::shape, "linear: input width " + shape_str(x.shape()) + " incompatible with weight " +
                              shape_str(w.shape()));
    int out_dim = w.dim(1);
    if (b.size() != out_dim)
        fail(Errc::shape, "linear: bias " + shape_str(b.shape()) + " incompatible with weight " +
                              shape_str(w.shape()));
    bool tr = tracking({&x, &w, &b});
    Tensor<T> out = make_output(vec ? std::vector<int>{out_dim} : std::vector<int>{rows, out_dim}, tr);
    const T* xv = x.value().data();
    const T* wv = w.value().data();
    const T* bv = b.value().data();
    T* ov = out.value().data();
    for (int i = 0; i < rows; ++i) {
        T* orow = ov + std::size_t(i) * out_dim;
        for (int j = 0; j < out_dim; ++j) orow[j] = bv[j];
        const T* xrow = xv + std::size_t(i) * in;
        for (int kk = 0; kk < in; ++kk) {
            T s = xrow[kk];
            if (s == T(0)) continue;
            const T* wrow = wv + std::size_t(kk) * out_dim;
            for (int j = 0; j < out_dim; ++j) orow[j] += s * wrow[j];
        }
    }
    if (tr)
        record([px = x.payload(), pw = w.payload(), pb = b.payload(), po = out.payload(), rows, in,
                out_dim]() {
            const T* go = po->grad.data();
            if (px->requires_grad) {
                T* gx = px->grad.data();
                const T* wv2 = pw->value.data();
                for (int i = 0; i < rows; ++i) {
                    const T* grow = go + std::size_t(i) * out_dim;
                    T* gxrow = gx + std::size_t(i) * in;
                    for (int kk = 0; kk < in; ++kk) {
                        const T* wrow = wv2 + std::size_t(kk) * out_dim;
                        T acc = T(0);
                        for (int j = 0; j < out_dim; ++j) acc += grow[j] * wrow[j];
                        gxrow[kk] += acc;
                    }
                }
            }
            if (pw->requires_grad) {
                T* gw = pw->grad.data();
                const T* xv2 = px->value.data();
                for (int i = 0; i < rows; ++i) {
                    const T* grow = go + std::size_t(i) * out_dim;
                    const T* xrow = xv2 + std::size_t(i) * in;
                    for (int kk = 0; kk < in; ++kk) {
                        T s = xrow[kk];
                        if (s == T(0)) continue;
                        T* gwrow = gw + std::size_t(kk) * out_dim;
                        for (int j = 0; j < out_dim; ++j) gwrow[j] += s * grow[j];
                    }
                }
            }
            if (pb->requires_grad) {
                T* gb = pb->grad.data();
                for (int i = 0; i < rows; ++i) {
                    const T* grow = go + std::size_t(i) * out_dim;
                    for (int j = 0; j < out_dim; ++j) gb[j] += grow[j];
                }
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::conv1d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias,
                          PadMode pad) {
    check_rank2("conv1d", x);
    if (kernels.rank() != 3)
        fail(Errc::shape, "conv1d: kernels must be [k,Cin,Cout], got " + shape_str(kernels.shape()));
    int klen = kernels.dim(0), cin = kernels.dim(1), cout = kernels.dim(2);
    if (klen % 2 == 0) fail(Errc::shape, "conv1d: kernel size must be odd, got " + std::to_string(klen));
    if (x.dim(1) != cin)
        fail(Errc::shape, "conv1d: input channels " + shape_str(x.shape()) + " vs kernels " +
                              shape_str(kernels.shape()));
    if (bias.size() != cout)
        fail(Errc::shape, "conv1d: bias " + shape_str(bias.shape()) + " vs kernels " +
                              shape_str(kernels.shape()));
    int tlen = x.dim(0);
    int p = (klen - 1) / 2;
    bool tr = tracking({&x, &kernels, &bias});
    Tensor<T> out = make_output({tlen, cout}, tr);
    const T* xv = x.value().data();
    const T* kv = kernels.value().data();
    const T* bv = bias.value().data();
    T* ov = out.value().data();

    // Source row for output index t, kernel tap kk; -1 means "zero" padding.
    auto src_row = [tlen, p, pad](int t, int kk) -> int {
        int s = t + kk - p;
        if (s >= 0 && s < tlen) return s;
        if (pad == PadMode::replicate) return s < 0 ? 0 : tlen - 1;
        return -1;
    };

    for (int t = 0; t < tlen; ++t) {
        T* orow = ov + std::size_t(t) * cout;
        for (int j = 0; j < cout; ++j) orow[j] = bv[j];
        for (int kk = 0; kk < klen; ++kk) {
            int s = src_row(t, kk);
            if (s < 0) continue;
            const T* xrow = xv + std::size_t(s) * cin;
            const T* kslice = kv + std::size_t(kk) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                T val = xrow[ci];
                if (val == T(0)) continue;
                const T* krow = kslice + std::size_t(ci) * cout;
                for (int j = 0; j < cout; ++j) orow[j] += val * krow[j];
            }
        }
    }
    if (tr)
        record([px = x.payload(), pk = kernels.payload(), pb = bias.payload(), po = out.payload(),
                tlen, klen, cin, cout, src_row]() {
            const T* go = po->grad.data();
            const T* xv2 = px->value.data();
            const T* kv2 = pk->value.data();
            for (int t = 0; t < tlen; ++t) {
                const T* grow = go + std::size_t(t) * cout;
                if (pb->requires_grad) {
                    T* gb = pb->grad.data();
                    for (int j = 0; j < cout; ++j) gb[j] += grow[j];
                }
                for (int kk = 0; kk < klen; ++kk) {
                    int s = src_row(t, kk);
                    if (s < 0) continue;
                    const T* xrow = xv2 + std::size_t(s) * cin;
                    const T* kslice = kv2 + std::size_t(kk) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const T* krow = kslice + std::size_t(ci) * cout;
                        if (px->requires_grad) {
                            T acc = T(0);
                            for (int j = 0; j < cout; ++j) acc += grow[j] * krow[j];
                            px->grad[std::size_t(s) * cin + ci] += acc;
                        }
                        if (pk->requires_grad) {
                            T val = xrow[ci];
                            if (val != T(0)) {
                                T* gkrow = pk->grad.data() + std::size_t(kk) * cin * cout +
                                           std::size_t(ci) * cout;
                                for (int j = 0; j < cout; ++j) gkrow[j] += val * grow[j];
                            }
                        }
                    }
                }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// Normalization / attention / recurrence

template <typename T>
Tensor<T> Tape<T>::softmax_rows(const Tensor<T>& x) {
    check_rank2("softmax_rows", x);
    int n = x.dim(0), d = x.dim(1);
    bool tr = tracking({&x});
    Tensor<T> out = make_output({n, d}, tr);
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int i = 0; i < n; ++i) {
        const T* r = xv + std::size_t(i) * d;
        T* o = ov + std::size_t(i) * d;
        T mx = r[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, r[j]);
        T sum = T(0);
        for (int j = 0; j < d; ++j) {
            o[j] = std::exp(r[j] - mx);
            sum += o[j];
        }
        T inv = T(1) / sum;
        for (int j = 0; j < d; ++j) o[j] *= inv;
    }
    if (tr)
        record([px = x.payload(), po = out.payload(), n, d]() {
            const T* ov2 = po->value.data();
            const T* go = po->grad.data();
            T* gx = px->grad.data();
            for (int i = 0; i < n; ++i) {
                const T* y = ov2 + std::size_t(i) * d;
                const T* gy = go + std::size_t(i) * d;
                T dot = T(0);
                for (int j = 0; j < d; ++j) dot += gy[j] * y[j];
                T* g = gx + std::size_t(i) * d;
                for (int j = 0; j < d; ++j) g[j] += y[j] * (gy[j] - dot);
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                              T eps) {
    check_rank2("layer_norm", x);
    int n = x.dim(0), d = x.dim(1);
    if (gain.size() != d || bias.size() != d)
        fail(Errc::shape, "layer_norm: gain/bias must have width " + std::to_string(d));
    bool tr = tracking({&x, &gain, &bias});
    Tensor<T> out = make_output({n, d}, tr);
    const T* xv = x.value().data();
    const T* gv = gain.value().data();
    const T* bv = bias.value().data();
    T* ov = out.value().data();
    std::vector<T> inv_std(static_cast<std::size_t>(n));
    std::vector<T> mean(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const T* r = xv + std::size_t(i) * d;
        T mu = T(0);
        for (int j = 0; j < d; ++j) mu += r[j];
        mu /= T(d);
        T var = T(0);
        for (int j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= T(d);
        T is = T(1) / std::sqrt(var + eps);
        mean[std::size_t(i)] = mu;
        inv_std[std::size_t(i)] = is;
        T* o = ov + std::size_t(i) * d;
        for (int j = 0; j < d; ++j) o[j] = gv[j] * (r[j] - mu) * is + bv[j];
    }
    if (tr)
        record([px = x.payload(), pg = gain.payload(), pb = bias.payload(), po = out.payload(), n, d,
                mean = std::move(mean), inv_std = std::move(inv_std)]() {
            const T* xv2 = px->value.data();
            const T* gv2 = pg->value.data();
            const T* go = po->grad.data();
            for (int i = 0; i < n; ++i) {
                const T* r = xv2 + std::size_t(i) * d;
                const T* gy = go + std::size_t(i) * d;
                T mu = mean[std::size_t(i)], is = inv_std[std::size_t(i)];
                if (pg->requires_grad || pb->requires_grad) {
                    for (int j = 0; j < d; ++j) {
                        if (pg->requires_grad) pg->grad[j] += gy[j] * (r[j] - mu) * is;
                        if (pb->requires_grad) pb->grad[j] += gy[j];
                    }
                }
                if (px->requires_grad) {
                    // dxhat = gy * gain; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                    T sum_dxh = T(0), sum_dxh_xh = T(0);
                    for (int j = 0; j < d; ++j) {
                        T xh = (r[j] - mu) * is;
                        T dxh = gy[j] * gv2[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                    T inv_d = T(1) / T(d);
                    T* g = px->grad.data() + std::size_t(i) * d;
                    for (int j = 0; j < d; ++j) {
                        T xh = (r[j] - mu) * is;
                        T dxh = gy[j] * gv2[j];
                        g[j] += is * (dxh - sum_dxh * inv_d - xh * sum_dxh_xh * inv_d);
                    }
                }
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruCellParams<T>& p) {
    int hidden = p.hidden;
    if (p.w_ih.dim(1) != 3 * hidden || p.w_hh.dim(1) != 3 * hidden || p.w_hh.dim(0) != hidden)
        fail(Errc::shape, "gru_cell: parameter shapes inconsistent with hidden size " +
                              std::to_string(hidden));
    // Gates packed (z, r, n). Candidate uses the reset gate on the
    // hidden-to-candidate term: n = tanh(gi_n + r * gh_n).
    Tensor<T> hr = to_row(h);
    Tensor<T> gi = to_row(linear(x, p.w_ih, p.b_ih));
    Tensor<T> gh = linear(hr, p.w_hh, p.b_hh);
    Tensor<T> z = sigmoid(add(slice_cols(gi, 0, hidden), slice_cols(gh, 0, hidden)));
    Tensor<T> r = sigmoid(add(slice_cols(gi, hidden, hidden), slice_cols(gh, hidden, hidden)));
    Tensor<T> n = tanh(add(slice_cols(gi, 2 * hidden, hidden),
                           mul(r, slice_cols(gh, 2 * hidden, hidden))));
    // h' = (1 - z) * n + z * h = n + z * (h - n)
    return add(n, mul(z, sub(hr, n)));
}

template <typename T>
Tensor<T> Tape<T>::self_attention(const Tensor<T>& x, const AttentionParams<T>& p, int heads,
                                  T dropout_rate, bool training, RngStream& rng) {
    check_rank2("self_attention", x);
    int d = x.dim(1);
    if (heads <= 0 || d % heads != 0)
        fail(Errc::shape, "self_attention: width " + std::to_string(d) +
                              " not divisible by heads " + std::to_string(heads));
    int dh = d / heads;
    Tensor<T> q = linear(x, p.wq, p.bq);
    Tensor<T> k = linear(x, p.wk, p.bk);
    Tensor<T> v = linear(x, p.wv, p.bv);
    std::vector<Tensor<T>> outs;
    outs.reserve(std::size_t(heads));
    T inv_sqrt = T(1) / std::sqrt(T(dh));
    for (int hh = 0; hh < heads; ++hh) {
        Tensor<T> qh = slice_cols(q, hh * dh, dh);
        Tensor<T> kh = slice_cols(k, hh * dh, dh);
        Tensor<T> vh = slice_cols(v, hh * dh, dh);
        Tensor<T> scores = scale(matmul_nt(qh, kh), inv_sqrt);
        Tensor<T> attn = softmax_rows(scores);
        attn = dropout(attn, dropout_rate, training, rng);
        outs.push_back(matmul(attn, vh));
    }
    return linear(concat_cols(outs), p.wo, p.bo);
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> Tape<T>::to_row(const Tensor<T>& x) {
    if (x.rank() == 2) return x;
    if (x.rank() != 1) fail(Errc::shape, "to_row: expected rank-1 tensor, got " + shape_str(x.shape()));
    int d = x.dim(0);
    bool tr = tracking({&x});
    Tensor<T> out = make_output({1, d}, tr);
    std::copy_n(x.value().data(), std::size_t(d), out.value().data());
    if (tr)
        record([px = x.payload(), po = out.payload(), d]() {
            for (int j = 0; j < d; ++j) px->grad[std::size_t(j)] += po->grad[std::size_t(j)];
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::slice_cols(const Tensor<T>& x, int from, int count) {
    check_rank2("slice_cols", x);
    int n = x.dim(0), d = x.dim(1);
    if (from < 0 || count < 0 || from + count > d)
        fail(Errc::shape, "slice_cols: range [" + std::to_string(from) + "," +
                              std::to_string(from + count) + ") out of width " + std::to_string(d));
    bool tr = tracking({&x});
    Tensor<T> out = make_output({n, count}, tr);
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < count; ++j)
            ov[std::size_t(i) * count + j] = xv[std::size_t(i) * d + from + j];
    if (tr)
        record([px = x.payload(), po = out.payload(), n, d, from, count]() {
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < count; ++j)
                    px->grad[std::size_t(i) * d + from + j] +=
                        po->grad[std::size_t(i) * count + j];
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::slice_rows(const Tensor<T>& x, int from, int count) {
    check_rank2("slice_rows", x);
    int n = x.dim(0), d = x.dim(1);
    if (from < 0 || count < 0 || from + count > n)
        fail(Errc::shape, "slice_rows: range [" + std::to_string(from) + "," +
                              std::to_string(from + count) + ") out of " + std::to_string(n) + " rows");
    bool tr = tracking({&x});
    Tensor<T> out = make_output({count, d}, tr);
    std::copy_n(x.value().data() + std::size_t(from) * d, std::size_t(count) * d, out.value().data());
    if (tr)
        record([px = x.payload(), po = out.payload(), d, from, count]() {
            for (std::size_t i = 0; i < std::size_t(count) * d; ++i)
                px->grad[std::size_t(from) * d + i] += po->grad[i];
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::concat_cols(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) fail(Errc::shape, "concat_cols: empty input");
    int n = xs[0].dim(0);
    int total = 0;
    for (const auto& t : xs) {
        check_rank2("concat_cols", t);
        if (t.dim(0) != n) fail(Errc::shape, "concat_cols: row count mismatch");
        total += t.dim(1);
    }
    bool any = false;
    for (const auto& t : xs) any = any || t.requires_grad();
    bool tr = grad_enabled_ && any;
    Tensor<T> out = make_output({n, total}, tr);
    T* ov = out.value().data();
    int off = 0;
    for (const auto& t : xs) {
        int d = t.dim(1);
        const T* tv = t.value().data();
        for (int i = 0; i < n; ++i)
            std::copy_n(tv + std::size_t(i) * d, d, ov + std::size_t(i) * total + off);
        off += d;
    }
    if (tr) {
        std::vector<std::shared_ptr<TensorPayload<T>>> payloads;
        payloads.reserve(xs.size());
        for (const auto& t : xs) payloads.push_back(t.payload());
        record([payloads = std::move(payloads), po = out.payload(), n, total]() {
            int off2 = 0;
            for (const auto& pp : payloads) {
                int d = pp->shape[1];
                if (pp->requires_grad)
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < d; ++j)
                            pp->grad[std::size_t(i) * d + j] +=
                                po->grad[std::size_t(i) * total + off2 + j];
                off2 += d;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> Tape<T>::stack_rows(const std::vector<Tensor<T>>& rows) {
    if (rows.empty()) fail(Errc::shape, "stack_rows: empty input");
    int d = 0;
    for (const auto& r : rows) {
        int w = (r.rank() == 1) ? r.dim(0) : (check_rank2("stack_rows", r), r.dim(1));
        if (r.rank() == 2 && r.dim(0) != 1) fail(Errc::shape, "stack_rows: rows must be [1,D] or [D]");
        if (d == 0)
            d = w;
        else if (w != d)
            fail(Errc::shape, "stack_rows: width mismatch");
    }
    int n = int(rows.size());
    bool any = false;
    for (const auto& r : rows) any = any || r.requires_grad();
    bool tr = grad_enabled_ && any;
    Tensor<T> out = make_output({n, d}, tr);
    for (int i = 0; i < n; ++i)
        std::copy_n(rows[std::size_t(i)].value().data(), d, out.value().data() + std::size_t(i) * d);
    if (tr) {
        std::vector<std::shared_ptr<TensorPayload<T>>> payloads;
        payloads.reserve(rows.size());
        for (const auto& r : rows) payloads.push_back(r.payload());
        record([payloads = std::move(payloads), po = out.payload(), d]() {
            for (std::size_t i = 0; i < payloads.size(); ++i)
                if (payloads[i]->requires_grad)
                    for (int j = 0; j < d; ++j)
                        payloads[i]->grad[std::size_t(j)] += po->grad[i * std::size_t(d) + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions / broadcasts

template <typename T>
Tensor<T> Tape<T>::row_sum(const Tensor<T>& x) {
    check_rank2("row_sum", x);
    int n = x.dim(0), d = x.dim(1);
    bool tr = tracking({&x});
    Tensor<T> out = make_output({n, 1}, tr);
    const T* xv = x.value().data();
    for (int i = 0; i < n; ++i) {
        T acc = T(0);
        for (int j = 0; j < d; ++j) acc += xv[std::size_t(i) * d + j];
        out.value()[std::size_t(i)] = acc;
    }
    if (tr)
        record([px = x.payload(), po = out.payload(), n, d]() {
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    px->grad[std::size_t(i) * d + j] += po->grad[std::size_t(i)];
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::broadcast_col(const Tensor<T>& x, int d) {
    check_rank2("broadcast_col", x);
    if (x.dim(1) != 1) fail(Errc::shape, "broadcast_col: expected [N,1], got " + shape_str(x.shape()));
    int n = x.dim(0);
    bool tr = tracking({&x});
    Tensor<T> out = make_output({n, d}, tr);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.value()[std::size_t(i) * d + j] = x.value()[std::size_t(i)];
    if (tr)
        record([px = x.payload(), po = out.payload(), n, d]() {
            for (int i = 0; i < n; ++i) {
                T acc = T(0);
                for (int j = 0; j < d; ++j) acc += po->grad[std::size_t(i) * d + j];
                px->grad[std::size_t(i)] += acc;
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::mean_rows(const Tensor<T>& x) {
    check_rank2("mean_rows", x);
    int n = x.dim(0), d = x.dim(1);
    if (n == 0) fail(Errc::shape, "mean_rows: empty input");
    bool tr = tracking({&x});
    Tensor<T> out = make_output({1, d}, tr);
    const T* xv = x.value().data();
    T inv = T(1) / T(n);
    for (int j = 0; j < d; ++j) {
        T acc = T(0);
        for (int i = 0; i < n; ++i) acc += xv[std::size_t(i) * d + j];
        out.value()[std::size_t(j)] = acc * inv;
    }
    if (tr)
        record([px = x.payload(), po = out.payload(), n, d, inv]() {
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    px->grad[std::size_t(i) * d + j] += po->grad[std::size_t(j)] * inv;
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::sum_all(const Tensor<T>& x) {
    bool tr = tracking({&x});
    Tensor<T> out = make_output({1}, tr);
    T acc = T(0);
    for (T v : x.value()) acc += v;
    out.value()[0] = acc;
    if (tr)
        record([px = x.payload(), po = out.payload()]() {
            T g = po->grad[0];
            for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += g;
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::mean_all(const Tensor<T>& x) {
    if (x.size() == 0) fail(Errc::shape, "mean_all: empty input");
    return scale(sum_all(x), T(1) / T(x.size()));
}

// ---------------------------------------------------------------------------
// Batched 3x3 geometry

template <typename T>
Tensor<T> Tape<T>::rotmat_mul3(const Tensor<T>& a, const Tensor<T>& b) {
    check_rank2("rotmat_mul3", a);
    check_rank2("rotmat_mul3", b);
    if (a.dim(1) != 9 || b.dim(1) != 9 || a.dim(0) != b.dim(0))
        fail(Errc::shape, "rotmat_mul3: expected matching [N,9] tensors, got " +
                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
    int n = a.dim(0);
    bool tr = tracking({&a, &b});
    Tensor<T> out = make_output({n, 9}, tr);
    const T* av = a.value().data();
    const T* bv = b.value().data();
    T* ov = out.value().data();
    for (int i = 0; i < n; ++i) {
        const T* A = av + std::size_t(i) * 9;
        const T* B = bv + std::size_t(i) * 9;
        T* C = ov + std::size_t(i) * 9;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                C[r * 3 + c] = A[r * 3] * B[c] + A[r * 3 + 1] * B[3 + c] + A[r * 3 + 2] * B[6 + c];
    }
    if (tr)
        record([pa = a.payload(), pb = b.payload(), po = out.payload(), n]() {
            for (int i = 0; i < n; ++i) {
                const T* A = pa->value.data() + std::size_t(i) * 9;
                const T* B = pb->value.data() + std::size_t(i) * 9;
                const T* G = po->grad.data() + std::size_t(i) * 9;
                if (pa->requires_grad) {
                    T* gA = pa->grad.data() + std::size_t(i) * 9;
                    for (int r = 0; r < 3; ++r)
                        for (int c = 0; c < 3; ++c) {
                            // dA[r,c] = sum_k G[r,k] * B[c,k]
                            gA[r * 3 + c] +=
                                G[r * 3] * B[c * 3] + G[r * 3 + 1] * B[c * 3 + 1] + G[r * 3 + 2] * B[c * 3 + 2];
                        }
                }
                if (pb->requires_grad) {
                    T* gB = pb->grad.data() + std::size_t(i) * 9;
                    for (int r = 0; r < 3; ++r)
                        for (int c = 0; c < 3; ++c) {
                            // dB[r,c] = sum_k A[k,r] * G[k,c]
                            gB[r * 3 + c] +=
                                A[r] * G[c] + A[3 + r] * G[3 + c] + A[6 + r] * G[6 + c];
                        }
                }
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::rotmat_apply3(const Tensor<T>& r, const Tensor<T>& v) {
    check_rank2("rotmat_apply3", r);
    check_rank2("rotmat_apply3", v);
    if (r.dim(1) != 9 || v.dim(1) != 3 || r.dim(0) != v.dim(0))
        fail(Errc::shape, "rotmat_apply3: expected [N,9] and [N,3], got " + shape_str(r.shape()) +
                              " and " + shape_str(v.shape()));
    int n = r.dim(0);
    bool tr = tracking({&r, &v});
    Tensor<T> out = make_output({n, 3}, tr);
    const T* rv = r.value().data();
    const T* vv = v.value().data();
    T* ov = out.value().data();
    for (int i = 0; i < n; ++i) {
        const T* R = rv + std::size_t(i) * 9;
        const T* x = vv + std::size_t(i) * 3;
        T* o = ov + std::size_t(i) * 3;
        for (int row = 0; row < 3; ++row)
            o[row] = R[row * 3] * x[0] + R[row * 3 + 1] * x[1] + R[row * 3 + 2] * x[2];
    }
    if (tr)
        record([pr = r.payload(), pv = v.payload(), po = out.payload(), n]() {
            for (int i = 0; i < n; ++i) {
                const T* R = pr->value.data() + std::size_t(i) * 9;
                const T* x = pv->value.data() + std::size_t(i) * 3;
                const T* g = po->grad.data() + std::size_t(i) * 3;
                if (pr->requires_grad) {
                    T* gR = pr->grad.data() + std::size_t(i) * 9;
                    for (int row = 0; row < 3; ++row)
                        for (int c = 0; c < 3; ++c) gR[row * 3 + c] += g[row] * x[c];
                }
                if (pv->requires_grad) {
                    T* gx = pv->grad.data() + std::size_t(i) * 3;
                    for (int c = 0; c < 3; ++c)
                        gx[c] += R[c] * g[0] + R[3 + c] * g[1] + R[6 + c] * g[2];
                }
            }
        });
    return out;
}

template <typename T>
Tensor<T> Tape<T>::six_to_rotmat(const Tensor<T>& x, T eps) {
    check_rank2("six_to_rotmat", x);
    if (x.dim(1) != 6)
        fail(Errc::shape, "six_to_rotmat: expected [N,6], got " + shape_str(x.shape()));
    Tensor<T> a = slice_cols(x, 0, 3);
    Tensor<T> b = slice_cols(x, 3, 3);
    Tensor<T> c0 = mul(a, broadcast_col(rsqrt_eps(row_sum(mul(a, a)), eps), 3));
    Tensor<T> proj = row_sum(mul(c0, b));
    Tensor<T> b_orth = sub(b, mul(c0, broadcast_col(proj, 3)));
    Tensor<T> c1 = mul(b_orth, broadcast_col(rsqrt_eps(row_sum(mul(b_orth, b_orth)), eps), 3));
    auto col = [&](const Tensor<T>& t, int i) { return slice_cols(t, i, 1); };
    Tensor<T> c2x = sub(mul(col(c0, 1), col(c1, 2)), mul(col(c0, 2), col(c1, 1)));
    Tensor<T> c2y = sub(mul(col(c0, 2), col(c1, 0)), mul(col(c0, 0), col(c1, 2)));
    Tensor<T> c2z = sub(mul(col(c0, 0), col(c1, 1)), mul(col(c0, 1), col(c1, 0)));
    // Row-major rotation matrix whose columns are (c0, c1, c2).
    return concat_cols({col(c0, 0), col(c1, 0), c2x, col(c0, 1), col(c1, 1), c2y, col(c0, 2),
                        col(c1, 2), c2z});
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> init_uniform_fanin(std::vector<int> shape, int fan_in, RngStream& rng) {
    if (fan_in <= 0) fail(Errc::config, "fan_in must be positive");
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    double bound = std::sqrt(1.0 / double(fan_in));
    for (auto& v : t.value()) v = T(rng.uniform(-bound, bound));
    return t;
}

// ---------------------------------------------------------------------------

template class Tensor<float>;
template class Tensor<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> init_uniform_fanin<float>(std::vector<int>, int, RngStream&);
template Tensor<double> init_uniform_fanin<double>(std::vector<int>, int, RngStream&);

}  // namespace zeggs::tc
