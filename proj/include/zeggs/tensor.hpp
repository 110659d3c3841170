#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "zeggs/errors.hpp"
#include "zeggs/rng.hpp"

// Minimal dense-tensor library with reverse-mode automatic differentiation.
// Scalar type is a template parameter: float for training, double for the
// verification oracles and gradient checks.
//
// Usage pattern: build a Tape, run ops through it, call tape.backward(loss).
// Tensors are handles onto shared payloads; a tensor's values must not be
// mutated after it has been consumed by an op on an active tape (leaves such
// as parameters are updated between tapes by the optimizer).
namespace zeggs::tc {

template <typename T>
struct TensorPayload {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;  // same length as value iff requires_grad
    bool requires_grad = false;
};

std::string shape_str(const std::vector<int>& s);
std::int64_t shape_size(const std::vector<int>& s);

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, T v);
    static Tensor from(std::vector<int> shape, std::vector<T> data);
    static Tensor scalar(T v) { return from({1}, {v}); }

    bool defined() const { return p_ != nullptr; }
    const std::vector<int>& shape() const { return p_->shape; }
    int rank() const { return int(p_->shape.size()); }
    int dim(int i) const { return p_->shape[std::size_t(i)]; }
    std::int64_t size() const { return std::int64_t(p_->value.size()); }

    // Handle semantics: constness of the handle is shallow (as with
    // shared_ptr), so payload access is uniform.
    std::vector<T>& value() const { return p_->value; }
    std::vector<T>& grad() const;

    bool requires_grad() const { return p_->requires_grad; }
    // Marks the tensor as a gradient sink and allocates its (zeroed) grad.
    void set_requires_grad(bool b);
    void zero_grad();

    // Value of a one-element tensor.
    T item() const;

    std::shared_ptr<TensorPayload<T>> payload() const { return p_; }

private:
    std::shared_ptr<TensorPayload<T>> p_;
};

// A named tensor. Names are unique within a ParameterSet.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
class ParameterSet {
public:
    // Registers a tensor under a unique name and enables its gradient.
    Tensor<T> add(const std::string& name, Tensor<T> t);
    const std::vector<Parameter<T>>& items() const { return params_; }
    Tensor<T> find(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    std::size_t count() const { return params_.size(); }
    std::int64_t total_size() const;
    void zero_grad();

private:
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class PadMode { zero, replicate };

template <typename T>
struct GruCellParams {
    Tensor<T> w_ih;  // [Din, 3H], gate order (z, r, n)
    Tensor<T> w_hh;  // [H, 3H]
    Tensor<T> b_ih;  // [3H]
    Tensor<T> b_hh;  // [3H]
    int hidden = 0;
};

template <typename T>
struct AttentionParams {
    Tensor<T> wq, wk, wv, wo;  // each [D, D]
    Tensor<T> bq, bk, bv, bo;  // each [D]
};

// Records one backward closure per differentiable operation, in execution
// order. backward() runs them exactly once, in reverse; gradients accumulate
// additively, so a tensor feeding several ops receives the sum of all paths.
template <typename T>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    bool grad_enabled() const { return grad_enabled_; }
    std::size_t node_count() const { return nodes_.size(); }

    void backward(const Tensor<T>& loss);

    // ---- elementwise ----
    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
    Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
    Tensor<T> scale(const Tensor<T>& a, T c);
    Tensor<T> add_scalar(const Tensor<T>& a, T c);
    Tensor<T> abs(const Tensor<T>& a);
    Tensor<T> exp(const Tensor<T>& a);
    Tensor<T> sqrt_eps(const Tensor<T>& a, T eps);
    Tensor<T> rsqrt_eps(const Tensor<T>& a, T eps);
    Tensor<T> sin(const Tensor<T>& a);
    Tensor<T> cos(const Tensor<T>& a);
    Tensor<T> atan2(const Tensor<T>& y, const Tensor<T>& x);
    Tensor<T> tanh(const Tensor<T>& a);
    Tensor<T> sigmoid(const Tensor<T>& a);
    Tensor<T> relu(const Tensor<T>& a);
    Tensor<T> elu(const Tensor<T>& a);
    // Identity when !training; otherwise zeroes with probability `rate` and
    // rescales survivors by 1/(1-rate). Consumes rng only when training.
    Tensor<T> dropout(const Tensor<T>& a, T rate, bool training, RngStream& rng);

    // ---- linear algebra ----
    Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);     // [M,K]x[K,N]
    Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);  // [M,K]x[N,K]^T
    Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
    Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias,
                     PadMode pad = PadMode::zero);

    // ---- normalization / attention / recurrence ----
    Tensor<T> softmax_rows(const Tensor<T>& x);
    Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                         T eps = T(1e-5));
    Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruCellParams<T>& p);
    Tensor<T> self_attention(const Tensor<T>& x, const AttentionParams<T>& p, int heads,
                             T dropout_rate, bool training, RngStream& rng);

    // ---- shape ----
    Tensor<T> to_row(const Tensor<T>& x);  // [D] -> [1,D]; rank-2 passes through
    Tensor<T> slice_cols(const Tensor<T>& x, int from, int count);
    Tensor<T> slice_rows(const Tensor<T>& x, int from, int count);
    Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs);
    Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows);

    // ---- reductions / broadcasts ----
    Tensor<T> row_sum(const Tensor<T>& x);                 // [N,D] -> [N,1]
    Tensor<T> broadcast_col(const Tensor<T>& x, int d);    // [N,1] -> [N,d]
    Tensor<T> mean_rows(const Tensor<T>& x);               // [N,D] -> [1,D]
    Tensor<T> sum_all(const Tensor<T>& x);                 // -> [1]
    Tensor<T> mean_all(const Tensor<T>& x);                // -> [1]
    Tensor<T> mae(const Tensor<T>& a, const Tensor<T>& b) { return mean_all(abs(sub(a, b))); }

    // ---- batched 3x3 geometry (row-major 3x3 per row) ----
    Tensor<T> rotmat_mul3(const Tensor<T>& a, const Tensor<T>& b);    // [N,9]x[N,9]
    Tensor<T> rotmat_apply3(const Tensor<T>& r, const Tensor<T>& v);  // [N,9]x[N,3]
    // Two orthogonalized columns -> full rotation matrix (Gram-Schmidt +
    // cross product), composed from primitives so it is fully differentiable.
    Tensor<T> six_to_rotmat(const Tensor<T>& x, T eps = T(1e-12));

private:
    bool grad_enabled_;
    std::vector<std::function<void()>> nodes_;

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    bool tracking(std::initializer_list<const Tensor<T>*> inputs) const;
    Tensor<T> make_output(std::vector<int> shape, bool needs_grad);
};

// Uniform init in +/- sqrt(1/fan_in).
template <typename T>
Tensor<T> init_uniform_fanin(std::vector<int> shape, int fan_in, RngStream& rng);

}  // namespace zeggs::tc
