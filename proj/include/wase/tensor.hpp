#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

// Reverse-mode differentiable array engine. Tensors are shared handles to
// graph nodes; ops are free functions that record a backward closure when
// gradients are enabled. Gradients accumulate additively: backward() twice
// without zeroing doubles them.

namespace wase {

class Tensor;

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated on first use, same size as values
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents
};

}  // namespace detail

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // uniform in [lo, hi)
    static Tensor uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng,
                          bool requires_grad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<int>& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[i]; }
    int64_t size() const { return static_cast<int64_t>(n_->values.size()); }

    std::vector<double>& values() { return n_->values; }
    const std::vector<double>& values() const { return n_->values; }
    double item() const;  // value of a one-element tensor

    // Gradient buffer, zero-filled on first access. Tensor is a shared
    // handle, so the buffer stays mutable through const handles.
    std::vector<double>& grad() const;
    bool requires_grad() const { return n_->requires_grad; }
    void zero_grad();

    detail::Node* node() const { return n_.get(); }

  private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;

    friend Tensor make_node(std::vector<int> shape, std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn);
};

// Thread-local autograd switch; evaluation paths disable recording.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

// Populates gradients of every tensor reachable from loss. loss must be a
// one-element tensor; each graph node is visited exactly once in reverse
// topological order.
void backward(const Tensor& loss);

// ---- elementwise & reductions ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double a, double b);  // a*x + b
Tensor sum(const Tensor& x);                         // -> scalar
Tensor mean(const Tensor& x);                        // -> scalar
Tensor scale_by(const Tensor& x, const Tensor& s);   // s (scalar tensor) * x
Tensor div_scalars(const Tensor& a, const Tensor& b);
Tensor log_elem(const Tensor& x);  // natural log, input clamped to >= 1e-300
Tensor sigmoid(const Tensor& x);
Tensor prelu(const Tensor& x, const Tensor& slope);  // slope: scalar tensor

// ---- convolutions ----
// x: C_in x L_in, w: C_out x C_in x K -> C_out x L_out
Tensor conv1d(const Tensor& x, const Tensor& w, int stride, const Tensor& bias = {});
// x: C_in x L_in, w: C_in x C_out x K -> C_out x (L_in-1)*stride+K, bias-free
Tensor conv1d_transpose(const Tensor& x, const Tensor& w, int stride);
// x: C x L, w: C x K, symmetric zero padding preserves L
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, int dilation);
// x: C_in x L, w: C_out x C_in
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// ---- normalization ----
// mean/variance over all C*L entries, per-channel gain/shift (C and C)
Tensor global_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps);

// ---- sequence ops ----
// x: L x D, w: C x D, bias: C -> L x C
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});
// Single-direction LSTM layer. x: L x D, w_ih: 4H x D, w_hh: 4H x H,
// bias: 4H (gate order i, f, g, o). With reverse=true the sequence is
// processed back to front, outputs kept at original positions.
Tensor lstm_layer(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias,
                  bool reverse);
Tensor mean_pool_time(const Tensor& x);  // L x D -> D

// ---- shape & gating ----
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor transpose2d(const Tensor& x);
Tensor vstack(const Tensor& a, const Tensor& b);  // C1xL, C2xL -> (C1+C2)xL
Tensor hstack(const Tensor& a, const Tensor& b);  // LxD1, LxD2 -> Lx(D1+D2)
Tensor broadcast_cols(const Tensor& v, int l);    // Cx1 -> CxL
Tensor mul_channels(const Tensor& u, const Tensor& g);  // CxL * Cx1 (per channel)
Tensor mul_frames(const Tensor& u, const Tensor& o);    // CxL * 1xL (per frame)

// ---- losses ----
// mean over elements of -[t log p + (1-t) log(1-p)], p clamped to
// [1e-7, 1-1e-7]. target is treated as a constant.
Tensor binary_cross_entropy(const Tensor& pred, const Tensor& target);

// ---- optimizer ----
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void step();  // one bias-corrected update; increments the step counter
    void zero_grad();

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t step_count() const { return t_; }

    // frozen parameters are skipped entirely (values and moments untouched)
    void set_frozen(std::vector<bool> frozen);

    size_t num_params() const { return params_.size(); }
    std::vector<double>& moment1(size_t i) { return m_[i]; }
    std::vector<double>& moment2(size_t i) { return v_[i]; }
    void set_step_count(int64_t t) { t_ = t; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    std::vector<bool> frozen_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace wase
