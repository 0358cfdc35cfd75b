#include "wase/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "wase/kernels.hpp"

namespace wase {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// y += x
void axpy(std::vector<double>& y, const double* x) {
    for (size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor make_node(std::vector<int> shape, std::vector<Tensor> parents,
                 std::function<void(detail::Node&)> backward_fn) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values.resize(static_cast<size_t>(numel(n->shape)));
    bool rg = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) rg = rg || p.requires_grad();
    }
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto t = make_node(std::move(shape), {}, nullptr);
    t.n_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.n_->values.begin(), t.n_->values.end(), value);
    return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
    require(numel(shape) == static_cast<int64_t>(values.size()),
            "from_values: shape " + shape_str(shape) + " does not match " +
                std::to_string(values.size()) + " values");
    auto t = zeros(std::move(shape), requires_grad);
    t.n_->values = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.n_->values) v = dist(rng);
    return t;
}

double Tensor::item() const {
    require(n_->values.size() == 1,
            "item: tensor " + shape_str(n_->shape) + " is not a scalar");
    return n_->values[0];
}

std::vector<double>& Tensor::grad() const {
    if (n_->grad.empty()) n_->grad.assign(n_->values.size(), 0.0);
    return n_->grad;
}

void Tensor::zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

void backward(const Tensor& loss) {
    require(loss.defined() && loss.size() == 1,
            "backward: loss must be a one-element tensor, got " +
                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.node()->requires_grad) return;

    // iterative post-order DFS; reversed finish order is a valid topo order
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        detail::Node* n;
        size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node(), 0});
    visited.insert(loss.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.n->parents.size()) {
            detail::Node* child = f.n->parents[f.next_child].node();
            ++f.next_child;
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    // Interior gradients are scratch space for this pass; only leaves
    // accumulate across calls (calling backward twice doubles leaf grads).
    for (detail::Node* n : order) {
        if (!n->parents.empty()) n->grad.assign(n->values.size(), 0.0);
    }
    if (loss.node()->grad.empty()) loss.node()->grad.assign(1, 0.0);
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise & reductions

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor y = make_node(a.shape(), {a, b}, [a, b](detail::Node& self) mutable {
        if (a.requires_grad()) axpy(a.grad(), self.grad.data());
        if (b.requires_grad()) axpy(b.grad(), self.grad.data());
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& yv = y.values();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
    return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor y = make_node(a.shape(), {a, b}, [a, b](detail::Node& self) mutable {
        if (a.requires_grad()) axpy(a.grad(), self.grad.data());
        if (b.requires_grad()) {
            auto& g = b.grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& yv = y.values();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] - bv[i];
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor y = make_node(a.shape(), {a, b}, [a, b](detail::Node& self) mutable {
        if (a.requires_grad()) {
            auto& g = a.grad();
            const auto& bv = b.values();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (b.requires_grad()) {
            auto& g = b.grad();
            const auto& av = a.values();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& yv = y.values();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i];
    return y;
}

Tensor affine(const Tensor& x, double a, double b) {
    Tensor y = make_node(x.shape(), {x}, [x, a](detail::Node& self) mutable {
        if (x.requires_grad()) {
            auto& g = x.grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += a * self.grad[i];
        }
    });
    const auto& xv = x.values();
    auto& yv = y.values();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = a * xv[i] + b;
    return y;
}

Tensor sum(const Tensor& x) {
    Tensor y = make_node({1}, {x}, [x](detail::Node& self) mutable {
        if (x.requires_grad()) {
            auto& g = x.grad();
            const double gs = self.grad[0];
            for (auto& v : g) v += gs;
        }
    });
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    y.values()[0] = acc;
    return y;
}

Tensor mean(const Tensor& x) {
    return affine(sum(x), 1.0 / static_cast<double>(x.size()), 0.0);
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    require(s.size() == 1, "scale_by: scale must be scalar, got " + shape_str(s.shape()));
    Tensor y = make_node(x.shape(), {x, s}, [x, s](detail::Node& self) mutable {
        if (x.requires_grad()) {
            auto& g = x.grad();
            const double sv = s.values()[0];
            for (size_t i = 0; i < g.size(); ++i) g[i] += sv * self.grad[i];
        }
        if (s.requires_grad()) {
            const auto& xv = x.values();
            double acc = 0.0;
            for (size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
            s.grad()[0] += acc;
        }
    });
    const double sv = s.values()[0];
    const auto& xv = x.values();
    auto& yv = y.values();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = sv * xv[i];
    return y;
}

Tensor div_scalars(const Tensor& a, const Tensor& b) {
    require(a.size() == 1 && b.size() == 1, "div_scalars: both operands must be scalars");
    Tensor y = make_node({1}, {a, b}, [a, b](detail::Node& self) mutable {
        const double av = a.values()[0];
        const double bv = b.values()[0];
        if (a.requires_grad()) a.grad()[0] += self.grad[0] / bv;
        if (b.requires_grad()) b.grad()[0] -= self.grad[0] * av / (bv * bv);
    });
    y.values()[0] = a.values()[0] / b.values()[0];
    return y;
}

namespace {
constexpr double kTiny = 1e-300;  // log input clamp
}

Tensor log_elem(const Tensor& x) {
    Tensor y = make_node(x.shape(), {x}, [x](detail::Node& self) mutable {
        if (x.requires_grad()) {
            auto& g = x.grad();
            const auto& xv = x.values();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / std::max(xv[i], kTiny);
        }
    });
    const auto& xv = x.values();
    auto& yv = y.values();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = std::log(std::max(xv[i], kTiny));
    return y;
}

namespace {
inline double sigmoid_stable(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
    Tensor y = make_node(x.shape(), {x}, [x](detail::Node& self) mutable {
        if (x.requires_grad()) {
            auto& g = x.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                const double s = self.values[i];
                g[i] += self.grad[i] * s * (1.0 - s);
            }
        }
    });
    const auto& xv = x.values();
    auto& yv = y.values();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = sigmoid_stable(xv[i]);
    return y;
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
    require(slope.size() == 1, "prelu: slope must be scalar, got " + shape_str(slope.shape()));
    Tensor y = make_node(x.shape(), {x, slope}, [x, slope](detail::Node& self) mutable {
        const auto& xv = x.values();
        const double sv = slope.values()[0];
        if (x.requires_grad()) {
            auto& g = x.grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (xv[i] >= 0.0 ? 1.0 : sv);
        }
        if (slope.requires_grad()) {
            double acc = 0.0;
            for (size_t i = 0; i < xv.size(); ++i) {
                if (xv[i] < 0.0) acc += self.grad[i] * xv[i];
            }
            slope.grad()[0] += acc;
        }
    });
    const auto& xv = x.values();
    const double sv = slope.values()[0];
    auto& yv = y.values();
    for (size_t i = 0; i < yv.size(); ++i) yv[i] = xv[i] >= 0.0 ? xv[i] : sv * xv[i];
    return y;
}

// ---------------------------------------------------------------------------
// convolutions

Tensor conv1d(const Tensor& x, const Tensor& w, int stride, const Tensor& bias) {
    require(x.shape().size() == 2, "conv1d: input must be C_in x L_in, got " + shape_str(x.shape()));
    require(w.shape().size() == 3,
            "conv1d: kernel must be C_out x C_in x K, got " + shape_str(w.shape()));
    require(stride >= 1, "conv1d: stride must be >= 1");
    const int c_in = x.dim(0), l_in = x.dim(1);
    const int c_out = w.dim(0), k = w.dim(2);
    require(w.dim(1) == c_in, "conv1d: kernel " + shape_str(w.shape()) + " does not match input " +
                                  shape_str(x.shape()));
    require(l_in >= k, "conv1d: input length " + std::to_string(l_in) + " shorter than kernel " +
                           std::to_string(k));
    if (bias.defined()) {
        require(bias.shape() == std::vector<int>{c_out},
                "conv1d: bias " + shape_str(bias.shape()) + " must be [" + std::to_string(c_out) + "]");
    }
    const int l_out = (l_in - k) / stride + 1;

    std::vector<Tensor> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    Tensor y = make_node({c_out, l_out}, std::move(parents),
                         [x, w, bias, stride, c_in, l_in, c_out, k, l_out](detail::Node& self) mutable {
                             const double* gy = self.grad.data();
                             if (x.requires_grad()) {
                                 std::vector<double> tmp(static_cast<size_t>(c_in) * l_in);
                                 kernels::tconv1d_fwd(gy, c_out, l_out, w.values().data(), c_in, k,
                                                      stride, tmp.data(), l_in);
                                 axpy(x.grad(), tmp.data());
                             }
                             if (w.requires_grad()) {
                                 std::vector<double> tmp(w.values().size());
                                 kernels::convlike_dw(gy, c_out, l_out, x.values().data(), c_in, l_in,
                                                      k, stride, tmp.data());
                                 axpy(w.grad(), tmp.data());
                             }
                             if (bias.defined() && bias.requires_grad()) {
                                 std::vector<double> tmp(static_cast<size_t>(c_out));
                                 kernels::rowsum(gy, c_out, l_out, tmp.data());
                                 axpy(bias.grad(), tmp.data());
                             }
                         });
    kernels::conv1d_fwd(x.values().data(), c_in, l_in, w.values().data(), c_out, k, stride,
                        bias.defined() ? bias.values().data() : nullptr, y.values().data(), l_out);
    return y;
}

Tensor conv1d_transpose(const Tensor& x, const Tensor& w, int stride) {
    require(x.shape().size() == 2,
            "conv1d_transpose: input must be C_in x L_in, got " + shape_str(x.shape()));
    require(w.shape().size() == 3,
            "conv1d_transpose: kernel must be C_in x C_out x K, got " + shape_str(w.shape()));
    require(stride >= 1, "conv1d_transpose: stride must be >= 1");
    const int c_in = x.dim(0), l_in = x.dim(1);
    const int c_out = w.dim(1), k = w.dim(2);
    require(w.dim(0) == c_in, "conv1d_transpose: kernel " + shape_str(w.shape()) +
                                  " does not match input " + shape_str(x.shape()));
    const int l_out = (l_in - 1) * stride + k;

    Tensor y = make_node({c_out, l_out}, {x, w},
                         [x, w, stride, c_in, l_in, c_out, k, l_out](detail::Node& self) mutable {
                             const double* gy = self.grad.data();
                             if (x.requires_grad()) {
                                 std::vector<double> tmp(static_cast<size_t>(c_in) * l_in);
                                 kernels::conv1d_fwd(gy, c_out, l_out, w.values().data(), c_in, k,
                                                     stride, nullptr, tmp.data(), l_in);
                                 axpy(x.grad(), tmp.data());
                             }
                             if (w.requires_grad()) {
                                 std::vector<double> tmp(w.values().size());
                                 kernels::convlike_dw(x.values().data(), c_in, l_in, gy, c_out, l_out,
                                                      k, stride, tmp.data());
                                 axpy(w.grad(), tmp.data());
                             }
                         });
    kernels::tconv1d_fwd(x.values().data(), c_in, l_in, w.values().data(), c_out, k, stride,
                         y.values().data(), l_out);
    return y;
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, int dilation) {
    require(x.shape().size() == 2,
            "depthwise_conv1d: input must be C x L, got " + shape_str(x.shape()));
    require(w.shape().size() == 2, "depthwise_conv1d: kernel must be C x K, got " + shape_str(w.shape()));
    require(dilation >= 1, "depthwise_conv1d: dilation must be >= 1");
    const int c = x.dim(0), l = x.dim(1), k = w.dim(1);
    require(w.dim(0) == c, "depthwise_conv1d: kernel " + shape_str(w.shape()) +
                               " does not match input " + shape_str(x.shape()));

    Tensor y = make_node({c, l}, {x, w}, [x, w, dilation, c, l, k](detail::Node& self) mutable {
        const double* gy = self.grad.data();
        if (x.requires_grad()) {
            std::vector<double> tmp(static_cast<size_t>(c) * l);
            kernels::dwconv_dx(gy, c, l, w.values().data(), k, dilation, tmp.data());
            axpy(x.grad(), tmp.data());
        }
        if (w.requires_grad()) {
            std::vector<double> tmp(w.values().size());
            kernels::dwconv_dw(gy, x.values().data(), c, l, k, dilation, tmp.data());
            axpy(w.grad(), tmp.data());
        }
    });
    kernels::dwconv_fwd(x.values().data(), c, l, w.values().data(), k, dilation, y.values().data());
    return y;
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(x.shape().size() == 2,
            "pointwise_conv: input must be C_in x L, got " + shape_str(x.shape()));
    require(w.shape().size() == 2,
            "pointwise_conv: weight must be C_out x C_in, got " + shape_str(w.shape()));
    const int c_in = x.dim(0), l = x.dim(1), c_out = w.dim(0);
    require(w.dim(1) == c_in, "pointwise_conv: weight " + shape_str(w.shape()) +
                                  " does not match input " + shape_str(x.shape()));
    if (bias.defined()) {
        require(bias.shape() == std::vector<int>{c_out},
                "pointwise_conv: bias " + shape_str(bias.shape()) + " must be [" +
                    std::to_string(c_out) + "]");
    }

    std::vector<Tensor> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    Tensor y = make_node({c_out, l}, std::move(parents),
                         [x, w, bias, c_in, l, c_out](detail::Node& self) mutable {
                             const double* gy = self.grad.data();
                             if (x.requires_grad()) {
                                 std::vector<double> tmp(static_cast<size_t>(c_in) * l);
                                 kernels::matmul_tn(w.values().data(), c_out, c_in, gy, l, tmp.data());
                                 axpy(x.grad(), tmp.data());
                             }
                             if (w.requires_grad()) {
                                 std::vector<double> tmp(w.values().size());
                                 kernels::matmul_nt(gy, c_out, l, x.values().data(), c_in, tmp.data());
                                 axpy(w.grad(), tmp.data());
                             }
                             if (bias.defined() && bias.requires_grad()) {
                                 std::vector<double> tmp(static_cast<size_t>(c_out));
                                 kernels::rowsum(gy, c_out, l, tmp.data());
                                 axpy(bias.grad(), tmp.data());
                             }
                         });
    kernels::matmul_nn(w.values().data(), c_out, c_in, x.values().data(), l, y.values().data());
    if (bias.defined()) {
        auto& yv = y.values();
        const auto& bv = bias.values();
        for (int co = 0; co < c_out; ++co) {
            for (int t = 0; t < l; ++t) yv[static_cast<size_t>(co) * l + t] += bv[co];
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// normalization

Tensor global_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    require(x.shape().size() == 2, "global_layer_norm: input must be C x L, got " + shape_str(x.shape()));
    const int c = x.dim(0), l = x.dim(1);
    require(gain.shape() == std::vector<int>{c} && shift.shape() == std::vector<int>{c},
            "global_layer_norm: gain/shift must be [" + std::to_string(c) + "], got " +
                shape_str(gain.shape()) + " and " + shape_str(shift.shape()));
    require(eps > 0.0, "global_layer_norm: eps must be positive");

    const auto& xv = x.values();
    const size_t n = xv.size();
    double mu = 0.0;
    for (double v : xv) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xv) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double inv_sigma = 1.0 / std::sqrt(var + eps);

    // cache normalized input for the backward pass
    auto xhat = std::make_shared<std::vector<double>>(n);
    for (size_t i = 0; i < n; ++i) (*xhat)[i] = (xv[i] - mu) * inv_sigma;

    Tensor y = make_node({c, l}, {x, gain, shift},
                         [x, gain, shift, xhat, inv_sigma, c, l](detail::Node& self) mutable {
                             const double* gy = self.grad.data();
                             const auto& gv = gain.values();
                             const size_t n = xhat->size();
                             if (x.requires_grad()) {
                                 double s1 = 0.0, s2 = 0.0;  // sums of g*dy and g*dy*xhat
                                 for (int ch = 0; ch < c; ++ch) {
                                     for (int t = 0; t < l; ++t) {
                                         const size_t i = static_cast<size_t>(ch) * l + t;
                                         const double gdy = gv[ch] * gy[i];
                                         s1 += gdy;
                                         s2 += gdy * (*xhat)[i];
                                     }
                                 }
                                 const double inv_n = 1.0 / static_cast<double>(n);
                                 auto& g = x.grad();
                                 for (int ch = 0; ch < c; ++ch) {
                                     for (int t = 0; t < l; ++t) {
                                         const size_t i = static_cast<size_t>(ch) * l + t;
                                         g[i] += inv_sigma * (gv[ch] * gy[i] - inv_n * s1 -
                                                              (*xhat)[i] * inv_n * s2);
                                     }
                                 }
                             }
                             if (gain.requires_grad()) {
                                 auto& g = gain.grad();
                                 for (int ch = 0; ch < c; ++ch) {
                                     double acc = 0.0;
                                     for (int t = 0; t < l; ++t) {
                                         const size_t i = static_cast<size_t>(ch) * l + t;
                                         acc += gy[i] * (*xhat)[i];
                                     }
                                     g[ch] += acc;
                                 }
                             }
                             if (shift.requires_grad()) {
                                 auto& g = shift.grad();
                                 for (int ch = 0; ch < c; ++ch) {
                                     double acc = 0.0;
                                     for (int t = 0; t < l; ++t) acc += gy[static_cast<size_t>(ch) * l + t];
                                     g[ch] += acc;
                                 }
                             }
                         });
    auto& yv = y.values();
    const auto& gv = gain.values();
    const auto& sv = shift.values();
    for (int ch = 0; ch < c; ++ch) {
        for (int t = 0; t < l; ++t) {
            const size_t i = static_cast<size_t>(ch) * l + t;
            yv[i] = gv[ch] * (*xhat)[i] + sv[ch];
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// sequence ops

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(x.shape().size() == 2, "linear: input must be L x D, got " + shape_str(x.shape()));
    require(w.shape().size() == 2, "linear: weight must be C x D, got " + shape_str(w.shape()));
    const int l = x.dim(0), d = x.dim(1), c = w.dim(0);
    require(w.dim(1) == d,
            "linear: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
    if (bias.defined()) {
        require(bias.shape() == std::vector<int>{c},
                "linear: bias " + shape_str(bias.shape()) + " must be [" + std::to_string(c) + "]");
    }

    std::vector<Tensor> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    Tensor y = make_node({l, c}, std::move(parents), [x, w, bias, l, d, c](detail::Node& self) mutable {
        const double* gy = self.grad.data();
        if (x.requires_grad()) {
            std::vector<double> tmp(static_cast<size_t>(l) * d);
            kernels::matmul_nn(gy, l, c, w.values().data(), d, tmp.data());
            axpy(x.grad(), tmp.data());
        }
        if (w.requires_grad()) {
            std::vector<double> tmp(w.values().size());
            kernels::matmul_tn(gy, l, c, x.values().data(), d, tmp.data());
            axpy(w.grad(), tmp.data());
        }
        if (bias.defined() && bias.requires_grad()) {
            auto& g = bias.grad();
            for (int j = 0; j < c; ++j) {
                double acc = 0.0;
                for (int t = 0; t < l; ++t) acc += gy[static_cast<size_t>(t) * c + j];
                g[j] += acc;
            }
        }
    });
    kernels::matmul_nt(x.values().data(), l, d, w.values().data(), c, y.values().data());
    if (bias.defined()) {
        auto& yv = y.values();
        const auto& bv = bias.values();
        for (int t = 0; t < l; ++t) {
            for (int j = 0; j < c; ++j) yv[static_cast<size_t>(t) * c + j] += bv[j];
        }
    }
    return y;
}

namespace {

struct LstmCache {
    // all L x H unless noted; gates are L x 4H post-activation (i,f,g,o)
    std::vector<double> gates, c, hc, h_prev;
};

}  // namespace

Tensor lstm_layer(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias,
                  bool reverse) {
    require(x.shape().size() == 2, "lstm_layer: input must be L x D, got " + shape_str(x.shape()));
    const int l = x.dim(0), d = x.dim(1);
    require(w_ih.shape().size() == 2 && w_ih.dim(0) % 4 == 0 && w_ih.dim(1) == d,
            "lstm_layer: w_ih " + shape_str(w_ih.shape()) + " must be 4H x D for input " +
                shape_str(x.shape()));
    const int h = w_ih.dim(0) / 4;
    require(w_hh.shape() == (std::vector<int>{4 * h, h}),
            "lstm_layer: w_hh " + shape_str(w_hh.shape()) + " must be [" + std::to_string(4 * h) +
                "x" + std::to_string(h) + "]");
    require(bias.shape() == std::vector<int>{4 * h},
            "lstm_layer: bias " + shape_str(bias.shape()) + " must be [" + std::to_string(4 * h) + "]");
    require(l >= 1, "lstm_layer: empty sequence");

    auto cache = std::make_shared<LstmCache>();
    cache->gates.resize(static_cast<size_t>(l) * 4 * h);
    cache->c.resize(static_cast<size_t>(l) * h);
    cache->hc.resize(static_cast<size_t>(l) * h);
    cache->h_prev.resize(static_cast<size_t>(l) * h);

    Tensor y = make_node({l, h}, {x, w_ih, w_hh, bias},
                         [x, w_ih, w_hh, bias, cache, reverse, l, d, h](detail::Node& self) mutable {
        const double* gy = self.grad.data();
        const auto& whh = w_hh.values();
        std::vector<double> dz(static_cast<size_t>(l) * 4 * h, 0.0);  // per-step pre-activation grads
        std::vector<double> dh(h, 0.0), dc(h, 0.0);

        // walk steps in reverse of the forward order
        for (int step = l - 1; step >= 0; --step) {
            const int t = reverse ? l - 1 - step : step;
            const double* gates = cache->gates.data() + static_cast<size_t>(t) * 4 * h;
            const double* hct = cache->hc.data() + static_cast<size_t>(t) * h;
            const int t_prev_step = step - 1;
            const double* c_prev = nullptr;
            if (t_prev_step >= 0) {
                const int tp = reverse ? l - 1 - t_prev_step : t_prev_step;
                c_prev = cache->c.data() + static_cast<size_t>(tp) * h;
            }
            double* dzt = dz.data() + static_cast<size_t>(t) * 4 * h;
            for (int j = 0; j < h; ++j) {
                const double gi = gates[j];
                const double gf = gates[h + j];
                const double gg = gates[2 * h + j];
                const double go = gates[3 * h + j];
                const double dht = gy[static_cast<size_t>(t) * h + j] + dh[j];
                const double dot = dht * hct[j];
                const double dct = dht * go * (1.0 - hct[j] * hct[j]) + dc[j];
                const double cp = c_prev ? c_prev[j] : 0.0;
                dzt[j] = dct * gg * gi * (1.0 - gi);                  // i gate
                dzt[h + j] = dct * cp * gf * (1.0 - gf);              // f gate
                dzt[2 * h + j] = dct * gi * (1.0 - gg * gg);          // g gate
                dzt[3 * h + j] = dot * go * (1.0 - go);               // o gate
                dc[j] = dct * gf;
            }
            // dh for the previous step: w_hh^T * dz_t
            for (int j = 0; j < h; ++j) dh[j] = 0.0;
            for (int r = 0; r < 4 * h; ++r) {
                const double z = dzt[r];
                if (z == 0.0) continue;
                const double* wr = whh.data() + static_cast<size_t>(r) * h;
                for (int j = 0; j < h; ++j) dh[j] += z * wr[j];
            }
        }

        if (x.requires_grad()) {
            std::vector<double> tmp(static_cast<size_t>(l) * d);
            kernels::matmul_nn(dz.data(), l, 4 * h, w_ih.values().data(), d, tmp.data());
            axpy(x.grad(), tmp.data());
        }
        if (w_ih.requires_grad()) {
            std::vector<double> tmp(w_ih.values().size());
            kernels::matmul_tn(dz.data(), l, 4 * h, x.values().data(), d, tmp.data());
            axpy(w_ih.grad(), tmp.data());
        }
        if (w_hh.requires_grad()) {
            std::vector<double> tmp(w_hh.values().size());
            kernels::matmul_tn(dz.data(), l, 4 * h, cache->h_prev.data(), h, tmp.data());
            axpy(w_hh.grad(), tmp.data());
        }
        if (bias.requires_grad()) {
            auto& g = bias.grad();
            for (int r = 0; r < 4 * h; ++r) {
                double acc = 0.0;
                for (int t = 0; t < l; ++t) acc += dz[static_cast<size_t>(t) * 4 * h + r];
                g[r] += acc;
            }
        }
    });

    // forward: z = w_ih*x_t + w_hh*h_prev + b, batched input-side matmul
    std::vector<double> zin(static_cast<size_t>(l) * 4 * h);
    kernels::matmul_nt(x.values().data(), l, d, w_ih.values().data(), 4 * h, zin.data());

    const auto& whh = w_hh.values();
    const auto& bv = bias.values();
    auto& yv = y.values();
    std::vector<double> hprev(h, 0.0), cprev(h, 0.0);
    for (int step = 0; step < l; ++step) {
        const int t = reverse ? l - 1 - step : step;
        double* gates = cache->gates.data() + static_cast<size_t>(t) * 4 * h;
        double* ct = cache->c.data() + static_cast<size_t>(t) * h;
        double* hct = cache->hc.data() + static_cast<size_t>(t) * h;
        double* hp = cache->h_prev.data() + static_cast<size_t>(t) * h;
        const double* zt = zin.data() + static_cast<size_t>(t) * 4 * h;

        std::copy(hprev.begin(), hprev.end(), hp);
        for (int r = 0; r < 4 * h; ++r) {
            double z = zt[r] + bv[r];
            const double* wr = whh.data() + static_cast<size_t>(r) * h;
            for (int j = 0; j < h; ++j) z += wr[j] * hprev[j];
            gates[r] = z;  // pre-activation for now
        }
        for (int j = 0; j < h; ++j) {
            const double gi = sigmoid_stable(gates[j]);
            const double gf = sigmoid_stable(gates[h + j]);
            const double gg = std::tanh(gates[2 * h + j]);
            const double go = sigmoid_stable(gates[3 * h + j]);
            gates[j] = gi;
            gates[h + j] = gf;
            gates[2 * h + j] = gg;
            gates[3 * h + j] = go;
            const double c = gf * cprev[j] + gi * gg;
            ct[j] = c;
            hct[j] = std::tanh(c);
            const double hv = go * hct[j];
            yv[static_cast<size_t>(t) * h + j] = hv;
            hprev[j] = hv;
            cprev[j] = c;
        }
    }
    return y;
}

Tensor mean_pool_time(const Tensor& x) {
    require(x.shape().size() == 2, "mean_pool_time: input must be L x D, got " + shape_str(x.shape()));
    const int l = x.dim(0), d = x.dim(1);
    Tensor y = make_node({d}, {x}, [x, l, d](detail::Node& self) mutable {
        if (x.requires_grad()) {
            auto& g = x.grad();
            const double inv_l = 1.0 / static_cast<double>(l);
            for (int t = 0; t < l; ++t) {
                for (int j = 0; j < d; ++j) g[static_cast<size_t>(t) * d + j] += self.grad[j] * inv_l;
            }
        }
    });
    const auto& xv = x.values();
    auto& yv = y.values();
    const double inv_l = 1.0 / static_cast<double>(l);
    for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int t = 0; t < l; ++t) acc += xv[static_cast<size_t>(t) * d + j];
        yv[j] = acc * inv_l;
    }
    return y;
}

// ---------------------------------------------------------------------------
// shape & gating

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    require(numel(shape) == x.size(), "reshape: cannot view " + shape_str(x.shape()) + " as " +
                                          shape_str(shape));
    Tensor y = make_node(std::move(shape), {x}, [x](detail::Node& self) mutable {
        if (x.requires_grad()) axpy(x.grad(), self.grad.data());
    });
    y.values() = x.values();
    return y;
}

Tensor transpose2d(const Tensor& x) {
    require(x.shape().size() == 2, "transpose2d: input must be 2-D, got " + shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    Tensor y = make_node({c, r}, {x}, [x, r, c](detail::Node& self) mutable {
        if (x.requires_grad()) {
            auto& g = x.grad();
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) {
                    g[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
                }
            }
        }
    });
    const auto& xv = x.values();
    auto& yv = y.values();
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) yv[static_cast<size_t>(j) * r + i] = xv[static_cast<size_t>(i) * c + j];
    }
    return y;
}

Tensor vstack(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(1),
            "vstack: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const int ca = a.dim(0), cb = b.dim(0), l = a.dim(1);
    Tensor y = make_node({ca + cb, l}, {a, b}, [a, b, ca, cb, l](detail::Node& self) mutable {
        const size_t na = static_cast<size_t>(ca) * l;
        if (a.requires_grad()) axpy(a.grad(), self.grad.data());
        if (b.requires_grad()) axpy(b.grad(), self.grad.data() + na);
    });
    auto& yv = y.values();
    std::copy(a.values().begin(), a.values().end(), yv.begin());
    std::copy(b.values().begin(), b.values().end(), yv.begin() + a.values().size());
    return y;
}

Tensor hstack(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(0) == b.dim(0),
            "hstack: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const int l = a.dim(0), da = a.dim(1), db = b.dim(1);
    Tensor y = make_node({l, da + db}, {a, b}, [a, b, l, da, db](detail::Node& self) mutable {
        if (a.requires_grad()) {
            auto& g = a.grad();
            for (int t = 0; t < l; ++t) {
                for (int j = 0; j < da; ++j) {
                    g[static_cast<size_t>(t) * da + j] +=
                        self.grad[static_cast<size_t>(t) * (da + db) + j];
                }
            }
        }
        if (b.requires_grad()) {
            auto& g = b.grad();
            for (int t = 0; t < l; ++t) {
                for (int j = 0; j < db; ++j) {
                    g[static_cast<size_t>(t) * db + j] +=
                        self.grad[static_cast<size_t>(t) * (da + db) + da + j];
                }
            }
        }
    });
    auto& yv = y.values();
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int t = 0; t < l; ++t) {
        std::copy(av.begin() + static_cast<size_t>(t) * da, av.begin() + static_cast<size_t>(t + 1) * da,
                  yv.begin() + static_cast<size_t>(t) * (da + db));
        std::copy(bv.begin() + static_cast<size_t>(t) * db, bv.begin() + static_cast<size_t>(t + 1) * db,
                  yv.begin() + static_cast<size_t>(t) * (da + db) + da);
    }
    return y;
}

Tensor broadcast_cols(const Tensor& v, int l) {
    require(v.shape().size() == 2 && v.dim(1) == 1,
            "broadcast_cols: input must be C x 1, got " + shape_str(v.shape()));
    const int c = v.dim(0);
    Tensor y = make_node({c, l}, {v}, [v, c, l](detail::Node& self) mutable {
        if (v.requires_grad()) {
            auto& g = v.grad();
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int t = 0; t < l; ++t) acc += self.grad[static_cast<size_t>(ch) * l + t];
                g[ch] += acc;
            }
        }
    });
    const auto& vv = v.values();
    auto& yv = y.values();
    for (int ch = 0; ch < c; ++ch) {
        std::fill(yv.begin() + static_cast<size_t>(ch) * l, yv.begin() + static_cast<size_t>(ch + 1) * l,
                  vv[ch]);
    }
    return y;
}

Tensor mul_channels(const Tensor& u, const Tensor& g) {
    require(u.shape().size() == 2, "mul_channels: input must be C x L, got " + shape_str(u.shape()));
    const int c = u.dim(0), l = u.dim(1);
    require(g.shape() == (std::vector<int>{c, 1}),
            "mul_channels: gate " + shape_str(g.shape()) + " must be [" + std::to_string(c) + "x1]");
    Tensor y = make_node({c, l}, {u, g}, [u, g, c, l](detail::Node& self) mutable {
        if (u.requires_grad()) {
            auto& gu = u.grad();
            const auto& gv = g.values();
            for (int ch = 0; ch < c; ++ch) {
                const double s = gv[ch];
                for (int t = 0; t < l; ++t) {
                    const size_t i = static_cast<size_t>(ch) * l + t;
                    gu[i] += self.grad[i] * s;
                }
            }
        }
        if (g.requires_grad()) {
            auto& gg = g.grad();
            const auto& uv = u.values();
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int t = 0; t < l; ++t) {
                    const size_t i = static_cast<size_t>(ch) * l + t;
                    acc += self.grad[i] * uv[i];
                }
                gg[ch] += acc;
            }
        }
    });
    const auto& uv = u.values();
    const auto& gv = g.values();
    auto& yv = y.values();
    for (int ch = 0; ch < c; ++ch) {
        const double s = gv[ch];
        for (int t = 0; t < l; ++t) {
            const size_t i = static_cast<size_t>(ch) * l + t;
            yv[i] = uv[i] * s;
        }
    }
    return y;
}

Tensor mul_frames(const Tensor& u, const Tensor& o) {
    require(u.shape().size() == 2, "mul_frames: input must be C x L, got " + shape_str(u.shape()));
    const int c = u.dim(0), l = u.dim(1);
    require(o.shape() == (std::vector<int>{1, l}),
            "mul_frames: cue " + shape_str(o.shape()) + " must be [1x" + std::to_string(l) + "]");
    Tensor y = make_node({c, l}, {u, o}, [u, o, c, l](detail::Node& self) mutable {
        if (u.requires_grad()) {
            auto& gu = u.grad();
            const auto& ov = o.values();
            for (int ch = 0; ch < c; ++ch) {
                for (int t = 0; t < l; ++t) {
                    const size_t i = static_cast<size_t>(ch) * l + t;
                    gu[i] += self.grad[i] * ov[t];
                }
            }
        }
        if (o.requires_grad()) {
            auto& go = o.grad();
            const auto& uv = u.values();
            for (int t = 0; t < l; ++t) {
                double acc = 0.0;
                for (int ch = 0; ch < c; ++ch) {
                    const size_t i = static_cast<size_t>(ch) * l + t;
                    acc += self.grad[i] * uv[i];
                }
                go[t] += acc;
            }
        }
    });
    const auto& uv = u.values();
    const auto& ov = o.values();
    auto& yv = y.values();
    for (int ch = 0; ch < c; ++ch) {
        for (int t = 0; t < l; ++t) {
            const size_t i = static_cast<size_t>(ch) * l + t;
            yv[i] = uv[i] * ov[t];
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// losses

Tensor binary_cross_entropy(const Tensor& pred, const Tensor& target) {
    require(pred.shape() == target.shape(), "binary_cross_entropy: shape mismatch " +
                                                shape_str(pred.shape()) + " vs " +
                                                shape_str(target.shape()));
    constexpr double kEps = 1e-7;
    const size_t n = pred.values().size();
    Tensor y = make_node({1}, {pred, target}, [pred, target, n](detail::Node& self) mutable {
        if (pred.requires_grad()) {
            auto& g = pred.grad();
            const auto& pv = pred.values();
            const auto& tv = target.values();
            const double gs = self.grad[0] / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) {
                const double p = pv[i];
                if (p <= kEps || p >= 1.0 - kEps) continue;  // clamped region, zero slope
                g[i] += gs * (-tv[i] / p + (1.0 - tv[i]) / (1.0 - p));
            }
        }
    });
    const auto& pv = pred.values();
    const auto& tv = target.values();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double p = std::clamp(pv[i], kEps, 1.0 - kEps);
        acc += -(tv[i] * std::log(p) + (1.0 - tv[i]) * std::log(1.0 - p));
    }
    y.values()[0] = acc / static_cast<double>(n);
    return y;
}

// ---------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].values().size(), 0.0);
        v_[i].assign(params_[i].values().size(), 0.0);
    }
    frozen_.assign(params_.size(), false);
}

void AdamOptimizer::set_frozen(std::vector<bool> frozen) {
    if (frozen.size() != params_.size()) {
        throw std::invalid_argument("set_frozen: mask size does not match parameter count");
    }
    frozen_ = std::move(frozen);
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        if (frozen_[i]) continue;
        auto& p = params_[i].values();
        const auto& g = params_[i].grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace wase
