#include "hinerv/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "hinerv/par.hpp"

namespace hinerv {

namespace detail {

namespace {
std::atomic<uint64_t> g_seq{1};
}

template <typename T>
std::vector<T>& grad_buf(Node<T>& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template std::vector<float>& grad_buf(Node<float>&);
template std::vector<double>& grad_buf(Node<double>&);

}  // namespace detail

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
NodePtr<T> new_node(Shape shape, std::vector<T> value) {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = detail::g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

// Builds the result node of an op. When no input requires a gradient the
// parents and the closure are dropped, pruning the tape.
template <typename T>
Tensor<T> finish_op(Shape shape, std::vector<T> value,
                    std::initializer_list<const Tensor<T>*> inputs,
                    std::function<void(detail::Node<T>&)> backprop) {
  auto n = new_node(std::move(shape), std::move(value));
  bool rg = false;
  for (const Tensor<T>* t : inputs) rg = rg || t->requires_grad();
  if (rg) {
    n->requires_grad = true;
    n->leaf = false;
    for (const Tensor<T>* t : inputs) n->parents.push_back(t->node_ptr());
    n->backprop = std::move(backprop);
  }
  return Tensor<T>::wrap(std::move(n));
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

// ---- Tensor ----

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  check(n >= 0, "tensor shape " + shape_str(shape) + " is invalid");
  auto node = new_node<T>(std::move(shape), std::vector<T>((size_t)n, T(0)));
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  int64_t n = shape_numel(shape);
  auto node = new_node<T>(std::move(shape), std::vector<T>((size_t)n, value));
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_vec(Shape shape, std::vector<T> data, bool requires_grad) {
  check(shape_numel(shape) == (int64_t)data.size(),
        "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  auto node = new_node<T>(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

template <typename T>
std::vector<T>& Tensor<T>::mutable_value() {
  if (!node_->leaf) throw UsageError("only leaf tensors may be mutated");
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() requires a scalar, got shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool enable) {
  if (!node_->leaf) throw UsageError("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = enable;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1)
    throw UsageError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  if (node_->backward_ran)
    throw UsageError("backward() already ran on this graph; rebuild the forward pass first");
  node_->backward_ran = true;
  if (!node_->requires_grad) return;

  // Collect the reachable grad-requiring subgraph.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<detail::Node<T>*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node<T>* a, const detail::Node<T>* b) { return a->seq > b->seq; });

  detail::grad_buf(*node_)[0] = T(1);
  for (auto* n : order) {
    if (!n->leaf && n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.value())
    if (!std::isfinite((double)v)) return false;
  return true;
}
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

// ---- elementwise helpers ----

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

template <typename T>
void axpy(std::vector<T>& out, const std::vector<T>& g) {
  for (size_t i = 0; i < out.size(); ++i) out[i] += g[i];
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> v(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  return finish_op<T>(
      a.shape(), std::move(v), {&a, &b}, [a, b](detail::Node<T>& n) {
        if (a.requires_grad()) axpy(detail::grad_buf(*a.node()), n.grad);
        if (b.requires_grad()) axpy(detail::grad_buf(*b.node()), n.grad);
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> v(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  return finish_op<T>(
      a.shape(), std::move(v), {&a, &b}, [a, b](detail::Node<T>& n) {
        if (a.requires_grad()) axpy(detail::grad_buf(*a.node()), n.grad);
        if (b.requires_grad()) {
          auto& g = detail::grad_buf(*b.node());
          for (size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> v(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  return finish_op<T>(
      a.shape(), std::move(v), {&a, &b}, [a, b](detail::Node<T>& n) {
        if (a.requires_grad()) {
          auto& g = detail::grad_buf(*a.node());
          const auto& bv2 = b.value();
          for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv2[i];
        }
        if (b.requires_grad()) {
          auto& g = detail::grad_buf(*b.node());
          const auto& av = a.value();
          for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "div");
  std::vector<T> v(a.value());
  const auto& bv = b.value();
  for (size_t i = 0; i < v.size(); ++i) v[i] /= bv[i];
  return finish_op<T>(
      a.shape(), std::move(v), {&a, &b}, [a, b](detail::Node<T>& n) {
        const auto& av = a.value();
        const auto& bv2 = b.value();
        if (a.requires_grad()) {
          auto& g = detail::grad_buf(*a.node());
          for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / bv2[i];
        }
        if (b.requires_grad()) {
          auto& g = detail::grad_buf(*b.node());
          for (size_t i = 0; i < g.size(); ++i)
            g[i] -= n.grad[i] * av[i] / (bv2[i] * bv2[i]);
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> v(a.value());
  for (auto& x : v) x *= c;
  return finish_op<T>(a.shape(), std::move(v), {&a}, [a, c](detail::Node<T>& n) {
    auto& g = detail::grad_buf(*a.node());
    for (size_t i = 0; i < g.size(); ++i) g[i] += c * n.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> v(a.value());
  for (auto& x : v) x += c;
  return finish_op<T>(a.shape(), std::move(v), {&a}, [a](detail::Node<T>& n) {
    axpy(detail::grad_buf(*a.node()), n.grad);
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> v(a.value());
  for (auto& x : v) x = std::fabs(x);
  return finish_op<T>(a.shape(), std::move(v), {&a}, [a](detail::Node<T>& n) {
    auto& g = detail::grad_buf(*a.node());
    const auto& av = a.value();
    for (size_t i = 0; i < g.size(); ++i) {
      T s = av[i] > T(0) ? T(1) : (av[i] < T(0) ? T(-1) : T(0));
      g[i] += s * n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.value());
  for (auto& x : v) x = x > T(0) ? x : T(0);
  return finish_op<T>(a.shape(), std::move(v), {&a}, [a](detail::Node<T>& n) {
    auto& g = detail::grad_buf(*a.node());
    const auto& av = a.value();
    for (size_t i = 0; i < g.size(); ++i)
      if (av[i] > T(0)) g[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
  std::vector<T> v(a.value());
  for (auto& x : v) x = (T)std::pow((double)x, (double)p);
  return finish_op<T>(a.shape(), std::move(v), {&a}, [a, p](detail::Node<T>& n) {
    auto& g = detail::grad_buf(*a.node());
    const auto& av = a.value();
    for (size_t i = 0; i < g.size(); ++i) {
      if (av[i] == T(0)) continue;  // keep gradients finite at the boundary
      g[i] += p * (T)std::pow((double)av[i], (double)p - 1.0) * n.grad[i];
    }
  });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> v(a.value());
  for (auto& x : v) {
    double xd = (double)x;
    x = (T)(0.5 * xd * (1.0 + std::erf(xd * kInvSqrt2)));
  }
  return finish_op<T>(a.shape(), std::move(v), {&a}, [a](detail::Node<T>& n) {
    auto& g = detail::grad_buf(*a.node());
    const auto& av = a.value();
    for (size_t i = 0; i < g.size(); ++i) {
      double x = (double)av[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      g[i] += (T)(cdf + x * pdf) * n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.value());
  for (auto& x : v) {
    double xd = (double)x;
    x = xd >= 0 ? (T)(1.0 / (1.0 + std::exp(-xd)))
                : (T)(std::exp(xd) / (1.0 + std::exp(xd)));
  }
  auto out = finish_op<T>(a.shape(), std::move(v), {&a}, [a](detail::Node<T>& n) {
    auto& g = detail::grad_buf(*a.node());
    const auto& sv = n.value;
    for (size_t i = 0; i < g.size(); ++i) g[i] += sv[i] * (T(1) - sv[i]) * n.grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0;
  for (T x : a.value()) acc += (double)x;
  return finish_op<T>({1}, {(T)acc}, {&a}, [a](detail::Node<T>& n) {
    auto& g = detail::grad_buf(*a.node());
    T gz = n.grad[0];
    for (auto& x : g) x += gz;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  double acc = 0;
  for (T x : a.value()) acc += (double)x;
  int64_t cnt = a.numel();
  check(cnt > 0, "mean of empty tensor");
  return finish_op<T>({1}, {(T)(acc / (double)cnt)}, {&a}, [a, cnt](detail::Node<T>& n) {
    auto& g = detail::grad_buf(*a.node());
    T gz = n.grad[0] / (T)cnt;
    for (auto& x : g) x += gz;
  });
}

// ---- linear ----

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  check(x.rank() >= 1, "linear: input must have at least one axis");
  check(weight.rank() == 2, "linear: weight must be 2-d, got " + shape_str(weight.shape()));
  int cin = x.dim(x.rank() - 1);
  int cout = weight.dim(0);
  check(weight.dim(1) == cin, "linear: weight " + shape_str(weight.shape()) +
                                  " does not accept " + std::to_string(cin) + " input channels");
  check(bias.rank() == 1 && bias.dim(0) == cout,
        "linear: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) +
            " output channels");

  int64_t positions = x.numel() / cin;
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  std::vector<T> out((size_t)(positions * cout));
  const T* xv = x.value().data();
  const T* wv = weight.value().data();
  const T* bv = bias.value().data();
  parallel_for(positions, [&](int64_t p) {
    const T* xp = xv + p * cin;
    T* op = out.data() + p * cout;
    for (int o = 0; o < cout; ++o) {
      const T* wrow = wv + (int64_t)o * cin;
      double acc = (double)bv[o];
      for (int i = 0; i < cin; ++i) acc += (double)wrow[i] * (double)xp[i];
      op[o] = (T)acc;
    }
  });

  return finish_op<T>(
      std::move(out_shape), std::move(out), {&x, &weight, &bias},
      [x, weight, bias, positions, cin, cout](detail::Node<T>& n) {
        const T* gz = n.grad.data();
        const T* xv2 = x.value().data();
        const T* wv2 = weight.value().data();
        if (x.requires_grad()) {
          auto& gx = detail::grad_buf(*x.node());
          T* gxp = gx.data();
          parallel_for(positions, [&](int64_t p) {
            const T* gp = gz + p * cout;
            T* gxr = gxp + p * cin;
            for (int o = 0; o < cout; ++o) {
              T g = gp[o];
              const T* wrow = wv2 + (int64_t)o * cin;
              for (int i = 0; i < cin; ++i) gxr[i] += g * wrow[i];
            }
          });
        }
        if (weight.requires_grad()) {
          auto& gw = detail::grad_buf(*weight.node());
          T* gwp = gw.data();
          parallel_for(cout, [&](int64_t o) {
            T* gwrow = gwp + o * cin;
            for (int64_t p = 0; p < positions; ++p) {
              T g = gz[p * cout + o];
              const T* xp = xv2 + p * cin;
              for (int i = 0; i < cin; ++i) gwrow[i] += g * xp[i];
            }
          });
        }
        if (bias.requires_grad()) {
          auto& gb = detail::grad_buf(*bias.node());
          for (int o = 0; o < cout; ++o) {
            double acc = 0;
            for (int64_t p = 0; p < positions; ++p) acc += (double)gz[p * cout + o];
            gb[(size_t)o] += (T)acc;
          }
        }
      });
}

// ---- layer_norm ----

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  check(x.rank() >= 1, "layer_norm: input must have at least one axis");
  int c = x.dim(x.rank() - 1);
  check(gamma.rank() == 1 && gamma.dim(0) == c,
        "layer_norm: gamma " + shape_str(gamma.shape()) + " does not match " + std::to_string(c) +
            " channels");
  check(beta.rank() == 1 && beta.dim(0) == c,
        "layer_norm: beta " + shape_str(beta.shape()) + " does not match " + std::to_string(c) +
            " channels");
  check(eps > T(0), "layer_norm: eps must be positive");

  int64_t positions = x.numel() / c;
  std::vector<T> out(x.value().size());
  const T* xv = x.value().data();
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  parallel_for(positions, [&](int64_t p) {
    const T* xp = xv + p * c;
    T* op = out.data() + p * c;
    double mu = 0;
    for (int i = 0; i < c; ++i) mu += (double)xp[i];
    mu /= c;
    double var = 0;
    for (int i = 0; i < c; ++i) {
      double d = (double)xp[i] - mu;
      var += d * d;
    }
    var /= c;
    double inv = 1.0 / std::sqrt(var + (double)eps);
    for (int i = 0; i < c; ++i)
      op[i] = (T)((((double)xp[i] - mu) * inv) * (double)gv[i] + (double)bv[i]);
  });

  return finish_op<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, eps, positions, c](detail::Node<T>& n) {
        const T* gz = n.grad.data();
        const T* xv2 = x.value().data();
        const T* gv2 = gamma.value().data();
        // Per-position statistics are recomputed; cheaper than saving them.
        std::vector<double> mus((size_t)positions), invs((size_t)positions);
        parallel_for(positions, [&](int64_t p) {
          const T* xp = xv2 + p * c;
          double mu = 0;
          for (int i = 0; i < c; ++i) mu += (double)xp[i];
          mu /= c;
          double var = 0;
          for (int i = 0; i < c; ++i) {
            double d = (double)xp[i] - mu;
            var += d * d;
          }
          mus[(size_t)p] = mu;
          invs[(size_t)p] = 1.0 / std::sqrt(var / c + (double)eps);
        });
        if (x.requires_grad()) {
          auto& gx = detail::grad_buf(*x.node());
          T* gxp = gx.data();
          parallel_for(positions, [&](int64_t p) {
            const T* xp = xv2 + p * c;
            const T* gp = gz + p * c;
            double mu = mus[(size_t)p], inv = invs[(size_t)p];
            double mean_g = 0, mean_gx = 0;
            for (int i = 0; i < c; ++i) {
              double xhat = ((double)xp[i] - mu) * inv;
              double gg = (double)gp[i] * (double)gv2[i];
              mean_g += gg;
              mean_gx += gg * xhat;
            }
            mean_g /= c;
            mean_gx /= c;
            for (int i = 0; i < c; ++i) {
              double xhat = ((double)xp[i] - mu) * inv;
              double gg = (double)gp[i] * (double)gv2[i];
              gxp[p * c + i] += (T)((gg - mean_g - xhat * mean_gx) * inv);
            }
          });
        }
        if (gamma.requires_grad()) {
          auto& gg = detail::grad_buf(*gamma.node());
          for (int i = 0; i < c; ++i) {
            double acc = 0;
            for (int64_t p = 0; p < positions; ++p) {
              double xhat = ((double)xv2[p * c + i] - mus[(size_t)p]) * invs[(size_t)p];
              acc += (double)gz[p * c + i] * xhat;
            }
            gg[(size_t)i] += (T)acc;
          }
        }
        if (beta.requires_grad()) {
          auto& gb = detail::grad_buf(*beta.node());
          for (int i = 0; i < c; ++i) {
            double acc = 0;
            for (int64_t p = 0; p < positions; ++p) acc += (double)gz[p * c + i];
            gb[(size_t)i] += (T)acc;
          }
        }
      });
}

// ---- conv2d ----

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding, int groups) {
  check(x.rank() == 3, "conv2d: input must be (H, W, C), got " + shape_str(x.shape()));
  check(weight.rank() == 4, "conv2d: weight must be 4-d, got " + shape_str(weight.shape()));
  int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  int cout = weight.dim(0), icg = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  check(kh == kw, "conv2d: kernel must be square, got " + shape_str(weight.shape()));
  check(groups >= 1 && cin % groups == 0,
        "conv2d: input channels " + std::to_string(cin) + " not divisible by groups " +
            std::to_string(groups));
  check(icg == cin / groups, "conv2d: weight " + shape_str(weight.shape()) +
                                 " does not match input channels " + std::to_string(cin) +
                                 " with groups " + std::to_string(groups));
  check(cout % groups == 0, "conv2d: output channels " + std::to_string(cout) +
                                " not divisible by groups " + std::to_string(groups));
  check(bias.rank() == 1 && bias.dim(0) == cout,
        "conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) +
            " output channels");
  check(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
  int k = kh;
  int oh = (h + 2 * padding - k) / stride + 1;
  int ow = (w + 2 * padding - k) / stride + 1;
  check(oh >= 1 && ow >= 1, "conv2d: input " + shape_str(x.shape()) + " too small for kernel " +
                                std::to_string(k) + " stride " + std::to_string(stride));
  int ocg = cout / groups;

  std::vector<T> out((size_t)oh * ow * cout);
  const T* xv = x.value().data();
  const T* wv = weight.value().data();
  const T* bv = bias.value().data();
  parallel_for(oh, [&](int64_t oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* op = out.data() + ((size_t)oy * ow + ox) * cout;
      for (int oc = 0; oc < cout; ++oc) {
        int q = oc / ocg;
        double acc = (double)bv[oc];
        const T* wbase = wv + (int64_t)oc * icg * k * k;
        for (int ky = 0; ky < k; ++ky) {
          int iy = (int)oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            const T* xp = xv + ((size_t)iy * w + ix) * cin + (size_t)q * icg;
            const T* wp = wbase + (ky * k + kx);
            for (int ic = 0; ic < icg; ++ic) acc += (double)wp[(int64_t)ic * k * k] * (double)xp[ic];
          }
        }
        op[oc] = (T)acc;
      }
    }
  });

  Shape out_shape{oh, ow, cout};
  return finish_op<T>(
      std::move(out_shape), std::move(out), {&x, &weight, &bias},
      [x, weight, bias, stride, padding, groups, h, w, cin, cout, icg, ocg, k, oh,
       ow](detail::Node<T>& n) {
        const T* gz = n.grad.data();
        const T* xv2 = x.value().data();
        const T* wv2 = weight.value().data();
        if (x.requires_grad()) {
          auto& gx = detail::grad_buf(*x.node());
          T* gxp = gx.data();
          parallel_for(h, [&](int64_t iy) {
            for (int ix = 0; ix < w; ++ix) {
              for (int ic = 0; ic < cin; ++ic) {
                int q = ic / icg;
                int icq = ic - q * icg;
                double acc = 0;
                for (int ky = 0; ky < k; ++ky) {
                  int num = (int)iy + padding - ky;
                  if (num < 0 || num % stride) continue;
                  int oy = num / stride;
                  if (oy >= oh) continue;
                  for (int kx = 0; kx < k; ++kx) {
                    int numx = ix + padding - kx;
                    if (numx < 0 || numx % stride) continue;
                    int ox = numx / stride;
                    if (ox >= ow) continue;
                    const T* gp = gz + ((size_t)oy * ow + ox) * cout + (size_t)q * ocg;
                    for (int o = 0; o < ocg; ++o) {
                      const T* wp = wv2 + ((size_t)(q * ocg + o) * icg + icq) * k * k + ky * k + kx;
                      acc += (double)gp[o] * (double)*wp;
                    }
                  }
                }
                gxp[((size_t)iy * w + ix) * cin + ic] += (T)acc;
              }
            }
          });
        }
        if (weight.requires_grad()) {
          auto& gw = detail::grad_buf(*weight.node());
          T* gwp = gw.data();
          parallel_for(cout, [&](int64_t oc) {
            int q = (int)oc / ocg;
            for (int icq = 0; icq < icg; ++icq) {
              for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                  double acc = 0;
                  for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                      int ix = ox * stride - padding + kx;
                      if (ix < 0 || ix >= w) continue;
                      acc += (double)gz[((size_t)oy * ow + ox) * cout + oc] *
                             (double)xv2[((size_t)iy * w + ix) * cin + q * icg + icq];
                    }
                  }
                  gwp[((size_t)oc * icg + icq) * k * k + ky * k + kx] += (T)acc;
                }
              }
            }
          });
        }
        if (bias.requires_grad()) {
          auto& gb = detail::grad_buf(*bias.node());
          for (int oc = 0; oc < cout; ++oc) {
            double acc = 0;
            for (int64_t p = 0; p < (int64_t)oh * ow; ++p) acc += (double)gz[p * cout + oc];
            gb[(size_t)oc] += (T)acc;
          }
        }
      });
}

// ---- map utilities ----

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  check(x.rank() >= 1, "add_bias: input must have at least one axis");
  int c = x.dim(x.rank() - 1);
  check(bias.rank() == 1 && bias.dim(0) == c,
        "add_bias: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(c) +
            " channels");
  std::vector<T> v(x.value());
  const T* bv = bias.value().data();
  int64_t positions = x.numel() / c;
  for (int64_t p = 0; p < positions; ++p)
    for (int i = 0; i < c; ++i) v[(size_t)(p * c + i)] += bv[i];
  return finish_op<T>(x.shape(), std::move(v), {&x, &bias},
                      [x, bias, positions, c](detail::Node<T>& n) {
                        if (x.requires_grad()) axpy(detail::grad_buf(*x.node()), n.grad);
                        if (bias.requires_grad()) {
                          auto& gb = detail::grad_buf(*bias.node());
                          for (int i = 0; i < c; ++i) {
                            double acc = 0;
                            for (int64_t p = 0; p < positions; ++p)
                              acc += (double)n.grad[(size_t)(p * c + i)];
                            gb[(size_t)i] += (T)acc;
                          }
                        }
                      });
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  check(x.rank() == 3, "avg_pool2: input must be (H, W, C)");
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  check(h >= 2 && w >= 2, "avg_pool2: input " + shape_str(x.shape()) + " too small");
  int oh = h / 2, ow = w / 2;
  std::vector<T> out((size_t)oh * ow * c);
  const T* xv = x.value().data();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int i = 0; i < c; ++i) {
        double acc = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            acc += (double)xv[((size_t)(2 * oy + dy) * w + (2 * ox + dx)) * c + i];
        out[((size_t)oy * ow + ox) * c + i] = (T)(acc * 0.25);
      }
  return finish_op<T>({oh, ow, c}, std::move(out), {&x}, [x, h, w, c, oh, ow](detail::Node<T>& n) {
    auto& gx = detail::grad_buf(*x.node());
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int i = 0; i < c; ++i) {
          T g = n.grad[((size_t)oy * ow + ox) * c + i] * T(0.25);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              gx[((size_t)(2 * oy + dy) * w + (2 * ox + dx)) * c + i] += g;
        }
  });
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, int top, int left, int out_h, int out_w) {
  check(x.rank() == 3, "crop2d: input must be (H, W, C)");
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  check(top >= 0 && left >= 0 && out_h >= 1 && out_w >= 1 && top + out_h <= h &&
            left + out_w <= w,
        "crop2d: window " + std::to_string(top) + "," + std::to_string(left) + " size " +
            std::to_string(out_h) + "x" + std::to_string(out_w) + " outside input " +
            shape_str(x.shape()));
  std::vector<T> out((size_t)out_h * out_w * c);
  const T* xv = x.value().data();
  for (int y = 0; y < out_h; ++y)
    std::copy_n(xv + ((size_t)(top + y) * w + left) * c, (size_t)out_w * c,
                out.data() + (size_t)y * out_w * c);
  return finish_op<T>({out_h, out_w, c}, std::move(out), {&x},
                      [x, top, left, out_h, out_w, w, c](detail::Node<T>& n) {
                        auto& gx = detail::grad_buf(*x.node());
                        for (int y = 0; y < out_h; ++y) {
                          const T* gp = n.grad.data() + (size_t)y * out_w * c;
                          T* gxp = gx.data() + ((size_t)(top + y) * w + left) * c;
                          for (int i = 0; i < out_w * c; ++i) gxp[i] += gp[i];
                        }
                      });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat_channels: no inputs");
  int h = parts[0].dim(0), w = parts[0].dim(1);
  int ctotal = 0;
  for (const auto& p : parts) {
    check(p.rank() == 3 && p.dim(0) == h && p.dim(1) == w,
          "concat_channels: mismatching spatial dims " + shape_str(p.shape()));
    ctotal += p.dim(2);
  }
  std::vector<T> out((size_t)h * w * ctotal);
  int64_t positions = (int64_t)h * w;
  int off = 0;
  for (const auto& p : parts) {
    int c = p.dim(2);
    const T* pv = p.value().data();
    for (int64_t i = 0; i < positions; ++i)
      std::copy_n(pv + i * c, c, out.data() + i * ctotal + off);
    off += c;
  }

  auto node = new_node<T>({h, w, ctotal}, std::move(out));
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  if (rg) {
    node->requires_grad = true;
    node->leaf = false;
    for (const auto& p : parts) node->parents.push_back(p.node_ptr());
    auto captured = parts;
    node->backprop = [captured, positions, ctotal](detail::Node<T>& n) {
      int off2 = 0;
      for (const auto& p : captured) {
        int c = p.dim(2);
        if (p.requires_grad()) {
          auto& gp = detail::grad_buf(*p.node());
          for (int64_t i = 0; i < positions; ++i)
            for (int j = 0; j < c; ++j) gp[(size_t)(i * c + j)] += n.grad[(size_t)(i * ctotal + off2 + j)];
        }
        off2 += c;
      }
    };
  }
  return Tensor<T>::wrap(std::move(node));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  check(shape_numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) + " to " +
                                             shape_str(shape) + " changes element count");
  std::vector<T> v(x.value());
  return finish_op<T>(std::move(shape), std::move(v), {&x}, [x](detail::Node<T>& n) {
    axpy(detail::grad_buf(*x.node()), n.grad);
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& idx) {
  check(x.rank() == 2, "gather_rows: input must be (N, C)");
  int nrows = x.dim(0), c = x.dim(1);
  std::vector<T> out(idx.size() * (size_t)c);
  const T* xv = x.value().data();
  for (size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < nrows, "gather_rows: index out of range");
    std::copy_n(xv + (size_t)idx[i] * c, c, out.data() + i * c);
  }
  return finish_op<T>({(int)idx.size(), c}, std::move(out), {&x}, [x, idx, c](detail::Node<T>& n) {
    auto& gx = detail::grad_buf(*x.node());
    for (size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < c; ++j) gx[(size_t)idx[i] * c + j] += n.grad[i * c + j];
  });
}

template <typename T>
Tensor<T> mul_mask(const Tensor<T>& x, const Tensor<T>& mask) {
  check(x.rank() == 3 && mask.rank() == 3, "mul_mask: inputs must be (H, W, C)");
  check(mask.dim(0) == x.dim(0) && mask.dim(1) == x.dim(1) && mask.dim(2) == 1,
        "mul_mask: mask " + shape_str(mask.shape()) + " does not match input " +
            shape_str(x.shape()));
  int c = x.dim(2);
  int64_t positions = (int64_t)x.dim(0) * x.dim(1);
  std::vector<T> out(x.value());
  const T* mv = mask.value().data();
  for (int64_t p = 0; p < positions; ++p) {
    T m = mv[p];
    for (int i = 0; i < c; ++i) out[(size_t)(p * c + i)] *= m;
  }
  return finish_op<T>(x.shape(), std::move(out), {&x, &mask},
                      [x, mask, positions, c](detail::Node<T>& n) {
                        const T* mv2 = mask.value().data();
                        if (x.requires_grad()) {
                          auto& gx = detail::grad_buf(*x.node());
                          for (int64_t p = 0; p < positions; ++p) {
                            T m = mv2[p];
                            for (int i = 0; i < c; ++i)
                              gx[(size_t)(p * c + i)] += m * n.grad[(size_t)(p * c + i)];
                          }
                        }
                        if (mask.requires_grad()) {
                          auto& gm = detail::grad_buf(*mask.node());
                          const T* xv = x.value().data();
                          for (int64_t p = 0; p < positions; ++p) {
                            double acc = 0;
                            for (int i = 0; i < c; ++i)
                              acc += (double)n.grad[(size_t)(p * c + i)] * (double)xv[(size_t)(p * c + i)];
                            gm[(size_t)p] += (T)acc;
                          }
                        }
                      });
}

// ---- bilinear upsampling ----

namespace {

struct AxisMap {
  std::vector<int> i0, i1;
  std::vector<double> w;
};

// Destination -> source mapping along one axis. `abs0` is the absolute
// position of the input's first pixel, `extent` the valid plane extent used
// for clamping; windows of a plane therefore map exactly like the plane.
AxisMap make_axis_map(int out_n, int crop, int scale, int64_t abs0, int extent, int in_n) {
  AxisMap m;
  m.i0.resize((size_t)out_n);
  m.i1.resize((size_t)out_n);
  m.w.resize((size_t)out_n);
  for (int d = 0; d < out_n; ++d) {
    int64_t abs_dst = scale * abs0 + crop + d;
    double s = ((double)abs_dst + 0.5) / (double)scale - 0.5;
    if (s < 0) s = 0;
    if (s > (double)(extent - 1)) s = (double)(extent - 1);
    double local = s - (double)abs0;
    int i0 = (int)std::floor(local);
    double w = local - (double)i0;
    if (i0 < 0) {  // outside the window; clamp (only reachable without padding)
      i0 = 0;
      w = 0;
    }
    if (i0 > in_n - 1) {
      i0 = in_n - 1;
      w = 0;
    }
    int i1 = i0 + 1 < in_n ? i0 + 1 : in_n - 1;
    if (i1 == i0) w = 0;
    m.i0[(size_t)d] = i0;
    m.i1[(size_t)d] = i1;
    m.w[(size_t)d] = w;
  }
  return m;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int scale, const UpsampleWindow& win) {
  check(x.rank() == 3, "bilinear_upsample: input must be (H, W, C)");
  check(scale >= 1, "bilinear_upsample: scale must be >= 1, got " + std::to_string(scale));
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  int out_h = win.out_h > 0 ? win.out_h : h * scale;
  int out_w = win.out_w > 0 ? win.out_w : w * scale;
  int extent_h = win.extent_h > 0 ? win.extent_h : h;
  int extent_w = win.extent_w > 0 ? win.extent_w : w;
  check(win.crop_y >= 0 && win.crop_x >= 0 && win.crop_y + out_h <= h * scale &&
            win.crop_x + out_w <= w * scale,
        "bilinear_upsample: crop window outside upsampled map");

  AxisMap ym = make_axis_map(out_h, win.crop_y, scale, win.abs_y, extent_h, h);
  AxisMap xm = make_axis_map(out_w, win.crop_x, scale, win.abs_x, extent_w, w);

  std::vector<T> out((size_t)out_h * out_w * c);
  const T* xv = x.value().data();
  parallel_for(out_h, [&](int64_t y) {
    int y0 = ym.i0[(size_t)y], y1 = ym.i1[(size_t)y];
    double wy = ym.w[(size_t)y];
    T* op = out.data() + y * out_w * c;
    for (int xo = 0; xo < out_w; ++xo) {
      int x0 = xm.i0[(size_t)xo], x1 = xm.i1[(size_t)xo];
      double wx = xm.w[(size_t)xo];
      const T* v00 = xv + ((size_t)y0 * w + x0) * c;
      const T* v01 = xv + ((size_t)y0 * w + x1) * c;
      const T* v10 = xv + ((size_t)y1 * w + x0) * c;
      const T* v11 = xv + ((size_t)y1 * w + x1) * c;
      for (int i = 0; i < c; ++i) {
        double top = (1.0 - wx) * (double)v00[i] + wx * (double)v01[i];
        double bot = (1.0 - wx) * (double)v10[i] + wx * (double)v11[i];
        op[xo * c + i] = (T)((1.0 - wy) * top + wy * bot);
      }
    }
  });

  return finish_op<T>(
      {out_h, out_w, c}, std::move(out), {&x},
      [x, ym, xm, out_h, out_w, w, c](detail::Node<T>& n) {
        auto& gx = detail::grad_buf(*x.node());
        const T* gz = n.grad.data();
        // Channel slices are disjoint, so per-channel scatter is race-free.
        parallel_for(c, [&](int64_t i) {
          for (int y = 0; y < out_h; ++y) {
            int y0 = ym.i0[(size_t)y], y1 = ym.i1[(size_t)y];
            double wy = ym.w[(size_t)y];
            for (int xo = 0; xo < out_w; ++xo) {
              int x0 = xm.i0[(size_t)xo], x1 = xm.i1[(size_t)xo];
              double wx = xm.w[(size_t)xo];
              double g = (double)gz[((size_t)y * out_w + xo) * c + i];
              gx[((size_t)y0 * w + x0) * c + i] += (T)((1.0 - wy) * (1.0 - wx) * g);
              gx[((size_t)y0 * w + x1) * c + i] += (T)((1.0 - wy) * wx * g);
              gx[((size_t)y1 * w + x0) * c + i] += (T)(wy * (1.0 - wx) * g);
              gx[((size_t)y1 * w + x1) * c + i] += (T)(wy * wx * g);
            }
          }
        });
      });
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int scale) {
  return bilinear_upsample(x, scale, UpsampleWindow{});
}

// ---- trilinear sampling ----

template <typename T>
Tensor<T> trilinear_sample(const Tensor<T>& grid, const std::vector<Coord3>& coords) {
  check(grid.rank() == 4, "trilinear_sample: grid must be (T, H, W, C), got " +
                              shape_str(grid.shape()));
  int tg = grid.dim(0), hg = grid.dim(1), wg = grid.dim(2), c = grid.dim(3);

  struct Cell {
    int t0, t1, y0, y1, x0, x1;
    double wt, wy, wx;
  };
  auto axis = [](double v, int n, int& i0, int& i1, double& w) {
    if (v < 0) v = 0;
    if (v > (double)(n - 1)) v = (double)(n - 1);
    i0 = (int)std::floor(v);
    if (i0 > n - 1) i0 = n - 1;
    w = v - (double)i0;
    i1 = i0 + 1 < n ? i0 + 1 : n - 1;
    if (i1 == i0) w = 0;
  };
  std::vector<Cell> cells(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) {
    Cell& cl = cells[i];
    axis(coords[i].t, tg, cl.t0, cl.t1, cl.wt);
    axis(coords[i].y, hg, cl.y0, cl.y1, cl.wy);
    axis(coords[i].x, wg, cl.x0, cl.x1, cl.wx);
  }

  std::vector<T> out(coords.size() * (size_t)c);
  const T* gv = grid.value().data();
  auto at = [&](int t, int y, int x) { return gv + (((size_t)t * hg + y) * wg + x) * c; };
  for (size_t i = 0; i < coords.size(); ++i) {
    const Cell& cl = cells[i];
    T* op = out.data() + i * c;
    for (int j = 0; j < c; ++j) {
      double v00 = (1 - cl.wx) * (double)at(cl.t0, cl.y0, cl.x0)[j] + cl.wx * (double)at(cl.t0, cl.y0, cl.x1)[j];
      double v01 = (1 - cl.wx) * (double)at(cl.t0, cl.y1, cl.x0)[j] + cl.wx * (double)at(cl.t0, cl.y1, cl.x1)[j];
      double v10 = (1 - cl.wx) * (double)at(cl.t1, cl.y0, cl.x0)[j] + cl.wx * (double)at(cl.t1, cl.y0, cl.x1)[j];
      double v11 = (1 - cl.wx) * (double)at(cl.t1, cl.y1, cl.x0)[j] + cl.wx * (double)at(cl.t1, cl.y1, cl.x1)[j];
      double v0 = (1 - cl.wy) * v00 + cl.wy * v01;
      double v1 = (1 - cl.wy) * v10 + cl.wy * v11;
      op[j] = (T)((1 - cl.wt) * v0 + cl.wt * v1);
    }
  }

  return finish_op<T>(
      {(int)coords.size(), c}, std::move(out), {&grid},
      [grid, cells, hg, wg, c](detail::Node<T>& n) {
        auto& gg = detail::grad_buf(*grid.node());
        const T* gz = n.grad.data();
        auto gat = [&](int t, int y, int x) { return gg.data() + (((size_t)t * hg + y) * wg + x) * c; };
        for (size_t i = 0; i < cells.size(); ++i) {
          const Cell& cl = cells[i];
          double w[8] = {(1 - cl.wt) * (1 - cl.wy) * (1 - cl.wx), (1 - cl.wt) * (1 - cl.wy) * cl.wx,
                         (1 - cl.wt) * cl.wy * (1 - cl.wx),       (1 - cl.wt) * cl.wy * cl.wx,
                         cl.wt * (1 - cl.wy) * (1 - cl.wx),       cl.wt * (1 - cl.wy) * cl.wx,
                         cl.wt * cl.wy * (1 - cl.wx),             cl.wt * cl.wy * cl.wx};
          T* dst[8] = {gat(cl.t0, cl.y0, cl.x0), gat(cl.t0, cl.y0, cl.x1),
                       gat(cl.t0, cl.y1, cl.x0), gat(cl.t0, cl.y1, cl.x1),
                       gat(cl.t1, cl.y0, cl.x0), gat(cl.t1, cl.y0, cl.x1),
                       gat(cl.t1, cl.y1, cl.x0), gat(cl.t1, cl.y1, cl.x1)};
          for (int j = 0; j < c; ++j) {
            double g = (double)gz[i * c + j];
            for (int kk = 0; kk < 8; ++kk) dst[kk][j] += (T)(w[kk] * g);
          }
        }
      });
}

// ---- explicit instantiations ----

#define HINERV_INSTANTIATE(T)                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> abs(const Tensor<T>&);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> pow_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int,    \
                            int);                                                              \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                              \
  template Tensor<T> crop2d(const Tensor<T>&, int, int, int, int);                             \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<int>&);                   \
  template Tensor<T> mul_mask(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, int, const UpsampleWindow&);          \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, int);                                 \
  template Tensor<T> trilinear_sample(const Tensor<T>&, const std::vector<Coord3>&);

HINERV_INSTANTIATE(float)
HINERV_INSTANTIATE(double)

#undef HINERV_INSTANTIATE

}  // namespace hinerv
