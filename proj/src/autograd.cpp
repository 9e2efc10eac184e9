#include "wslmm/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace wsl::ag {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b,
                              const std::string& detail = {}) {
  std::ostringstream os;
  os << op << ": shape mismatch " << shape_str(a) << " vs " << shape_str(b);
  if (!detail.empty()) os << " (" << detail << ")";
  throw std::invalid_argument(os.str());
}

template <typename T>
void require_finite(const Var<T>& v, const char* op) {
  if (!v.valid()) throw std::invalid_argument(std::string(op) + ": null input");
  const auto& d = v.value().data;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(static_cast<double>(d[i]))) {
      throw std::domain_error(std::string(op) + ": non-finite input at flat index " +
                              std::to_string(i));
    }
  }
}

/// Gradient buffer of a parent, or nullptr when it does not need one.
template <typename T>
T* grad_of(const NodePtr<T>& p) {
  return p->requires_grad ? p->grad.data() : nullptr;
}

template <typename T>
Var<T> make_result(Tensor<T> value, const char* op, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> bw) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  n->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward_fn = std::move(bw);
  return Var<T>(std::move(n));
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, const char* op, F f, D df) {
  require_finite(x, op);
  Tensor<T> y(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < xv.size(); ++i) y.data[i] = f(xv[i]);
  return make_result<T>(std::move(y), op, {x.node()}, [df](Node<T>& self) {
    T* gx = grad_of(self.parents[0]);
    if (!gx) return;
    const auto& xin = self.parents[0]->value.data;
    const auto& yout = self.value.data;
    for (std::size_t i = 0; i < xin.size(); ++i) gx[i] += self.grad[i] * df(xin[i], yout[i]);
  });
}

void split_axis(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& n,
                std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t s, std::size_t p, std::size_t Ho, std::size_t Wo, T* cols) {
  const std::size_t plane = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* dst = cols + ((c * k + ki) * k + kj) * plane;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * s + ki) - static_cast<long>(p);
          T* row = dst + oy * Wo;
          if (iy < 0 || iy >= static_cast<long>(H)) {
            std::fill(row, row + Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const long ix = static_cast<long>(ox * s + kj) - static_cast<long>(p);
            row[ox] = (ix < 0 || ix >= static_cast<long>(W)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t s, std::size_t p, std::size_t Ho, std::size_t Wo, T* dx) {
  const std::size_t plane = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* src = cols + ((c * k + ki) * k + kj) * plane;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * s + ki) - static_cast<long>(p);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          T* dst = dx + (c * H + static_cast<std::size_t>(iy)) * W;
          const T* row = src + oy * Wo;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const long ix = static_cast<long>(ox * s + kj) - static_cast<long>(p);
            if (ix >= 0 && ix < static_cast<long>(W)) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

// ---- Var ------------------------------------------------------------------

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = "constant";
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> Var<T>::parameter(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->grad.assign(value.data.size(), T(0));
  n->value = std::move(value);
  n->op = "parameter";
  n->requires_grad = true;
  return Var<T>(std::move(n));
}

template <typename T>
T Var<T>::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  }
  return node_->value.data[0];
}

template <typename T>
void Var<T>::zero_grad() {
  node_->grad.assign(node_->value.data.size(), T(0));
}

// ---- backward -------------------------------------------------------------

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.valid()) throw std::invalid_argument("backward: null loss");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS: parents precede children in `order`.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    const bool leaf = n->parents.empty();
    if (!leaf || n->grad.size() != n->value.data.size()) {
      n->grad.assign(n->value.data.size(), T(0));
    }
  }
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---- primitives -----------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
  require_finite(x, "conv2d");
  require_finite(weight, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3]) {
    shape_error("conv2d", xs, ws, "expected x [N,C,H,W] and weight [O,C,k,k]");
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const bool has_bias = bias.valid();
  if (has_bias) {
    require_finite(bias, "conv2d");
    if (bias.shape() != Shape{ws[0]}) shape_error("conv2d", bias.shape(), Shape{ws[0]}, "bias");
  }
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t O = ws[0], k = ws[2];
  if (H + 2 * pad < k || W + 2 * pad < k) shape_error("conv2d", xs, ws, "kernel exceeds input");
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  const std::size_t ckk = C * k * k, plane = Ho * Wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  auto cols = std::make_shared<std::vector<T>>(direct ? 0 : N * ckk * plane);
  Tensor<T> y(Shape{N, O, Ho, Wo});
  CMap<T> wm(weight.value().data.data(), O, ckk);
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = x.value().data.data() + n * C * H * W;
    const T* cn = xn;
    if (!direct) {
      T* dst = cols->data() + n * ckk * plane;
      im2col(xn, C, H, W, k, stride, pad, Ho, Wo, dst);
      cn = dst;
    }
    Map<T> yn(y.data.data() + n * O * plane, O, plane);
    yn.noalias() = wm * CMap<T>(cn, ckk, plane);
    if (has_bias) {
      for (std::size_t o = 0; o < O; ++o) yn.row(o).array() += bias.value().data[o];
    }
  }

  std::vector<NodePtr<T>> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result<T>(
      std::move(y), "conv2d", std::move(parents),
      [=](Node<T>& self) {
        const auto& xn_ = self.parents[0];
        const auto& wn_ = self.parents[1];
        T* gx = grad_of(xn_);
        T* gw = grad_of(wn_);
        T* gb = has_bias ? grad_of(self.parents[2]) : nullptr;
        CMap<T> wmat(wn_->value.data.data(), O, ckk);
        std::vector<T> dcols(gx ? ckk * plane : 0);
        for (std::size_t n = 0; n < N; ++n) {
          CMap<T> gy(self.grad.data() + n * O * plane, O, plane);
          const T* cn = direct ? xn_->value.data.data() + n * C * H * W
                               : cols->data() + n * ckk * plane;
          if (gw) {
            Map<T> gwm(gw, O, ckk);
            gwm.noalias() += gy * CMap<T>(cn, ckk, plane).transpose();
          }
          if (gb) {
            // Plain loop: a vectorized reduction's order depends on buffer alignment.
            const T* g = self.grad.data() + n * O * plane;
            for (std::size_t o = 0; o < O; ++o) {
              T acc = 0;
              for (std::size_t p = 0; p < plane; ++p) acc += g[o * plane + p];
              gb[o] += acc;
            }
          }
          if (gx) {
            if (direct) {
              Map<T> gxn(gx + n * C * H * W, C, plane);
              gxn.noalias() += wmat.transpose() * gy;
            } else {
              Map<T> dc(dcols.data(), ckk, plane);
              dc.noalias() = wmat.transpose() * gy;
              col2im(dcols.data(), C, H, W, k, stride, pad, Ho, Wo, gx + n * C * H * W);
            }
          }
        }
      });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_finite(x, "linear");
  require_finite(weight, "linear");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    shape_error("linear", xs, ws, "expected x [N,F] and weight [O,F]");
  }
  const bool has_bias = bias.valid();
  if (has_bias) {
    require_finite(bias, "linear");
    if (bias.shape() != Shape{ws[0]}) shape_error("linear", bias.shape(), Shape{ws[0]}, "bias");
  }
  const std::size_t N = xs[0], F = xs[1], O = ws[0];
  Tensor<T> y(Shape{N, O});
  Map<T> ym(y.data.data(), N, O);
  ym.noalias() = CMap<T>(x.value().data.data(), N, F) *
                 CMap<T>(weight.value().data.data(), O, F).transpose();
  if (has_bias) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) ym(n, o) += bias.value().data[o];
  }
  std::vector<NodePtr<T>> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result<T>(std::move(y), "linear", std::move(parents), [=](Node<T>& self) {
    CMap<T> gy(self.grad.data(), N, O);
    if (T* gx = grad_of(self.parents[0])) {
      Map<T>(gx, N, F).noalias() += gy * CMap<T>(self.parents[1]->value.data.data(), O, F);
    }
    if (T* gw = grad_of(self.parents[1])) {
      Map<T>(gw, O, F).noalias() +=
          gy.transpose() * CMap<T>(self.parents[0]->value.data.data(), N, F);
    }
    if (has_bias) {
      if (T* gb = grad_of(self.parents[2])) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t o = 0; o < O; ++o) gb[o] += gy(n, o);
      }
    }
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_finite(a, "matmul");
  require_finite(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) {
    shape_error("matmul", as, bs, "expected [B,M,K] x [B,K,P]");
  }
  const std::size_t B = as[0], M = as[1], K = as[2], P = bs[2];
  Tensor<T> y(Shape{B, M, P});
  for (std::size_t i = 0; i < B; ++i) {
    Map<T>(y.data.data() + i * M * P, M, P).noalias() =
        CMap<T>(a.value().data.data() + i * M * K, M, K) *
        CMap<T>(b.value().data.data() + i * K * P, K, P);
  }
  return make_result<T>(std::move(y), "matmul", {a.node(), b.node()}, [=](Node<T>& self) {
    T* ga = grad_of(self.parents[0]);
    T* gb = grad_of(self.parents[1]);
    for (std::size_t i = 0; i < B; ++i) {
      CMap<T> gy(self.grad.data() + i * M * P, M, P);
      if (ga) {
        Map<T>(ga + i * M * K, M, K).noalias() +=
            gy * CMap<T>(self.parents[1]->value.data.data() + i * K * P, K, P).transpose();
      }
      if (gb) {
        Map<T>(gb + i * K * P, K, P).noalias() +=
            CMap<T>(self.parents[0]->value.data.data() + i * M * K, M, K).transpose() * gy;
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x, "sigmoid", [](T v) { return stable_sigmoid(v); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> log(const Var<T>& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("log: eps must be positive");
  const T e = static_cast<T>(eps);
  return unary(
      x, "log", [e](T v) { return std::log(std::max(v, e)); },
      [e](T v, T) { return v >= e ? T(1) / v : T(0); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  require_finite(x, "softmax");
  if (x.shape().empty()) throw std::invalid_argument("softmax: rank-0 input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data.data() + r * n;
    T* out = y.data.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (out[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[j] /= total;
  }
  return make_result<T>(std::move(y), "softmax", {x.node()}, [=](Node<T>& self) {
    T* gx = grad_of(self.parents[0]);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = self.value.data.data() + r * n;
      const T* gy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * yr[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gy[j] - dot);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_finite(a, "add");
  require_finite(b, "add");
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = a.value().data[i] + b.value().data[i];
  return make_result<T>(std::move(y), "add", {a.node(), b.node()}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      if (T* g = grad_of(self.parents[k])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_finite(a, "mul");
  require_finite(b, "mul");
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = a.value().data[i] * b.value().data[i];
  return make_result<T>(std::move(y), "mul", {a.node(), b.node()}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value.data;
    const auto& bv = self.parents[1]->value.data;
    if (T* ga = grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (T* gb = grad_of(self.parents[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  require_finite(a, "maximum");
  require_finite(b, "maximum");
  if (a.shape() != b.shape()) shape_error("maximum", a.shape(), b.shape());
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i)
    y.data[i] = std::max(a.value().data[i], b.value().data[i]);
  return make_result<T>(std::move(y), "maximum", {a.node(), b.node()}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value.data;
    const auto& bv = self.parents[1]->value.data;
    T* ga = grad_of(self.parents[0]);
    T* gb = grad_of(self.parents[1]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (av[i] >= bv[i]) {
        if (ga) ga[i] += self.grad[i];
      } else if (gb) {
        gb[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> affine(const Var<T>& x, double scale, double shift) {
  const T s = static_cast<T>(scale), c = static_cast<T>(shift);
  return unary(
      x, "affine", [s, c](T v) { return s * v + c; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  require_finite(x, "sum");
  double total = 0;
  for (T v : x.value().data) total += v;
  Tensor<T> y(Shape{1}, static_cast<T>(total));
  return make_result<T>(std::move(y), "sum", {x.node()}, [](Node<T>& self) {
    if (T* g = grad_of(self.parents[0])) {
      const std::size_t n = self.parents[0]->value.data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

namespace {

template <typename T>
Var<T> reduce_axis(const Var<T>& x, std::size_t axis, bool mean, const char* op) {
  require_finite(x, op);
  if (axis >= x.shape().size()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(x.shape()));
  }
  std::size_t outer, n, inner;
  split_axis(x.shape(), axis, outer, n, inner);
  if (n == 0) throw std::invalid_argument(std::string(op) + ": empty axis");
  Tensor<T> y(drop_axis(x.shape(), axis));
  const T* in = x.value().data.data();
  const double scale = mean ? 1.0 / static_cast<double>(n) : 1.0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += in[(o * n + j) * inner + i];
      y.data[o * inner + i] = static_cast<T>(acc * scale);
    }
  }
  const T g_scale = static_cast<T>(scale);
  return make_result<T>(std::move(y), op, {x.node()}, [=](Node<T>& self) {
    T* g = grad_of(self.parents[0]);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < inner; ++i)
          g[(o * n + j) * inner + i] += self.grad[o * inner + i] * g_scale;
  });
}

}  // namespace

template <typename T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis) {
  return reduce_axis(x, axis, false, "sum_axis");
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, std::size_t axis) {
  return reduce_axis(x, axis, true, "spatial_avg");
}

template <typename T>
Var<T> topk_mean(const Var<T>& x, std::size_t k, bool largest) {
  require_finite(x, "topk_mean");
  if (x.shape().size() != 2) {
    throw std::invalid_argument("topk_mean: expected [R,n], got " + shape_str(x.shape()));
  }
  const std::size_t rows = x.shape()[0], n = x.shape()[1];
  if (k == 0 || k > n) {
    throw std::invalid_argument("topk_mean: k=" + std::to_string(k) + " outside [1," +
                                std::to_string(n) + "]");
  }
  auto picked = std::make_shared<std::vector<std::size_t>>(rows * k);
  Tensor<T> y(Shape{rows});
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data.data() + r * n;
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (largest) {
      std::stable_sort(idx.begin(), idx.end(),
                       [in](std::size_t a, std::size_t b) { return in[a] > in[b]; });
    } else {
      std::stable_sort(idx.begin(), idx.end(),
                       [in](std::size_t a, std::size_t b) { return in[a] < in[b]; });
    }
    double acc = 0;
    for (std::size_t j = 0; j < k; ++j) {
      (*picked)[r * k + j] = idx[j];
      acc += in[idx[j]];
    }
    y.data[r] = static_cast<T>(acc / static_cast<double>(k));
  }
  const T inv_k = static_cast<T>(1.0 / static_cast<double>(k));
  return make_result<T>(std::move(y), "topk_mean", {x.node()}, [=](Node<T>& self) {
    T* g = grad_of(self.parents[0]);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < k; ++j) g[r * n + (*picked)[r * k + j]] += self.grad[r] * inv_k;
  });
}

template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, std::size_t out_h, std::size_t out_w, bool detach) {
  require_finite(x, "bilinear_upsample");
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw std::invalid_argument("bilinear_upsample: rank < 2");
  if (out_h == 0 || out_w == 0) {
    throw std::invalid_argument("bilinear_upsample: zero-sized target " + std::to_string(out_h) +
                                "x" + std::to_string(out_w));
  }
  const std::size_t h = xs[xs.size() - 2], w = xs[xs.size() - 1];
  if (h == 0 || w == 0 || out_h < h || out_w < w) {
    shape_error("bilinear_upsample", xs, Shape{out_h, out_w}, "target smaller than input");
  }
  const std::size_t planes = x.size() / (h * w);

  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0;
    for (std::size_t o = 0; o < out; ++o) {
      const double src = static_cast<double>(o) * scale;
      std::size_t i0 = static_cast<std::size_t>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);

  Shape ys = xs;
  ys[ys.size() - 2] = out_h;
  ys[ys.size() - 1] = out_w;
  Tensor<T> y(ys);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x.value().data.data() + p * h * w;
    T* out = y.data.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const double v = (1 - a.w1) * ((1 - b.w1) * in[a.i0 * w + b.i0] + b.w1 * in[a.i0 * w + b.i1]) +
                         a.w1 * ((1 - b.w1) * in[a.i1 * w + b.i0] + b.w1 * in[a.i1 * w + b.i1]);
        out[oy * out_w + ox] = static_cast<T>(v);
      }
    }
  }

  if (detach) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(y);
    n->op = "bilinear_upsample";
    n->parents = {x.node()};
    n->detached = true;
    return Var<T>(std::move(n));
  }
  return make_result<T>(std::move(y), "bilinear_upsample", {x.node()}, [=](Node<T>& self) {
    T* g = grad_of(self.parents[0]);
    if (!g) return;
    for (std::size_t p = 0; p < planes; ++p) {
      T* gin = g + p * h * w;
      const T* gout = self.grad.data() + p * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[ox];
          const double go = gout[oy * out_w + ox];
          gin[a.i0 * w + b.i0] += static_cast<T>(go * (1 - a.w1) * (1 - b.w1));
          gin[a.i0 * w + b.i1] += static_cast<T>(go * (1 - a.w1) * b.w1);
          gin[a.i1 * w + b.i0] += static_cast<T>(go * a.w1 * (1 - b.w1));
          gin[a.i1 * w + b.i1] += static_cast<T>(go * a.w1 * b.w1);
        }
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size()) shape_error("reshape", x.shape(), shape, "element count differs");
  Tensor<T> y(std::move(shape), x.value().data);
  return make_result<T>(std::move(y), "reshape", {x.node()}, [](Node<T>& self) {
    if (T* g = grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range");
  Shape ys = s0;
  ys[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_finite(p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) shape_error("concat", s0, s);
    ys[axis] += s[axis];
  }
  std::size_t outer, n, inner;
  split_axis(ys, axis, outer, n, inner);
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = n * inner;

  Tensor<T> y(ys);
  std::vector<NodePtr<T>> parents;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * widths[k], src + (o + 1) * widths[k], y.data.data() + o * row + offset);
    offset += widths[k];
    parents.push_back(parts[k].node());
  }
  return make_result<T>(std::move(y), "concat", std::move(parents), [=](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (T* g = grad_of(self.parents[k])) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[k]; ++i) g[o * widths[k] + i] += self.grad[o * row + off + i];
      }
      off += widths[k];
    }
  });
}

template <typename T>
Var<T> dropout_mask_apply(const Var<T>& x, const Tensor<T>& mask) {
  require_finite(x, "dropout_mask_apply");
  if (mask.shape != x.shape()) shape_error("dropout_mask_apply", x.shape(), mask.shape);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = x.value().data[i] * mask.data[i];
  auto m = std::make_shared<std::vector<T>>(mask.data);
  return make_result<T>(std::move(y), "dropout_mask_apply", {x.node()}, [m](Node<T>& self) {
    if (T* g = grad_of(self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*m)[i];
    }
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  auto n = std::make_shared<Node<T>>();
  n->value = x.value();
  n->op = "detach";
  n->parents = {x.node()};
  n->detached = true;
  return Var<T>(std::move(n));
}

// ---- gradient check -------------------------------------------------------

GradCheckReport grad_check(const std::function<Var<double>(const Var<double>&)>& f,
                           const Tensor<double>& x, double tol, double h) {
  GradCheckReport report;
  auto xv = Var<double>::parameter(x);
  auto y = f(xv);
  if (y.size() != 1) {
    report.message = "grad_check: f is not scalar-valued";
    return report;
  }
  backward(y);
  const std::vector<double> analytic =
      xv.grad().size() == x.size() ? xv.grad() : std::vector<double>(x.size(), 0.0);

  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp.data[i] += h;
    xm.data[i] -= h;
    double fp, fm;
    try {
      fp = f(Var<double>::constant(xp)).item();
      fm = f(Var<double>::constant(xm)).item();
    } catch (const std::domain_error& e) {
      report.worst_index = i;
      report.message = "non-finite value while probing coordinate " + std::to_string(i) + ": " +
                       e.what();
      return report;
    }
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      report.worst_index = i;
      report.message = "non-finite value while probing coordinate " + std::to_string(i);
      return report;
    }
    const double numeric = (fp - fm) / (2 * h);
    const double a = analytic[i];
    const double rel =
        std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = report.max_rel_error <= tol;
  std::ostringstream os;
  os << "max relative error " << report.max_rel_error << " at coordinate " << report.worst_index
     << (report.passed ? " (pass)" : " (fail)");
  report.message = os.str();
  return report;
}

// ---- instantiations -------------------------------------------------------

#define WSL_INSTANTIATE(T)                                                                  \
  template class Var<T>;                                                                    \
  template void backward<T>(const Var<T>&);                                                 \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,       \
                            std::size_t);                                                   \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                   \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> relu<T>(const Var<T>&);                                                   \
  template Var<T> sigmoid<T>(const Var<T>&);                                                \
  template Var<T> log<T>(const Var<T>&, double);                                            \
  template Var<T> exp<T>(const Var<T>&);                                                    \
  template Var<T> softmax<T>(const Var<T>&);                                                \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> maximum<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> affine<T>(const Var<T>&, double, double);                                 \
  template Var<T> sum<T>(const Var<T>&);                                                    \
  template Var<T> sum_axis<T>(const Var<T>&, std::size_t);                                  \
  template Var<T> mean_axis<T>(const Var<T>&, std::size_t);                                 \
  template Var<T> topk_mean<T>(const Var<T>&, std::size_t, bool);                           \
  template Var<T> bilinear_upsample<T>(const Var<T>&, std::size_t, std::size_t, bool);      \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                         \
  template Var<T> concat<T>(std::span<const Var<T>>, std::size_t);                          \
  template Var<T> dropout_mask_apply<T>(const Var<T>&, const Tensor<T>&);                   \
  template Var<T> detach<T>(const Var<T>&);

WSL_INSTANTIATE(float)
WSL_INSTANTIATE(double)

#undef WSL_INSTANTIATE

}  // namespace wsl::ag
