#include "msw/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace msw {

namespace {

template <class T>
using ConstMat = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using Mat = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> ts) {
  Tape<T>* tp = nullptr;
  for (const Tensor<T>* t : ts) {
    if (!t->defined()) throw ValueError("operation on undefined tensor");
    if (!tp) tp = t->tape();
  }
  if (!tp) throw ValueError("operation on tensors without a tape");
  for (const Tensor<T>* t : ts)
    if (t->recorded() && t->tape() != tp) throw ValueError("tensors belong to different tapes");
  return tp;
}

template <class T>
void accumulate(Tape<T>& tp, int node, const Shape& shape, const std::vector<T>& g) {
  auto& buf = tp.grad_buffer(node, shape);
  for (size_t i = 0; i < g.size(); ++i) buf.v[i] += g[i];
}

inline int normalize_axis(int axis, int ndim) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) throw DimensionError(cat("axis ", axis, " out of range for rank ", ndim));
  return a;
}

}  // namespace

// ---------------- Tape ----------------

template <class T>
Tensor<T> Tape<T>::leaf(std::shared_ptr<const Array<T>> value, bool requires_grad) {
  const bool rec = requires_grad || record_all_;
  int node = -1;
  if (rec) node = add_node(value->shape, {}, nullptr);
  return make(std::move(value), node);
}

template <class T>
int Tape<T>::add_node(Shape shape, std::vector<int> parents, BackFn back) {
  if (consumed_) throw ValueError("tape already consumed; create a fresh tape for a new forward pass");
  nodes_.push_back(Node{std::move(shape), std::move(parents), std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

template <class T>
Array<T>& Tape<T>::grad_buffer(int node, const Shape& shape) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  auto& slot = grads_[static_cast<size_t>(node)];
  if (!slot) slot = std::make_unique<Array<T>>(shape);
  return *slot;
}

template <class T>
Tensor<T> Tape<T>::make(std::shared_ptr<const Array<T>> value, int node) {
  Tensor<T> t;
  t.arr_ = std::move(value);
  t.tape_ = this;
  t.node_ = node;
  return t;
}

template <class T>
void Tape<T>::backward(const Tensor<T>& root) {
  if (consumed_) throw ValueError("tape already consumed by a previous backward()");
  if (!root.recorded() || root.tape() != this)
    throw ValueError("backward root is not recorded on this tape");
  if (root.size() != 1)
    throw ValueError(cat("backward requires a scalar root, got shape ", shape_str(root.shape())));
  consumed_ = true;
  grads_.resize(nodes_.size());
  grad_buffer(root.node(), nodes_[static_cast<size_t>(root.node())].shape).v[0] = T(1);
  for (int i = root.node(); i >= 0; --i) {
    if (!grads_[static_cast<size_t>(i)]) continue;
    auto& node = nodes_[static_cast<size_t>(i)];
    if (node.back) node.back(*this, *grads_[static_cast<size_t>(i)]);
  }
}

template <class T>
const Array<T>* Tape<T>::grad(const Tensor<T>& t) const {
  if (!t.recorded() || t.tape() != this) return nullptr;
  if (grads_.size() <= static_cast<size_t>(t.node())) return nullptr;
  return grads_[static_cast<size_t>(t.node())].get();
}

template <class T>
Array<T> Tape<T>::grad_or_zero(const Tensor<T>& t) const {
  const Array<T>* g = grad(t);
  if (g) return *g;
  return Array<T>(t.shape());
}

// ---------------- elementwise ----------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T>* tp = common_tape<T>({&a, &b});
  if (a.shape() != b.shape())
    throw DimensionError(cat("add: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
  auto out = std::make_shared<Array<T>>(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->v[i] = av[i] + bv[i];
  const int na = a.node(), nb = b.node();
  if (na < 0 && nb < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  if (na >= 0) parents.push_back(na);
  if (nb >= 0) parents.push_back(nb);
  const Shape sh = a.shape();
  return tp->make(out, tp->add_node(sh, parents, [na, nb, sh](Tape<T>& t, const Array<T>& g) {
                    if (na >= 0) accumulate(t, na, sh, g.v);
                    if (nb >= 0) accumulate(t, nb, sh, g.v);
                  }));
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T>* tp = common_tape<T>({&a, &b});
  if (a.shape() != b.shape())
    throw DimensionError(cat("sub: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
  auto out = std::make_shared<Array<T>>(a.shape());
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a.values()[i] - b.values()[i];
  const int na = a.node(), nb = b.node();
  if (na < 0 && nb < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  if (na >= 0) parents.push_back(na);
  if (nb >= 0) parents.push_back(nb);
  const Shape sh = a.shape();
  return tp->make(out, tp->add_node(sh, parents, [na, nb, sh](Tape<T>& t, const Array<T>& g) {
                    if (na >= 0) accumulate(t, na, sh, g.v);
                    if (nb >= 0) {
                      auto& buf = t.grad_buffer(nb, sh);
                      for (size_t i = 0; i < g.v.size(); ++i) buf.v[i] -= g.v[i];
                    }
                  }));
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T>* tp = common_tape<T>({&a, &b});
  if (a.shape() != b.shape())
    throw DimensionError(cat("mul: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
  auto out = std::make_shared<Array<T>>(a.shape());
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a.values()[i] * b.values()[i];
  const int na = a.node(), nb = b.node();
  if (na < 0 && nb < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  if (na >= 0) parents.push_back(na);
  if (nb >= 0) parents.push_back(nb);
  const Shape sh = a.shape();
  auto sa = a.storage(), sb = b.storage();
  return tp->make(out, tp->add_node(sh, parents, [na, nb, sh, sa, sb](Tape<T>& t, const Array<T>& g) {
                    if (na >= 0) {
                      auto& buf = t.grad_buffer(na, sh);
                      for (size_t i = 0; i < g.v.size(); ++i) buf.v[i] += g.v[i] * sb->v[i];
                    }
                    if (nb >= 0) {
                      auto& buf = t.grad_buffer(nb, sh);
                      for (size_t i = 0; i < g.v.size(); ++i) buf.v[i] += g.v[i] * sa->v[i];
                    }
                  }));
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tape<T>* tp = common_tape<T>({&a});
  auto out = std::make_shared<Array<T>>(a.shape());
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a.values()[i] + s;
  if (!a.recorded()) return tp->make(std::move(out), -1);
  const int na = a.node();
  const Shape sh = a.shape();
  return tp->make(out, tp->add_node(sh, {na}, [na, sh](Tape<T>& t, const Array<T>& g) {
                    accumulate(t, na, sh, g.v);
                  }));
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  Tape<T>* tp = common_tape<T>({&a});
  auto out = std::make_shared<Array<T>>(a.shape());
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = a.values()[i] * s;
  if (!a.recorded()) return tp->make(std::move(out), -1);
  const int na = a.node();
  const Shape sh = a.shape();
  return tp->make(out, tp->add_node(sh, {na}, [na, sh, s](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(na, sh);
                    for (size_t i = 0; i < g.v.size(); ++i) buf.v[i] += g.v[i] * s;
                  }));
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  Tape<T>* tp = common_tape<T>({&x, &bias});
  const Shape& xs = x.shape();
  const Shape& bs = bias.shape();
  if (bs.size() > xs.size() || !std::equal(bs.begin(), bs.end(), xs.end() - bs.size()))
    throw DimensionError(cat("add_bias: ", shape_str(bs), " is not a suffix of ", shape_str(xs)));
  const int64_t bn = numel(bs);
  const int64_t reps = numel(xs) / bn;
  auto out = std::make_shared<Array<T>>(xs);
  for (int64_t r = 0; r < reps; ++r)
    for (int64_t i = 0; i < bn; ++i) out->v[r * bn + i] = x.values()[r * bn + i] + bias.values()[i];
  const int nx = x.node(), nb = bias.node();
  if (nx < 0 && nb < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  if (nx >= 0) parents.push_back(nx);
  if (nb >= 0) parents.push_back(nb);
  return tp->make(out, tp->add_node(xs, parents, [nx, nb, xs, bs, bn, reps](Tape<T>& t, const Array<T>& g) {
                    if (nx >= 0) accumulate(t, nx, xs, g.v);
                    if (nb >= 0) {
                      auto& buf = t.grad_buffer(nb, bs);
                      for (int64_t r = 0; r < reps; ++r)
                        for (int64_t i = 0; i < bn; ++i) buf.v[i] += g.v[r * bn + i];
                    }
                  }));
}

template <class T>
Tensor<T> add_channel_bias_nchw(const Tensor<T>& x, const Tensor<T>& bias) {
  Tape<T>* tp = common_tape<T>({&x, &bias});
  if (x.shape().size() != 4 || bias.shape().size() != 1 || bias.shape()[0] != x.shape()[1])
    throw DimensionError(cat("add_channel_bias_nchw: x ", shape_str(x.shape()), " bias ", shape_str(bias.shape())));
  const int64_t n = x.shape()[0], c = x.shape()[1], hw = static_cast<int64_t>(x.shape()[2]) * x.shape()[3];
  auto out = std::make_shared<Array<T>>(x.shape());
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ic = 0; ic < c; ++ic) {
      const T bv = bias.values()[ic];
      const int64_t base = (in * c + ic) * hw;
      for (int64_t i = 0; i < hw; ++i) out->v[base + i] = x.values()[base + i] + bv;
    }
  const int nx = x.node(), nb = bias.node();
  if (nx < 0 && nb < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  if (nx >= 0) parents.push_back(nx);
  if (nb >= 0) parents.push_back(nb);
  const Shape xs = x.shape(), bs = bias.shape();
  return tp->make(out, tp->add_node(xs, parents, [nx, nb, xs, bs, n, c, hw](Tape<T>& t, const Array<T>& g) {
                    if (nx >= 0) accumulate(t, nx, xs, g.v);
                    if (nb >= 0) {
                      auto& buf = t.grad_buffer(nb, bs);
                      for (int64_t in = 0; in < n; ++in)
                        for (int64_t ic = 0; ic < c; ++ic) {
                          const int64_t base = (in * c + ic) * hw;
                          T acc = T(0);
                          for (int64_t i = 0; i < hw; ++i) acc += g.v[base + i];
                          buf.v[ic] += acc;
                        }
                    }
                  }));
}

// ---------------- activations ----------------

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tape<T>* tp = common_tape<T>({&x});
  static constexpr double kC0 = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kC1 = 0.044715;
  auto out = std::make_shared<Array<T>>(x.shape());
  for (size_t i = 0; i < out->v.size(); ++i) {
    const double v = static_cast<double>(x.values()[i]);
    out->v[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(kC0 * (v + kC1 * v * v * v))));
  }
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape sh = x.shape();
  auto sx = x.storage();
  return tp->make(out, tp->add_node(sh, {nx}, [nx, sh, sx](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, sh);
                    for (size_t i = 0; i < g.v.size(); ++i) {
                      const double v = static_cast<double>(sx->v[i]);
                      const double u = kC0 * (v + kC1 * v * v * v);
                      const double th = std::tanh(u);
                      const double du = kC0 * (1.0 + 3.0 * kC1 * v * v);
                      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                      buf.v[i] += g.v[i] * static_cast<T>(d);
                    }
                  }));
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tape<T>* tp = common_tape<T>({&x});
  auto out = std::make_shared<Array<T>>(x.shape());
  for (size_t i = 0; i < out->v.size(); ++i) out->v[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape sh = x.shape();
  auto sx = x.storage();
  return tp->make(out, tp->add_node(sh, {nx}, [nx, sh, sx](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, sh);
                    for (size_t i = 0; i < g.v.size(); ++i)
                      if (sx->v[i] > T(0)) buf.v[i] += g.v[i];
                  }));
}

// ---------------- data movement ----------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Tape<T>* tp = common_tape<T>({&x});
  if (numel(shape) != x.size())
    throw DimensionError(cat("reshape: cannot view ", shape_str(x.shape()), " as ", shape_str(shape)));
  auto out = std::make_shared<Array<T>>(shape, x.values());
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  return tp->make(out, tp->add_node(shape, {nx}, [nx, xs](Tape<T>& t, const Array<T>& g) {
                    accumulate(t, nx, xs, g.v);
                  }));
}

namespace {
template <class T>
void permute_copy(const Array<T>& in, const std::vector<int>& axes, Array<T>& out) {
  const int nd = in.ndim();
  const auto in_strides = row_major_strides(in.shape);
  std::vector<int64_t> out_axis_stride(nd);  // stride in `in` for each output axis
  for (int i = 0; i < nd; ++i) out_axis_stride[i] = in_strides[static_cast<size_t>(axes[i])];
  std::vector<int64_t> idx(nd, 0);
  const int64_t n = in.size();
  int64_t src = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    out.v[static_cast<size_t>(flat)] = in.v[static_cast<size_t>(src)];
    for (int d = nd - 1; d >= 0; --d) {
      idx[d]++;
      src += out_axis_stride[d];
      if (idx[d] < out.shape[d]) break;
      src -= out_axis_stride[d] * out.shape[d];
      idx[d] = 0;
    }
  }
}
}  // namespace

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  Tape<T>* tp = common_tape<T>({&x});
  const int nd = static_cast<int>(x.shape().size());
  if (static_cast<int>(axes.size()) != nd)
    throw DimensionError(cat("permute: got ", axes.size(), " axes for rank ", nd));
  std::vector<bool> seen(nd, false);
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) {
    const int a = normalize_axis(axes[i], nd);
    if (seen[a]) throw DimensionError("permute: repeated axis");
    seen[a] = true;
    out_shape[i] = x.shape()[a];
  }
  auto out = std::make_shared<Array<T>>(out_shape);
  permute_copy(x.array(), axes, *out);
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  std::vector<int> inverse(nd);
  for (int i = 0; i < nd; ++i) inverse[static_cast<size_t>(axes[i])] = i;
  return tp->make(out, tp->add_node(out_shape, {nx}, [nx, xs, inverse](Tape<T>& t, const Array<T>& g) {
                    Array<T> gi(xs);
                    permute_copy(g, inverse, gi);
                    accumulate(t, nx, xs, gi.v);
                  }));
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ValueError("concat of zero tensors");
  Tape<T>* tp = xs[0].tape();
  for (const auto& t : xs) {
    if (!t.defined()) throw ValueError("concat of undefined tensor");
    if (t.recorded() && t.tape() != tp) throw ValueError("tensors belong to different tapes");
  }
  const int nd = static_cast<int>(xs[0].shape().size());
  const int a = normalize_axis(axis, nd);
  Shape out_shape = xs[0].shape();
  for (size_t i = 1; i < xs.size(); ++i) {
    Shape s = xs[i].shape();
    if (static_cast<int>(s.size()) != nd) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != a && s[d] != out_shape[d])
        throw DimensionError(cat("concat: shape mismatch ", shape_str(out_shape), " vs ", shape_str(s)));
    out_shape[a] += s[a];
  }
  const int64_t outer = numel(Shape(out_shape.begin(), out_shape.begin() + a));
  const int64_t inner = numel(Shape(out_shape.begin() + a + 1, out_shape.end()));
  auto out = std::make_shared<Array<T>>(out_shape);
  const int64_t out_row = static_cast<int64_t>(out_shape[a]) * inner;
  int64_t off = 0;
  std::vector<int64_t> offsets;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const int64_t rows = static_cast<int64_t>(x.shape()[a]) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(x.values().data() + o * rows, rows, out->v.data() + o * out_row + off);
    off += rows;
  }
  std::vector<int> parents;
  bool any = false;
  for (const auto& x : xs)
    if (x.recorded()) {
      any = true;
      parents.push_back(x.node());
    }
  if (!any) return tp->make(std::move(out), -1);
  struct Piece {
    int node;
    Shape shape;
    int64_t offset;
    int64_t rows;
  };
  std::vector<Piece> pieces;
  for (size_t i = 0; i < xs.size(); ++i)
    if (xs[i].recorded())
      pieces.push_back({xs[i].node(), xs[i].shape(), offsets[i],
                        static_cast<int64_t>(xs[i].shape()[a]) * inner});
  return tp->make(out, tp->add_node(out_shape, parents,
                                    [pieces, outer, out_row](Tape<T>& t, const Array<T>& g) {
                                      for (const auto& p : pieces) {
                                        auto& buf = t.grad_buffer(p.node, p.shape);
                                        for (int64_t o = 0; o < outer; ++o) {
                                          const T* src = g.v.data() + o * out_row + p.offset;
                                          T* dst = buf.v.data() + o * p.rows;
                                          for (int64_t i = 0; i < p.rows; ++i) dst[i] += src[i];
                                        }
                                      }
                                    }));
}

namespace {
// out(b,h,w,c) = in(b, (h - sh) mod H, (w - sw) mod W, c)
template <class T>
void roll_copy(const Array<T>& in, int sh, int sw, Array<T>& out) {
  const int B = in.shape[0], H = in.shape[1], W = in.shape[2], C = in.shape[3];
  auto wrap = [](int v, int m) { return ((v % m) + m) % m; };
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h) {
      const int src_h = wrap(h - sh, H);
      for (int w = 0; w < W; ++w) {
        const int src_w = wrap(w - sw, W);
        const int64_t dst = ((static_cast<int64_t>(b) * H + h) * W + w) * C;
        const int64_t src = ((static_cast<int64_t>(b) * H + src_h) * W + src_w) * C;
        std::copy_n(in.v.data() + src, C, out.v.data() + dst);
      }
    }
}
}  // namespace

template <class T>
Tensor<T> roll2d(const Tensor<T>& x, int shift_h, int shift_w) {
  Tape<T>* tp = common_tape<T>({&x});
  if (x.shape().size() != 4) throw DimensionError(cat("roll2d expects (B,H,W,C), got ", shape_str(x.shape())));
  auto out = std::make_shared<Array<T>>(x.shape());
  roll_copy(x.array(), shift_h, shift_w, *out);
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape sh = x.shape();
  return tp->make(out, tp->add_node(sh, {nx}, [nx, sh, shift_h, shift_w](Tape<T>& t, const Array<T>& g) {
                    Array<T> gi(sh);
                    roll_copy(g, -shift_h, -shift_w, gi);
                    accumulate(t, nx, sh, gi.v);
                  }));
}

template <class T>
Tensor<T> space_to_depth2(const Tensor<T>& x) {
  Tape<T>* tp = common_tape<T>({&x});
  if (x.shape().size() != 4 || x.shape()[1] % 2 || x.shape()[2] % 2)
    throw DimensionError(cat("space_to_depth2 expects even (B,H,W,C), got ", shape_str(x.shape())));
  const int B = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
  const Shape out_shape{B, H / 2, W / 2, 4 * C};
  auto out = std::make_shared<Array<T>>(out_shape);
  static constexpr int kDi[4] = {0, 1, 0, 1};
  static constexpr int kDj[4] = {0, 0, 1, 1};
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < H / 2; ++i)
      for (int j = 0; j < W / 2; ++j)
        for (int q = 0; q < 4; ++q) {
          const int64_t src = ((static_cast<int64_t>(b) * H + 2 * i + kDi[q]) * W + 2 * j + kDj[q]) * C;
          const int64_t dst = ((static_cast<int64_t>(b) * (H / 2) + i) * (W / 2) + j) * 4 * C + q * C;
          std::copy_n(x.values().data() + src, C, out->v.data() + dst);
        }
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  return tp->make(out, tp->add_node(out_shape, {nx}, [nx, xs, B, H, W, C](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, xs);
                    for (int b = 0; b < B; ++b)
                      for (int i = 0; i < H / 2; ++i)
                        for (int j = 0; j < W / 2; ++j)
                          for (int q = 0; q < 4; ++q) {
                            const int64_t dst = ((static_cast<int64_t>(b) * H + 2 * i + kDi[q]) * W + 2 * j + kDj[q]) * C;
                            const int64_t src = ((static_cast<int64_t>(b) * (H / 2) + i) * (W / 2) + j) * 4 * C + q * C;
                            for (int c = 0; c < C; ++c) buf.v[dst + c] += g.v[src + c];
                          }
                  }));
}

template <class T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, int pad_h, int pad_w) {
  Tape<T>* tp = common_tape<T>({&x});
  if (x.shape().size() != 4) throw DimensionError("pad_bottom_right expects (B,H,W,C)");
  if (pad_h < 0 || pad_w < 0) throw ValueError("negative padding");
  const int B = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
  const Shape out_shape{B, H + pad_h, W + pad_w, C};
  auto out = std::make_shared<Array<T>>(out_shape);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h) {
      const int64_t src = ((static_cast<int64_t>(b) * H + h) * W) * C;
      const int64_t dst = ((static_cast<int64_t>(b) * (H + pad_h) + h) * (W + pad_w)) * C;
      std::copy_n(x.values().data() + src, static_cast<int64_t>(W) * C, out->v.data() + dst);
    }
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  return tp->make(out, tp->add_node(out_shape, {nx}, [nx, xs, B, H, W, C, pad_h, pad_w](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, xs);
                    for (int b = 0; b < B; ++b)
                      for (int h = 0; h < H; ++h) {
                        const int64_t dst = ((static_cast<int64_t>(b) * H + h) * W) * C;
                        const int64_t src = ((static_cast<int64_t>(b) * (H + pad_h) + h) * (W + pad_w)) * C;
                        for (int64_t i = 0; i < static_cast<int64_t>(W) * C; ++i) buf.v[dst + i] += g.v[src + i];
                      }
                  }));
}

template <class T>
Tensor<T> crop_to(const Tensor<T>& x, int new_h, int new_w) {
  Tape<T>* tp = common_tape<T>({&x});
  if (x.shape().size() != 4) throw DimensionError("crop_to expects (B,H,W,C)");
  const int B = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
  if (new_h > H || new_w > W) throw DimensionError("crop_to: target larger than input");
  const Shape out_shape{B, new_h, new_w, C};
  auto out = std::make_shared<Array<T>>(out_shape);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < new_h; ++h) {
      const int64_t src = ((static_cast<int64_t>(b) * H + h) * W) * C;
      const int64_t dst = ((static_cast<int64_t>(b) * new_h + h) * new_w) * C;
      std::copy_n(x.values().data() + src, static_cast<int64_t>(new_w) * C, out->v.data() + dst);
    }
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  return tp->make(out, tp->add_node(out_shape, {nx}, [nx, xs, B, H, W, C, new_h, new_w](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, xs);
                    for (int b = 0; b < B; ++b)
                      for (int h = 0; h < new_h; ++h) {
                        const int64_t dst = ((static_cast<int64_t>(b) * H + h) * W) * C;
                        const int64_t src = ((static_cast<int64_t>(b) * new_h + h) * new_w) * C;
                        for (int64_t i = 0; i < static_cast<int64_t>(new_w) * C; ++i) buf.v[dst + i] += g.v[src + i];
                      }
                  }));
}

// ---------------- contractions ----------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  Tape<T>* tp = common_tape<T>({&a, &b});
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw DimensionError(cat("matmul expects rank-2 tensors, got ", shape_str(a.shape()), " and ", shape_str(b.shape())));
  const int m = ta ? a.shape()[1] : a.shape()[0];
  const int ka = ta ? a.shape()[0] : a.shape()[1];
  const int kb = tb ? b.shape()[1] : b.shape()[0];
  const int n = tb ? b.shape()[0] : b.shape()[1];
  if (ka != kb)
    throw DimensionError(cat("matmul: inner dimensions differ, ", shape_str(a.shape()), (ta ? "^T" : ""), " x ",
                             shape_str(b.shape()), (tb ? "^T" : "")));
  const Shape out_shape{m, n};
  auto out = std::make_shared<Array<T>>(out_shape);
  {
    ConstMat<T> A(a.values().data(), a.shape()[0], a.shape()[1]);
    ConstMat<T> B(b.values().data(), b.shape()[0], b.shape()[1]);
    Mat<T> O(out->v.data(), m, n);
    if (!ta && !tb) O.noalias() = A * B;
    else if (ta && !tb) O.noalias() = A.transpose() * B;
    else if (!ta && tb) O.noalias() = A * B.transpose();
    else O.noalias() = A.transpose() * B.transpose();
  }
  const int na = a.node(), nb = b.node();
  if (na < 0 && nb < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  if (na >= 0) parents.push_back(na);
  if (nb >= 0) parents.push_back(nb);
  auto sa = a.storage(), sb = b.storage();
  const Shape as = a.shape(), bs = b.shape();
  return tp->make(out, tp->add_node(out_shape, parents,
                                    [na, nb, sa, sb, as, bs, ta, tb, m, n](Tape<T>& t, const Array<T>& g) {
                                      ConstMat<T> G(g.v.data(), m, n);
                                      ConstMat<T> A(sa->v.data(), as[0], as[1]);
                                      ConstMat<T> B(sb->v.data(), bs[0], bs[1]);
                                      if (na >= 0) {
                                        Mat<T> dA(t.grad_buffer(na, as).v.data(), as[0], as[1]);
                                        if (!ta && !tb) dA.noalias() += G * B.transpose();
                                        else if (!ta && tb) dA.noalias() += G * B;
                                        else if (ta && !tb) dA.noalias() += B * G.transpose();
                                        else dA.noalias() += B.transpose() * G.transpose();
                                      }
                                      if (nb >= 0) {
                                        Mat<T> dB(t.grad_buffer(nb, bs).v.data(), bs[0], bs[1]);
                                        if (!ta && !tb) dB.noalias() += A.transpose() * G;
                                        else if (ta && !tb) dB.noalias() += A * G;
                                        else if (!ta && tb) dB.noalias() += G.transpose() * A;
                                        else dB.noalias() += G.transpose() * A.transpose();
                                      }
                                    }));
}

template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool tb) {
  Tape<T>* tp = common_tape<T>({&a, &b});
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0])
    throw DimensionError(cat("bmm expects matching rank-3 batches, got ", shape_str(a.shape()), " and ", shape_str(b.shape())));
  const int B = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  const int kb = tb ? b.shape()[2] : b.shape()[1];
  const int n = tb ? b.shape()[1] : b.shape()[2];
  if (k != kb)
    throw DimensionError(cat("bmm: inner dimensions differ, ", shape_str(a.shape()), " x ", shape_str(b.shape()), (tb ? "^T" : "")));
  const Shape out_shape{B, m, n};
  auto out = std::make_shared<Array<T>>(out_shape);
  for (int i = 0; i < B; ++i) {
    ConstMat<T> A(a.values().data() + static_cast<int64_t>(i) * m * k, m, k);
    ConstMat<T> Bm(b.values().data() + static_cast<int64_t>(i) * b.shape()[1] * b.shape()[2], b.shape()[1], b.shape()[2]);
    Mat<T> O(out->v.data() + static_cast<int64_t>(i) * m * n, m, n);
    if (tb) O.noalias() = A * Bm.transpose();
    else O.noalias() = A * Bm;
  }
  const int na = a.node(), nb = b.node();
  if (na < 0 && nb < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  if (na >= 0) parents.push_back(na);
  if (nb >= 0) parents.push_back(nb);
  auto sa = a.storage(), sb = b.storage();
  const Shape as = a.shape(), bs = b.shape();
  return tp->make(out, tp->add_node(out_shape, parents,
                                    [na, nb, sa, sb, as, bs, tb, B, m, k, n](Tape<T>& t, const Array<T>& g) {
                                      for (int i = 0; i < B; ++i) {
                                        ConstMat<T> G(g.v.data() + static_cast<int64_t>(i) * m * n, m, n);
                                        ConstMat<T> A(sa->v.data() + static_cast<int64_t>(i) * m * k, m, k);
                                        ConstMat<T> Bm(sb->v.data() + static_cast<int64_t>(i) * bs[1] * bs[2], bs[1], bs[2]);
                                        if (na >= 0) {
                                          Mat<T> dA(t.grad_buffer(na, as).v.data() + static_cast<int64_t>(i) * m * k, m, k);
                                          if (tb) dA.noalias() += G * Bm;
                                          else dA.noalias() += G * Bm.transpose();
                                        }
                                        if (nb >= 0) {
                                          Mat<T> dB(t.grad_buffer(nb, bs).v.data() + static_cast<int64_t>(i) * bs[1] * bs[2], bs[1], bs[2]);
                                          if (tb) dB.noalias() += G.transpose() * A;
                                          else dB.noalias() += A.transpose() * G;
                                        }
                                      }
                                    }));
}

namespace {
// cols is (C*kh*kw) x (OH*OW), row-major.
template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int OH, int OW, T* cols) {
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        T* row = cols + (static_cast<int64_t>(c) * kh * kw + i * kw + j) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int y = oy * stride + i - pad;
          for (int ox = 0; ox < OW; ++ox) {
            const int xx = ox * stride + j - pad;
            row[oy * OW + ox] =
                (y >= 0 && y < H && xx >= 0 && xx < W) ? x[(static_cast<int64_t>(c) * H + y) * W + xx] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad,
                int OH, int OW, T* x) {
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const T* row = cols + (static_cast<int64_t>(c) * kh * kw + i * kw + j) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int y = oy * stride + i - pad;
          if (y < 0 || y >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            const int xx = ox * stride + j - pad;
            if (xx < 0 || xx >= W) continue;
            x[(static_cast<int64_t>(c) * H + y) * W + xx] += row[oy * OW + ox];
          }
        }
      }
}
}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding) {
  Tape<T>* tp = common_tape<T>({&x, &w});
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw DimensionError(cat("conv2d expects (N,C,H,W) and (K,C,kh,kw), got ", shape_str(x.shape()), " and ",
                             shape_str(w.shape())));
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int K = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != C)
    throw DimensionError(cat("conv2d: channel mismatch, input ", shape_str(x.shape()), " weight ", shape_str(w.shape())));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValueError("conv2d: negative padding");
  if (kh > H + 2 * padding || kw > W + 2 * padding)
    throw DimensionError(cat("conv2d: kernel ", kh, "x", kw, " larger than padded input ", H + 2 * padding, "x",
                             W + 2 * padding));
  const int OH = (H + 2 * padding - kh) / stride + 1;
  const int OW = (W + 2 * padding - kw) / stride + 1;
  const Shape out_shape{N, K, OH, OW};
  auto out = std::make_shared<Array<T>>(out_shape);
  const int64_t ckk = static_cast<int64_t>(C) * kh * kw;
  {
    std::vector<T> cols(static_cast<size_t>(ckk * OH * OW));
    ConstMat<T> Wm(w.values().data(), K, ckk);
    for (int nidx = 0; nidx < N; ++nidx) {
      im2col(x.values().data() + static_cast<int64_t>(nidx) * C * H * W, C, H, W, kh, kw, stride, padding, OH, OW,
             cols.data());
      ConstMat<T> Cm(cols.data(), ckk, static_cast<int64_t>(OH) * OW);
      Mat<T> O(out->v.data() + static_cast<int64_t>(nidx) * K * OH * OW, K, static_cast<int64_t>(OH) * OW);
      O.noalias() = Wm * Cm;
    }
  }
  const int nx = x.node(), nw = w.node();
  if (nx < 0 && nw < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  if (nx >= 0) parents.push_back(nx);
  if (nw >= 0) parents.push_back(nw);
  auto sx = x.storage(), sw = w.storage();
  const Shape xs = x.shape(), ws = w.shape();
  return tp->make(out, tp->add_node(out_shape, parents,
                                    [nx, nw, sx, sw, xs, ws, stride, padding, N, C, H, W, K, kh, kw, OH, OW,
                                     ckk](Tape<T>& t, const Array<T>& g) {
                                      std::vector<T> cols(static_cast<size_t>(ckk * OH * OW));
                                      ConstMat<T> Wm(sw->v.data(), K, ckk);
                                      for (int nidx = 0; nidx < N; ++nidx) {
                                        ConstMat<T> G(g.v.data() + static_cast<int64_t>(nidx) * K * OH * OW, K,
                                                      static_cast<int64_t>(OH) * OW);
                                        if (nw >= 0) {
                                          im2col(sx->v.data() + static_cast<int64_t>(nidx) * C * H * W, C, H, W, kh, kw,
                                                 stride, padding, OH, OW, cols.data());
                                          ConstMat<T> Cm(cols.data(), ckk, static_cast<int64_t>(OH) * OW);
                                          Mat<T> dW(t.grad_buffer(nw, ws).v.data(), K, ckk);
                                          dW.noalias() += G * Cm.transpose();
                                        }
                                        if (nx >= 0) {
                                          Mat<T> dC(cols.data(), ckk, static_cast<int64_t>(OH) * OW);
                                          dC.noalias() = Wm.transpose() * G;
                                          col2im_add(cols.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                                                     t.grad_buffer(nx, xs).v.data() +
                                                         static_cast<int64_t>(nidx) * C * H * W);
                                        }
                                      }
                                    }));
}

// ---------------- reductions / normalization ----------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  Tape<T>* tp = common_tape<T>({&x});
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  auto out = std::make_shared<Array<T>>(Shape{1}, std::vector<T>{acc});
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  return tp->make(out, tp->add_node(Shape{1}, {nx}, [nx, xs](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, xs);
                    for (auto& v : buf.v) v += g.v[0];
                  }));
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  Tape<T>* tp = common_tape<T>({&x});
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  const T inv = T(1) / static_cast<T>(x.size());
  auto out = std::make_shared<Array<T>>(Shape{1}, std::vector<T>{acc * inv});
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  return tp->make(out, tp->add_node(Shape{1}, {nx}, [nx, xs, inv](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, xs);
                    for (auto& v : buf.v) v += g.v[0] * inv;
                  }));
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  Tape<T>* tp = common_tape<T>({&x});
  const int nd = static_cast<int>(x.shape().size());
  const int a = normalize_axis(axis, nd);
  Shape out_shape;
  for (int d = 0; d < nd; ++d)
    if (d != a) out_shape.push_back(x.shape()[d]);
  if (out_shape.empty()) out_shape.push_back(1);
  const int64_t outer = numel(Shape(x.shape().begin(), x.shape().begin() + a));
  const int64_t an = x.shape()[a];
  const int64_t inner = numel(Shape(x.shape().begin() + a + 1, x.shape().end()));
  auto out = std::make_shared<Array<T>>(out_shape);
  const T inv = T(1) / static_cast<T>(an);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T acc = T(0);
      for (int64_t k = 0; k < an; ++k) acc += x.values()[(o * an + k) * inner + i];
      out->v[o * inner + i] = acc * inv;
    }
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  return tp->make(out, tp->add_node(out_shape, {nx}, [nx, xs, outer, an, inner, inv](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, xs);
                    for (int64_t o = 0; o < outer; ++o)
                      for (int64_t k = 0; k < an; ++k)
                        for (int64_t i = 0; i < inner; ++i)
                          buf.v[(o * an + k) * inner + i] += g.v[o * inner + i] * inv;
                  }));
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  Tape<T>* tp = common_tape<T>({&x});
  const int nd = static_cast<int>(x.shape().size());
  const int a = normalize_axis(axis, nd);
  const int64_t outer = numel(Shape(x.shape().begin(), x.shape().begin() + a));
  const int64_t an = x.shape()[a];
  const int64_t inner = numel(Shape(x.shape().begin() + a + 1, x.shape().end()));
  auto out = std::make_shared<Array<T>>(x.shape());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T mx = x.values()[o * an * inner + i];
      for (int64_t k = 1; k < an; ++k) mx = std::max(mx, x.values()[(o * an + k) * inner + i]);
      T denom = T(0);
      for (int64_t k = 0; k < an; ++k) {
        const T e = std::exp(x.values()[(o * an + k) * inner + i] - mx);
        out->v[(o * an + k) * inner + i] = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (int64_t k = 0; k < an; ++k) out->v[(o * an + k) * inner + i] *= inv;
    }
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  auto sy = std::shared_ptr<const Array<T>>(out);
  return tp->make(out, tp->add_node(xs, {nx}, [nx, xs, sy, outer, an, inner](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nx, xs);
                    for (int64_t o = 0; o < outer; ++o)
                      for (int64_t i = 0; i < inner; ++i) {
                        T dot = T(0);
                        for (int64_t k = 0; k < an; ++k) {
                          const int64_t idx = (o * an + k) * inner + i;
                          dot += g.v[idx] * sy->v[idx];
                        }
                        for (int64_t k = 0; k < an; ++k) {
                          const int64_t idx = (o * an + k) * inner + i;
                          buf.v[idx] += sy->v[idx] * (g.v[idx] - dot);
                        }
                      }
                  }));
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  Tape<T>* tp = common_tape<T>({&x, &gamma, &beta});
  const int nd = static_cast<int>(x.shape().size());
  if (nd < 1) throw DimensionError("layer_norm on scalar");
  const int64_t D = x.shape()[nd - 1];
  if (gamma.shape() != Shape{static_cast<int>(D)} || beta.shape() != Shape{static_cast<int>(D)})
    throw DimensionError(cat("layer_norm: gamma/beta must have shape [", D, "], got ", shape_str(gamma.shape()), " and ",
                             shape_str(beta.shape())));
  const int64_t rows = x.size() / D;
  auto out = std::make_shared<Array<T>>(x.shape());
  auto norm = std::make_shared<Array<T>>(x.shape());  // saved (x-mu)*rstd
  auto rstd = std::make_shared<Array<T>>(Shape{static_cast<int>(rows)});
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.values().data() + r * D;
    T mu = T(0);
    for (int64_t d = 0; d < D; ++d) mu += xr[d];
    mu /= static_cast<T>(D);
    T var = T(0);
    for (int64_t d = 0; d < D; ++d) {
      const T c = xr[d] - mu;
      var += c * c;
    }
    var /= static_cast<T>(D);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd->v[r] = rs;
    for (int64_t d = 0; d < D; ++d) {
      const T y = (xr[d] - mu) * rs;
      norm->v[r * D + d] = y;
      out->v[r * D + d] = gamma.values()[d] * y + beta.values()[d];
    }
  }
  const int nx = x.node(), ng = gamma.node(), nb = beta.node();
  if (nx < 0 && ng < 0 && nb < 0) return tp->make(std::move(out), -1);
  std::vector<int> parents;
  for (const int n : {nx, ng, nb})
    if (n >= 0) parents.push_back(n);
  const Shape xs = x.shape();
  const Shape gs = gamma.shape();
  auto sgamma = gamma.storage();
  return tp->make(out, tp->add_node(xs, parents,
                                    [nx, ng, nb, xs, gs, sgamma, norm, rstd, rows, D](Tape<T>& t, const Array<T>& g) {
                                      if (ng >= 0) {
                                        auto& buf = t.grad_buffer(ng, gs);
                                        for (int64_t r = 0; r < rows; ++r)
                                          for (int64_t d = 0; d < D; ++d)
                                            buf.v[d] += g.v[r * D + d] * norm->v[r * D + d];
                                      }
                                      if (nb >= 0) {
                                        auto& buf = t.grad_buffer(nb, gs);
                                        for (int64_t r = 0; r < rows; ++r)
                                          for (int64_t d = 0; d < D; ++d) buf.v[d] += g.v[r * D + d];
                                      }
                                      if (nx >= 0) {
                                        auto& buf = t.grad_buffer(nx, xs);
                                        for (int64_t r = 0; r < rows; ++r) {
                                          T mean_gh = T(0), mean_ghy = T(0);
                                          for (int64_t d = 0; d < D; ++d) {
                                            const T gh = g.v[r * D + d] * sgamma->v[d];
                                            mean_gh += gh;
                                            mean_ghy += gh * norm->v[r * D + d];
                                          }
                                          mean_gh /= static_cast<T>(D);
                                          mean_ghy /= static_cast<T>(D);
                                          const T rs = rstd->v[r];
                                          for (int64_t d = 0; d < D; ++d) {
                                            const T gh = g.v[r * D + d] * sgamma->v[d];
                                            buf.v[r * D + d] += rs * (gh - mean_gh - norm->v[r * D + d] * mean_ghy);
                                          }
                                        }
                                      }
                                    }));
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  Tape<T>* tp = common_tape<T>({&logits});
  if (logits.shape().size() != 2)
    throw DimensionError(cat("cross_entropy expects (N,C) logits, got ", shape_str(logits.shape())));
  const int N = logits.shape()[0], C = logits.shape()[1];
  if (static_cast<int>(labels.size()) != N)
    throw ValueError(cat("cross_entropy: ", labels.size(), " labels for ", N, " rows"));
  for (const int l : labels)
    if (l < 0 || l >= C) throw ValueError(cat("cross_entropy: label ", l, " out of range [0,", C, ")"));
  auto probs = std::make_shared<Array<T>>(logits.shape());
  T loss = T(0);
  for (int r = 0; r < N; ++r) {
    const T* z = logits.values().data() + static_cast<int64_t>(r) * C;
    T mx = z[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, z[c]);
    T denom = T(0);
    for (int c = 0; c < C; ++c) {
      const T e = std::exp(z[c] - mx);
      probs->v[static_cast<int64_t>(r) * C + c] = e;
      denom += e;
    }
    for (int c = 0; c < C; ++c) probs->v[static_cast<int64_t>(r) * C + c] /= denom;
    loss += std::log(denom) + mx - z[labels[static_cast<size_t>(r)]];
  }
  loss /= static_cast<T>(N);
  auto out = std::make_shared<Array<T>>(Shape{1}, std::vector<T>{loss});
  if (!logits.recorded()) return tp->make(std::move(out), -1);
  const int nl = logits.node();
  const Shape ls = logits.shape();
  auto lab = std::make_shared<std::vector<int>>(labels);
  return tp->make(out, tp->add_node(Shape{1}, {nl}, [nl, ls, probs, lab, N, C](Tape<T>& t, const Array<T>& g) {
                    auto& buf = t.grad_buffer(nl, ls);
                    const T scale = g.v[0] / static_cast<T>(N);
                    for (int r = 0; r < N; ++r)
                      for (int c = 0; c < C; ++c) {
                        const int64_t idx = static_cast<int64_t>(r) * C + c;
                        const T onehot = (c == (*lab)[static_cast<size_t>(r)]) ? T(1) : T(0);
                        buf.v[idx] += scale * (probs->v[idx] - onehot);
                      }
                  }));
}

template <class T>
Tensor<T> select(const Tensor<T>& x, int64_t flat_index) {
  Tape<T>* tp = common_tape<T>({&x});
  if (flat_index < 0 || flat_index >= x.size())
    throw ValueError(cat("select: index ", flat_index, " out of range for ", x.size(), " elements"));
  auto out = std::make_shared<Array<T>>(Shape{1}, std::vector<T>{x.values()[static_cast<size_t>(flat_index)]});
  if (!x.recorded()) return tp->make(std::move(out), -1);
  const int nx = x.node();
  const Shape xs = x.shape();
  return tp->make(out, tp->add_node(Shape{1}, {nx}, [nx, xs, flat_index](Tape<T>& t, const Array<T>& g) {
                    t.grad_buffer(nx, xs).v[static_cast<size_t>(flat_index)] += g.v[0];
                  }));
}

// ---------------- explicit instantiations ----------------

#define MSW_INSTANTIATE(T)                                                                            \
  template class Tape<T>;                                                                             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                              \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                              \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add_channel_bias_nchw<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                       \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                       \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                             \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);                           \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                                   \
  template Tensor<T> roll2d<T>(const Tensor<T>&, int, int);                                           \
  template Tensor<T> space_to_depth2<T>(const Tensor<T>&);                                            \
  template Tensor<T> pad_bottom_right<T>(const Tensor<T>&, int, int);                                 \
  template Tensor<T> crop_to<T>(const Tensor<T>&, int, int);                                          \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);                       \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&, bool);                                \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int);                         \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                        \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                       \
  template Tensor<T> mean_axis<T>(const Tensor<T>&, int);                                             \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                               \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);          \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);                     \
  template Tensor<T> select<T>(const Tensor<T>&, int64_t);

MSW_INSTANTIATE(float)
MSW_INSTANTIATE(double)

#undef MSW_INSTANTIATE

}  // namespace msw
