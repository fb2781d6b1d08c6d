#include "namlab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace namlab {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodeT = detail::Node<T>;

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
ConstMatMap<T> as_mat(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_mat(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Rows of the tensor viewed as [rows, shape.back()].
std::size_t leading(const Shape& s) {
  if (s.empty()) return 1;
  return numel(s) / std::max<std::size_t>(s.back(), 1);
}

template <typename T>
void accumulate(NodeT<T>& target, const std::vector<T>& g) {
  if (!target.requires_grad) return;
  auto& tg = target.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i];
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    accumulate(*self.parents[0], self.grad);
    auto& p = *self.parents[1];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>("scale", x.shape(), std::move(out), {x}, [factor](NodeT<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() == 0 || b.rank() != 1 || b.dim(0) != x.shape().back()) {
    mismatch("add_bias", x.shape(), b.shape());
  }
  const std::size_t n = b.dim(0);
  const std::size_t rows = leading(x.shape());
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bias = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias[j];
  return make_result<T>("add_bias", x.shape(), std::move(out), {x, b}, [rows, n](NodeT<T>& self) {
    accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    auto& g = pb.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
  });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() == 0 || s.rank() != 1 || s.dim(0) != x.dim(0)) mismatch("scale_rows", x.shape(), s.shape());
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows ? x.size() / rows : 0;
  std::vector<T> out(x.size());
  auto dx = x.data();
  auto ds = s.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = dx[r * width + j] * ds[r];
  return make_result<T>("scale_rows", x.shape(), std::move(out), {x, s}, [rows, width](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& ps = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) g[r * width + j] += self.grad[r * width + j] * ps.value[r];
    }
    if (ps.requires_grad) {
      auto& g = ps.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t j = 0; j < width; ++j) acc += self.grad[r * width + j] * px.value[r * width + j];
        g[r] += acc;
      }
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  as_mat(out, m, n).noalias() = as_mat(a.node()->value, m, k) * as_mat(b.node()->value, k, n);
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto g = as_mat(self.grad, m, n);
    if (pa.requires_grad) as_mat(pa.ensure_grad(), m, k).noalias() += g * as_mat(pb.value, k, n).transpose();
    if (pb.requires_grad) as_mat(pb.ensure_grad(), k, n).noalias() += as_mat(pa.value, m, k).transpose() * g;
  });
}

template <typename T>
Tensor<T> matvec(const Tensor<T>& a, const Tensor<T>& x) {
  if (a.rank() != 2 || x.rank() != 1 || a.dim(1) != x.dim(0)) mismatch("matvec", a.shape(), x.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m);
  as_mat(out, m, 1).noalias() = as_mat(a.node()->value, m, n) * as_mat(x.node()->value, n, 1);
  return make_result<T>("matvec", {m}, std::move(out), {a, x}, [m, n](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& px = *self.parents[1];
    auto g = as_mat(self.grad, m, 1);
    if (pa.requires_grad) as_mat(pa.ensure_grad(), m, n).noalias() += g * as_mat(px.value, n, 1).transpose();
    if (px.requires_grad) as_mat(px.ensure_grad(), n, 1).noalias() += as_mat(pa.value, m, n).transpose() * g;
  });
}

template <typename T>
Tensor<T> outer(const Tensor<T>& u, const Tensor<T>& v) {
  if (u.rank() != 1 || v.rank() != 1) mismatch("outer", u.shape(), v.shape());
  const std::size_t m = u.dim(0), n = v.dim(0);
  std::vector<T> out(m * n);
  auto du = u.data();
  auto dv = v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = du[i] * dv[j];
  return make_result<T>("outer", {m, n}, std::move(out), {u, v}, [m, n](NodeT<T>& self) {
    auto& pu = *self.parents[0];
    auto& pv = *self.parents[1];
    auto g = as_mat(self.grad, m, n);
    if (pu.requires_grad) as_mat(pu.ensure_grad(), m, 1).noalias() += g * as_mat(pv.value, n, 1);
    if (pv.requires_grad) as_mat(pv.ensure_grad(), n, 1).noalias() += g.transpose() * as_mat(pu.value, m, 1);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: expects rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  as_mat(out, n, m) = as_mat(a.node()->value, m, n).transpose();
  return make_result<T>("transpose", {n, m}, std::move(out), {a}, [m, n](NodeT<T>& self) {
    as_mat(self.parents[0]->ensure_grad(), m, n) += as_mat(self.grad, n, m).transpose();
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) mismatch("linear", x.shape(), w.shape());
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != out_dim)) mismatch("linear(bias)", w.shape(), b.shape());
  std::vector<T> out(rows * out_dim);
  auto y = as_mat(out, rows, out_dim);
  y.noalias() = as_mat(x.node()->value, rows, in) * as_mat(w.node()->value, out_dim, in).transpose();
  if (has_bias) {
    auto bias = b.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bias[j];
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<T>("linear", {rows, out_dim}, std::move(out), inputs,
                        [rows, in, out_dim, has_bias](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto g = as_mat(self.grad, rows, out_dim);
    if (px.requires_grad) as_mat(px.ensure_grad(), rows, in).noalias() += g * as_mat(pw.value, out_dim, in);
    if (pw.requires_grad) as_mat(pw.ensure_grad(), out_dim, in).noalias() += g.transpose() * as_mat(px.value, rows, in);
    if (has_bias && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += self.grad[r * out_dim + j];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat: no inputs");
  Shape lead = parts[0].shape();
  require(!lead.empty(), "concat: rank-0 input");
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    if (pl.empty()) mismatch("concat", parts[0].shape(), p.shape());
    widths.push_back(pl.back());
    total += pl.back();
    pl.pop_back();
    if (pl != lead) mismatch("concat", parts[0].shape(), p.shape());
  }
  const std::size_t rows = numel(lead);
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto d = parts[i].data();
    const std::size_t w = widths[i];
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(d.begin() + r * w, w, out.begin() + r * total + offset);
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_result<T>("concat", shape, std::move(out), parts, [rows, total, widths](NodeT<T>& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      auto& p = *self.parents[i];
      const std::size_t w = widths[i];
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * total + off + j];
      }
      off += w;
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require(x.rank() >= 1, "slice: rank-0 input");
  const std::size_t width = x.shape().back();
  require(begin <= end && end <= width, "slice: range [" + std::to_string(begin) + ", " +
                                            std::to_string(end) + ") out of bounds for shape " +
                                            shape_str(x.shape()));
  const std::size_t rows = leading(x.shape());
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(d.begin() + r * width + begin, w, out.begin() + r * w);
  Shape shape = x.shape();
  shape.back() = w;
  return make_result<T>("slice", shape, std::move(out), {x}, [rows, width, begin, w](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * width + begin + j] += self.grad[r * w + j];
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + (parts[0].rank() ? 1 : 0), parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.rank() == 0) mismatch("concat_rows", parts[0].shape(), p.shape());
    Shape pt(p.shape().begin() + 1, p.shape().end());
    if (pt != tail) mismatch("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
    sizes.push_back(p.size());
  }
  std::vector<T> out;
  out.reserve(rows * numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_result<T>("concat_rows", shape, std::move(out), parts, [sizes](NodeT<T>& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      auto& p = *self.parents[i];
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t j = 0; j < sizes[i]; ++j) g[j] += self.grad[off + j];
      }
      off += sizes[i];
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require(x.rank() >= 1, "slice_rows: rank-0 input");
  require(begin <= end && end <= x.dim(0), "slice_rows: range [" + std::to_string(begin) + ", " +
                                               std::to_string(end) + ") out of bounds for shape " +
                                               shape_str(x.shape()));
  const std::size_t width = x.dim(0) ? x.size() / x.dim(0) : 0;
  std::vector<T> out(x.data().begin() + begin * width, x.data().begin() + end * width);
  Shape shape = x.shape();
  shape[0] = end - begin;
  return make_result<T>("slice_rows", shape, std::move(out), {x}, [begin, width](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t j = 0; j < self.grad.size(); ++j) g[begin * width + j] += self.grad[j];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int> rows) {
  require(x.rank() >= 1, "gather_rows: rank-0 input");
  const std::size_t n = x.dim(0);
  const std::size_t width = n ? x.size() / n : 0;
  std::vector<int> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * width);
  auto d = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx[i]) + " out of range for shape " +
                                  shape_str(x.shape()));
    }
    std::copy_n(d.begin() + idx[i] * width, width, out.begin() + i * width);
  }
  Shape shape = x.shape();
  shape[0] = idx.size();
  return make_result<T>("gather_rows", shape, std::move(out), {x}, [idx = std::move(idx), width](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += self.grad[i * width + j];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) mismatch("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x},
                        [](NodeT<T>& self) { accumulate(*self.parents[0], self.grad); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = d[i];
    if (v >= 0) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>("sigmoid", x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i] * (T(1) - self.value[i]);
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(d[i]);
  return make_result<T>("tanh", x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] > 0 ? d[i] : T(0);
  return make_result<T>("relu", x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > 0) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  std::vector<T> out(x.size());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = d[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  return make_result<T>("gelu", x.shape(), std::move(out), {x}, [c, a](NodeT<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p.value[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      const T dt = (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      g[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  require(x.rank() >= 1 && x.shape().back() > 0, "softmax: empty last axis in shape " + shape_str(x.shape()));
  const std::size_t n = x.shape().back();
  const std::size_t rows = leading(x.shape());
  std::vector<T> out(x.size());
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = d.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [rows, n](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* gy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
  require(x.rank() >= 1 && x.shape().back() > 0, "l2_normalize: empty last axis in shape " + shape_str(x.shape()));
  const std::size_t n = x.shape().back();
  const std::size_t rows = leading(x.shape());
  std::vector<T> out(x.size());
  std::vector<T> norms(rows);
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += d[r * n + j] * d[r * n + j];
    norms[r] = std::sqrt(ss);
    const T inv = T(1) / std::max(norms[r], eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = d[r * n + j] * inv;
  }
  return make_result<T>("l2_normalize", x.shape(), std::move(out), {x},
                        [rows, n, eps, norms = std::move(norms)](NodeT<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xv = p.value.data() + r * n;
      const T* gy = self.grad.data() + r * n;
      const T nr = norms[r];
      const T denom = std::max(nr, eps);
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += xv[j] * gy[j];
      // Above eps: d/dx [x / |x|] = I/|x| - x x^T / |x|^3. Below: x / eps.
      const T coef = nr > eps ? dot / (nr * nr * nr) : T(0);
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += gy[j] / denom - xv[j] * coef;
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.rank() >= 1 && x.shape().back() > 0, "layer_norm: empty last axis in shape " + shape_str(x.shape()));
  const std::size_t n = x.shape().back();
  if (gamma.shape() != Shape{n}) mismatch("layer_norm(gamma)", x.shape(), gamma.shape());
  if (beta.shape() != Shape{n}) mismatch("layer_norm(beta)", x.shape(), beta.shape());
  const std::size_t rows = leading(x.shape());
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  auto d = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += d[r * n + j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (d[r * n + j] - mu) * (d[r * n + j] - mu);
    var /= T(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (d[r * n + j] - mu) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * gm[j] + bt[j];
    }
  }
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                        [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pg.requires_grad) {
      auto& gg = pg.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gg[j] += self.grad[r * n + j] * xhat[r * n + j];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[r * n + j];
    }
    if (!px.requires_grad) return;
    auto& gx = px.ensure_grad();
    std::vector<T> dxhat(n);
    for (std::size_t r = 0; r < rows; ++r) {
      T m1 = 0, m2 = 0;
      for (std::size_t j = 0; j < n; ++j) {
        dxhat[j] = self.grad[r * n + j] * pg.value[j];
        m1 += dxhat[j];
        m2 += dxhat[j] * xhat[r * n + j];
      }
      m1 /= T(n);
      m2 /= T(n);
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * n + j] * m2);
    }
  });
}

template <typename T>
Tensor<T> roll(const Tensor<T>& x, long shift) {
  require(x.rank() >= 1, "roll: rank-0 input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = leading(x.shape());
  std::vector<T> out(x.size());
  if (n == 0) return make_result<T>("roll", x.shape(), std::move(out), {x}, [](NodeT<T>&) {});
  const long ln = static_cast<long>(n);
  const std::size_t s = static_cast<std::size_t>(((shift % ln) + ln) % ln);
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < n; ++i) out[r * n + (i + s) % n] = d[r * n + i];
  return make_result<T>("roll", x.shape(), std::move(out), {x}, [rows, n, s](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < n; ++i) g[r * n + i] += self.grad[r * n + (i + s) % n];
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding: table must be [V, d], got " + shape_str(table.shape()));
  return gather_rows(table, ids);
}

template <typename T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                               std::span<const unsigned char> mask) {
  if (logits.rank() != 2) throw std::invalid_argument("masked_cross_entropy: logits must be [N, V], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  require(vocab > 0, "masked_cross_entropy: empty vocabulary axis");
  require(targets.size() == rows && mask.size() == rows,
          "masked_cross_entropy: " + std::to_string(rows) + " logit rows but " + std::to_string(targets.size()) +
              " targets and " + std::to_string(mask.size()) + " mask entries");
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<unsigned char> msk(mask.begin(), mask.end());
  std::size_t count = 0;
  T total = 0;
  auto d = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!msk[r]) continue;
    require(tgt[r] >= 0 && static_cast<std::size_t>(tgt[r]) < vocab,
            "masked_cross_entropy: target " + std::to_string(tgt[r]) + " outside vocabulary of " + std::to_string(vocab));
    const T* row = d.data() + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = 0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[tgt[r]];
    ++count;
  }
  const T loss = count ? total / T(count) : T(0);
  return make_result<T>("masked_cross_entropy", Shape{}, std::vector<T>{loss}, {logits},
                        [rows, vocab, count, tgt = std::move(tgt), msk = std::move(msk)](NodeT<T>& self) {
    if (!count) return;
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    const T coef = self.grad[0] / T(count);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!msk[r]) continue;
      const T* row = p.value.data() + r * vocab;
      const T mx = *std::max_element(row, row + vocab);
      T z = 0;
      for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
      for (std::size_t j = 0; j < vocab; ++j) {
        const T prob = std::exp(row[j] - mx) / z;
        g[r * vocab + j] += coef * (prob - (static_cast<int>(j) == tgt[r] ? T(1) : T(0)));
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto d = x.data();
  const T s = std::accumulate(d.begin(), d.end(), T(0));
  return make_result<T>("sum", Shape{}, std::vector<T>{s}, {x}, [](NodeT<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / T(x.size()));
}

#define NAMLAB_OPS(T)                                                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                                            \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> matvec(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> outer(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> transpose(const Tensor<T>&);                                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                                                 \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t);                                     \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                            \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                                \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const int>);                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                             \
  template Tensor<T> tanh(const Tensor<T>&);                                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                                \
  template Tensor<T> gelu(const Tensor<T>&);                                                                \
  template Tensor<T> softmax(const Tensor<T>&);                                                             \
  template Tensor<T> l2_normalize(const Tensor<T>&, T);                                                     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> roll(const Tensor<T>&, long);                                                          \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                                     \
  template Tensor<T> masked_cross_entropy(const Tensor<T>&, std::span<const int>,                           \
                                          std::span<const unsigned char>);                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                                 \
  template Tensor<T> mean(const Tensor<T>&);

NAMLAB_OPS(float)
NAMLAB_OPS(double)

}  // namespace namlab
