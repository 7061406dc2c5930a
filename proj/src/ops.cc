// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/ops.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "casnet/errors.h"

namespace casnet {

namespace {

using internal::MakeResult;
using internal::Node;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Vec = Eigen::VectorXd;

ConstMapMat AsMat(const std::vector<double>& v, int64_t rows, int64_t cols) {
  return ConstMapMat(v.data(), rows, cols);
}

MapMat AsMat(std::vector<double>& v, int64_t rows, int64_t cols) {
  return MapMat(v.data(), rows, cols);
}

// Adds the column sums of a row-major rows x cols block to out. A plain loop
// keeps the summation order fixed; Eigen's vectorized reductions peel by the
// runtime address and can differ in the last bit between allocations.
void AddColumnSums(const double* m, int64_t rows, int64_t cols, double* out) {
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
}

void CheckSameShape(const char* op, const Tensor& a, const Tensor& b) {
  CASNET_CHECK(a.shape() == b.shape(), op, ": shape mismatch ",
               ShapeToString(a.shape()), " vs ", ShapeToString(b.shape()));
}

void CheckRank(const char* op, const char* what, const Tensor& t, int rank) {
  CASNET_CHECK(t.defined(), op, ": ", what, " is undefined");
  CASNET_CHECK(t.ndim() == rank, op, ": ", what, " must have rank ", rank,
               ", got ", ShapeToString(t.shape()));
}

bool Wants(const Node& self, size_t i) {
  return i < self.inputs.size() && self.inputs[i] &&
         self.inputs[i]->requires_grad;
}

double SigmoidScalar(double x) {
  if (x >= 0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

template <typename Fn, typename Dfn>
Tensor Unary(const char* op, const Tensor& x, Fn fn, Dfn dfn) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = fn(v);
  return MakeResult(op, x.shape(), std::move(out), {x}, [dfn](Node& self) {
    const auto& in = self.inputs[0]->value;
    auto& g = self.inputs[0]->EnsureGrad();
    for (size_t i = 0; i < in.size(); ++i) {
      g[i] += self.grad[i] * dfn(in[i], self.value[i]);
    }
  });
}

// Row-wise standardization over contiguous rows of length `len`.
void NormalizeRows(const std::vector<double>& x, int64_t rows, int64_t len,
                   double eps, std::vector<double>& xhat,
                   std::vector<double>& inv_std) {
  xhat.resize(x.size());
  inv_std.resize(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * len;
    double mean = 0.0;
    for (int64_t t = 0; t < len; ++t) mean += row[t];
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (int64_t t = 0; t < len; ++t) {
      const double d = row[t] - mean;
      var += d * d;
    }
    var /= static_cast<double>(len);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    double* out = xhat.data() + r * len;
    for (int64_t t = 0; t < len; ++t) out[t] = (row[t] - mean) * is;
  }
}

// dx += inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)).
void NormalizeRowsBackward(const double* xhat, const double* dxhat,
                           double inv_std, int64_t len, int64_t stride,
                           double* dx) {
  double m1 = 0.0, m2 = 0.0;
  for (int64_t t = 0; t < len; ++t) {
    m1 += dxhat[t * stride];
    m2 += dxhat[t * stride] * xhat[t * stride];
  }
  m1 /= static_cast<double>(len);
  m2 /= static_cast<double>(len);
  for (int64_t t = 0; t < len; ++t) {
    dx[t * stride] += inv_std * (dxhat[t * stride] - m1 - xhat[t * stride] * m2);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Structural and elementwise

Tensor Add(const Tensor& a, const Tensor& b) {
  CheckSameShape("Add", a, b);
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return MakeResult("Add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (size_t k = 0; k < 2; ++k) {
      if (!Wants(self, k)) continue;
      auto& g = self.inputs[k]->EnsureGrad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  CheckSameShape("Sub", a, b);
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return MakeResult("Sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (Wants(self, 0)) {
      auto& g = self.inputs[0]->EnsureGrad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Wants(self, 1)) {
      auto& g = self.inputs[1]->EnsureGrad();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  CheckSameShape("Mul", a, b);
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return MakeResult("Mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (Wants(self, 0)) {
      auto& g = self.inputs[0]->EnsureGrad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (Wants(self, 1)) {
      auto& g = self.inputs[1]->EnsureGrad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor MulScalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return MakeResult("MulScalar", a.shape(), std::move(out), {a},
                    [s](Node& self) {
                      auto& g = self.inputs[0]->EnsureGrad();
                      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
                    });
}

Tensor AddScalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v += s;
  return MakeResult("AddScalar", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->EnsureGrad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor Sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return MakeResult("Sum", {1}, {total}, {a}, [](Node& self) {
    auto& g = self.inputs[0]->EnsureGrad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor Mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double total = 0.0;
  for (double v : a.data()) total += v;
  return MakeResult("Mean", {1}, {total / n}, {a}, [n](Node& self) {
    auto& g = self.inputs[0]->EnsureGrad();
    const double d = self.grad[0] / n;
    for (double& v : g) v += d;
  });
}

Tensor Reshape(const Tensor& a, Shape shape) {
  CASNET_CHECK(NumElements(shape) == a.numel(), "Reshape: cannot view ",
               ShapeToString(a.shape()), " as ", ShapeToString(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return MakeResult("Reshape", std::move(shape), std::move(out), {a},
                    [](Node& self) {
                      auto& g = self.inputs[0]->EnsureGrad();
                      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                    });
}

Tensor Permute(const Tensor& a, const std::vector<int>& perm) {
  const int n = a.ndim();
  CASNET_CHECK(static_cast<int>(perm.size()) == n, "Permute: perm rank ",
               perm.size(), " vs tensor ", ShapeToString(a.shape()));
  std::vector<bool> seen(n, false);
  for (int p : perm) {
    CASNET_CHECK(p >= 0 && p < n && !seen[p], "Permute: invalid permutation");
    seen[p] = true;
  }
  const Shape& in_shape = a.shape();
  std::vector<int64_t> in_strides(n, 1);
  for (int i = n - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(n);
  std::vector<int64_t> src_stride(n);
  for (int i = 0; i < n; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  // src_index[k] = input flat index of output flat index k.
  auto index = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(a.numel()));
  std::vector<int64_t> counter(n, 0);
  int64_t src = 0;
  for (int64_t k = 0; k < a.numel(); ++k) {
    (*index)[k] = src;
    for (int i = n - 1; i >= 0; --i) {
      if (++counter[i] < out_shape[i]) {
        src += src_stride[i];
        break;
      }
      src -= src_stride[i] * (out_shape[i] - 1);
      counter[i] = 0;
    }
  }
  std::vector<double> out(static_cast<size_t>(a.numel()));
  const auto ad = a.data();
  for (size_t k = 0; k < out.size(); ++k) out[k] = ad[(*index)[k]];
  return MakeResult("Permute", std::move(out_shape), std::move(out), {a},
                    [index](Node& self) {
                      auto& g = self.inputs[0]->EnsureGrad();
                      for (size_t k = 0; k < self.grad.size(); ++k) {
                        g[(*index)[k]] += self.grad[k];
                      }
                    });
}

Tensor ConcatLast(const Tensor& a, const Tensor& b) {
  CASNET_CHECK(a.ndim() == b.ndim() && a.ndim() >= 1,
               "ConcatLast: rank mismatch ", ShapeToString(a.shape()), " vs ",
               ShapeToString(b.shape()));
  for (int i = 0; i + 1 < a.ndim(); ++i) {
    CASNET_CHECK(a.dim(i) == b.dim(i), "ConcatLast: leading extents differ ",
                 ShapeToString(a.shape()), " vs ", ShapeToString(b.shape()));
  }
  const int64_t la = a.dim(-1), lb = b.dim(-1);
  const int64_t rows = a.numel() / la;
  Shape shape = a.shape();
  shape.back() = la + lb;
  std::vector<double> out(static_cast<size_t>(rows * (la + lb)));
  const auto ad = a.data();
  const auto bd = b.data();
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(ad.begin() + r * la, la, out.begin() + r * (la + lb));
    std::copy_n(bd.begin() + r * lb, lb, out.begin() + r * (la + lb) + la);
  }
  return MakeResult("ConcatLast", std::move(shape), std::move(out), {a, b},
                    [rows, la, lb](Node& self) {
                      for (size_t k = 0; k < 2; ++k) {
                        if (!Wants(self, k)) continue;
                        auto& g = self.inputs[k]->EnsureGrad();
                        const int64_t width = k == 0 ? la : lb;
                        const int64_t offset = k == 0 ? 0 : la;
                        for (int64_t r = 0; r < rows; ++r) {
                          for (int64_t j = 0; j < width; ++j) {
                            g[r * width + j] += self.grad[r * (la + lb) + offset + j];
                          }
                        }
                      }
                    });
}

Tensor ResizeLast(const Tensor& a, int64_t length) {
  CASNET_CHECK(length > 0, "ResizeLast: length must be positive");
  const int64_t old_len = a.dim(-1);
  const int64_t rows = a.numel() / old_len;
  const int64_t keep = std::min(old_len, length);
  Shape shape = a.shape();
  shape.back() = length;
  std::vector<double> out(static_cast<size_t>(rows * length), 0.0);
  const auto ad = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(ad.begin() + r * old_len, keep, out.begin() + r * length);
  }
  return MakeResult("ResizeLast", std::move(shape), std::move(out), {a},
                    [rows, old_len, length, keep](Node& self) {
                      auto& g = self.inputs[0]->EnsureGrad();
                      for (int64_t r = 0; r < rows; ++r) {
                        for (int64_t j = 0; j < keep; ++j) {
                          g[r * old_len + j] += self.grad[r * length + j];
                        }
                      }
                    });
}

Tensor Pick(const Tensor& a, std::vector<int64_t> flat_indices) {
  CASNET_CHECK(!flat_indices.empty(), "Pick: no indices");
  std::vector<double> out(flat_indices.size());
  const auto ad = a.data();
  for (size_t i = 0; i < flat_indices.size(); ++i) {
    CASNET_CHECK(flat_indices[i] >= 0 && flat_indices[i] < a.numel(),
                 "Pick: index ", flat_indices[i], " out of range for ",
                 ShapeToString(a.shape()));
    out[i] = ad[flat_indices[i]];
  }
  const int64_t n = static_cast<int64_t>(out.size());
  return MakeResult("Pick", {n}, std::move(out), {a},
                    [idx = std::move(flat_indices)](Node& self) {
                      auto& g = self.inputs[0]->EnsureGrad();
                      for (size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
                    });
}

// ---------------------------------------------------------------------------
// Activations

Tensor Relu(const Tensor& x) {
  return Unary(
      "Relu", x, [](double v) { return v < 0.0 ? 0.0 : v + 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor Sigmoid(const Tensor& x) {
  return Unary(
      "Sigmoid", x, SigmoidScalar,
      [](double, double out) { return out * (1.0 - out); });
}

Tensor Tanh(const Tensor& x) {
  return Unary(
      "Tanh", x, [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Tensor PRelu(const Tensor& x, const Tensor& slope) {
  CASNET_CHECK(x.ndim() >= 2, "PRelu: input must be [batch, channels, ...], got ",
               ShapeToString(x.shape()));
  CheckRank("PRelu", "slope", slope, 1);
  const int64_t channels = x.dim(1);
  const int64_t ns = slope.dim(0);
  CASNET_CHECK(ns == 1 || ns == channels, "PRelu: slope ",
               ShapeToString(slope.shape()), " does not match channels of ",
               ShapeToString(x.shape()));
  const int64_t inner = x.numel() / (x.dim(0) * channels);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto sd = slope.data();
  for (size_t i = 0; i < out.size(); ++i) {
    const int64_t c = (static_cast<int64_t>(i) / inner) % channels;
    if (out[i] <= 0.0) out[i] *= sd[ns == 1 ? 0 : c];
  }
  return MakeResult(
      "PRelu", x.shape(), std::move(out), {x, slope},
      [channels, inner, ns](Node& self) {
        const auto& in = self.inputs[0]->value;
        const auto& sv = self.inputs[1]->value;
        const bool want_x = Wants(self, 0), want_s = Wants(self, 1);
        std::vector<double>* gx = want_x ? &self.inputs[0]->EnsureGrad() : nullptr;
        std::vector<double>* gs = want_s ? &self.inputs[1]->EnsureGrad() : nullptr;
        for (size_t i = 0; i < in.size(); ++i) {
          const int64_t c = ns == 1 ? 0 : (static_cast<int64_t>(i) / inner) % channels;
          if (in[i] > 0.0) {
            if (gx) (*gx)[i] += self.grad[i];
          } else {
            if (gx) (*gx)[i] += self.grad[i] * sv[c];
            if (gs) (*gs)[c] += self.grad[i] * in[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions and affine maps

namespace {

// cols[(ci * K + k), b * Tout + t] = x[b, ci, t * stride + k - padding].
void Im2Col(const double* x, int64_t batch, int64_t cin, int64_t time,
            int64_t k, int64_t stride, int64_t padding, int64_t tout,
            std::vector<double>& cols) {
  const int64_t ncols = batch * tout;
  cols.assign(static_cast<size_t>(cin * k * ncols), 0.0);
  for (int64_t ci = 0; ci < cin; ++ci) {
    for (int64_t kk = 0; kk < k; ++kk) {
      double* row = cols.data() + (ci * k + kk) * ncols;
      for (int64_t b = 0; b < batch; ++b) {
        const double* src = x + (b * cin + ci) * time;
        for (int64_t t = 0; t < tout; ++t) {
          const int64_t pos = t * stride + kk - padding;
          if (pos >= 0 && pos < time) row[b * tout + t] = src[pos];
        }
      }
    }
  }
}

void Col2Im(const double* cols, int64_t batch, int64_t cin, int64_t time,
            int64_t k, int64_t stride, int64_t padding, int64_t tout,
            double* x) {
  const int64_t ncols = batch * tout;
  for (int64_t ci = 0; ci < cin; ++ci) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* row = cols + (ci * k + kk) * ncols;
      for (int64_t b = 0; b < batch; ++b) {
        double* dst = x + (b * cin + ci) * time;
        for (int64_t t = 0; t < tout; ++t) {
          const int64_t pos = t * stride + kk - padding;
          if (pos >= 0 && pos < time) dst[pos] += row[b * tout + t];
        }
      }
    }
  }
}

}  // namespace

Tensor Conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  CheckRank("Conv1d", "input", input, 3);
  CheckRank("Conv1d", "kernel", kernel, 3);
  CASNET_CHECK(stride >= 1 && padding >= 0, "Conv1d: stride must be >= 1 and "
               "padding >= 0");
  const int64_t batch = input.dim(0), cin = input.dim(1), time = input.dim(2);
  const int64_t cout = kernel.dim(0), k = kernel.dim(2);
  CASNET_CHECK(kernel.dim(1) == cin, "Conv1d: input ", ShapeToString(input.shape()),
               " has ", cin, " channels but kernel ", ShapeToString(kernel.shape()),
               " expects ", kernel.dim(1));
  CASNET_CHECK(k <= time + 2 * padding, "Conv1d: kernel length ", k,
               " exceeds padded input length ", time + 2 * padding, " (input ",
               ShapeToString(input.shape()), ")");
  if (bias.defined()) {
    CASNET_CHECK(bias.ndim() == 1 && bias.dim(0) == cout, "Conv1d: bias ",
                 ShapeToString(bias.shape()), " does not match kernel ",
                 ShapeToString(kernel.shape()));
  }
  const int64_t tout = (time + 2 * padding - k) / stride + 1;
  const int64_t ncols = batch * tout;
  std::vector<double> cols;
  Im2Col(input.data().data(), batch, cin, time, k, stride, padding, tout, cols);
  std::vector<double> kv(kernel.data().begin(), kernel.data().end());
  RowMat prod = AsMat(kv, cout, cin * k) * AsMat(cols, cin * k, ncols);
  std::vector<double> out(static_cast<size_t>(batch * cout * tout));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t co = 0; co < cout; ++co) {
      const double bv = bias.defined() ? bias.data()[co] : 0.0;
      for (int64_t t = 0; t < tout; ++t) {
        out[(b * cout + co) * tout + t] = prod(co, b * tout + t) + bv;
      }
    }
  }
  std::vector<Tensor> inputs = {input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return MakeResult(
      "Conv1d", {batch, cout, tout}, std::move(out), inputs,
      [=](Node& self) {
        RowMat dout(cout, ncols);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t co = 0; co < cout; ++co) {
            for (int64_t t = 0; t < tout; ++t) {
              dout(co, b * tout + t) = self.grad[(b * cout + co) * tout + t];
            }
          }
        }
        const auto& xv = self.inputs[0]->value;
        const auto& wv = self.inputs[1]->value;
        if (Wants(self, 1)) {
          std::vector<double> c;
          Im2Col(xv.data(), batch, cin, time, k, stride, padding, tout, c);
          auto& g = self.inputs[1]->EnsureGrad();
          AsMat(g, cout, cin * k).noalias() += dout * AsMat(c, cin * k, ncols).transpose();
        }
        if (Wants(self, 0)) {
          RowMat dcols = AsMat(wv, cout, cin * k).transpose() * dout;
          auto& g = self.inputs[0]->EnsureGrad();
          Col2Im(dcols.data(), batch, cin, time, k, stride, padding, tout, g.data());
        }
        if (Wants(self, 2)) {
          auto& g = self.inputs[2]->EnsureGrad();
          for (int64_t co = 0; co < cout; ++co) g[co] += dout.row(co).sum();
        }
      });
}

Tensor ConvTranspose1d(const Tensor& input, const Tensor& kernel, int stride) {
  CheckRank("ConvTranspose1d", "input", input, 3);
  CheckRank("ConvTranspose1d", "kernel", kernel, 3);
  CASNET_CHECK(stride >= 1, "ConvTranspose1d: stride must be >= 1");
  const int64_t batch = input.dim(0), cin = input.dim(1), frames = input.dim(2);
  const int64_t cout = kernel.dim(1), k = kernel.dim(2);
  CASNET_CHECK(kernel.dim(0) == cin, "ConvTranspose1d: input ",
               ShapeToString(input.shape()), " has ", cin,
               " channels but kernel ", ShapeToString(kernel.shape()),
               " expects ", kernel.dim(0));
  const int64_t time = (frames - 1) * stride + k;
  const int64_t ncols = batch * frames;
  // X as [cin, batch * frames].
  RowMat xm(cin, ncols);
  const auto xd = input.data();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t ci = 0; ci < cin; ++ci) {
      for (int64_t f = 0; f < frames; ++f) {
        xm(ci, b * frames + f) = xd[(b * cin + ci) * frames + f];
      }
    }
  }
  std::vector<double> kv(kernel.data().begin(), kernel.data().end());
  RowMat cols = AsMat(kv, cin, cout * k).transpose() * xm;
  std::vector<double> out(static_cast<size_t>(batch * cout * time), 0.0);
  // Output positions f * stride + kk play the role of conv inputs.
  Col2Im(cols.data(), batch, cout, time, k, stride, 0, frames, out.data());
  return MakeResult(
      "ConvTranspose1d", {batch, cout, time}, std::move(out), {input, kernel},
      [=, xm = std::make_shared<RowMat>(std::move(xm))](Node& self) {
        std::vector<double> dcols;
        Im2Col(self.grad.data(), batch, cout, time, k, stride, 0, frames, dcols);
        auto dc = AsMat(dcols, cout * k, ncols);
        const auto& wv = self.inputs[1]->value;
        if (Wants(self, 0)) {
          RowMat dx = AsMat(wv, cin, cout * k) * dc;
          auto& g = self.inputs[0]->EnsureGrad();
          for (int64_t b = 0; b < batch; ++b) {
            for (int64_t ci = 0; ci < cin; ++ci) {
              for (int64_t f = 0; f < frames; ++f) {
                g[(b * cin + ci) * frames + f] += dx(ci, b * frames + f);
              }
            }
          }
        }
        if (Wants(self, 1)) {
          auto& g = self.inputs[1]->EnsureGrad();
          AsMat(g, cin, cout * k).noalias() += (*xm) * dc.transpose();
        }
      });
}

Tensor Linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  CheckRank("Linear", "weight", weight, 2);
  CASNET_CHECK(input.defined() && input.ndim() >= 1, "Linear: undefined input");
  const int64_t in_dim = weight.dim(1), out_dim = weight.dim(0);
  CASNET_CHECK(input.dim(-1) == in_dim, "Linear: input ",
               ShapeToString(input.shape()), " has trailing extent ",
               input.dim(-1), " but weight ", ShapeToString(weight.shape()),
               " expects ", in_dim);
  if (bias.defined()) {
    CASNET_CHECK(bias.ndim() == 1 && bias.dim(0) == out_dim, "Linear: bias ",
                 ShapeToString(bias.shape()), " does not match weight ",
                 ShapeToString(weight.shape()));
  }
  const int64_t rows = input.numel() / in_dim;
  Shape shape = input.shape();
  shape.back() = out_dim;
  std::vector<double> out(static_cast<size_t>(rows * out_dim));
  {
    ConstMapMat x(input.data().data(), rows, in_dim);
    ConstMapMat w(weight.data().data(), out_dim, in_dim);
    MapMat y(out.data(), rows, out_dim);
    y.noalias() = x * w.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data(), out_dim);
      y.rowwise() += bv;
    }
  }
  std::vector<Tensor> inputs = {input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return MakeResult("Linear", std::move(shape), std::move(out), inputs,
                    [rows, in_dim, out_dim](Node& self) {
                      ConstMapMat dy(self.grad.data(), rows, out_dim);
                      if (Wants(self, 0)) {
                        auto& g = self.inputs[0]->EnsureGrad();
                        AsMat(g, rows, in_dim).noalias() +=
                            dy * AsMat(self.inputs[1]->value, out_dim, in_dim);
                      }
                      if (Wants(self, 1)) {
                        auto& g = self.inputs[1]->EnsureGrad();
                        AsMat(g, out_dim, in_dim).noalias() +=
                            dy.transpose() * AsMat(self.inputs[0]->value, rows, in_dim);
                      }
                      if (Wants(self, 2)) {
                        auto& g = self.inputs[2]->EnsureGrad();
                        AddColumnSums(self.grad.data(), rows, out_dim, g.data());
                      }
                    });
}

// ---------------------------------------------------------------------------
// Normalization and pooling

Tensor BatchNorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, NormMode mode) {
  CheckRank("BatchNorm1d", "input", x, 3);
  const int64_t batch = x.dim(0), ch = x.dim(1), time = x.dim(2);
  CASNET_CHECK(gamma.numel() == ch && beta.numel() == ch,
               "BatchNorm1d: affine parameters ", ShapeToString(gamma.shape()),
               "/", ShapeToString(beta.shape()), " do not match input ",
               ShapeToString(x.shape()));
  CASNET_CHECK(state.running_mean.defined() && state.running_mean.numel() == ch &&
                   state.running_var.defined() && state.running_var.numel() == ch,
               "BatchNorm1d: running statistics do not match ", ch, " channels");
  const int64_t n = batch * time;
  const bool train = mode == NormMode::kTrain;
  CASNET_CHECK(!train || n >= 2,
               "BatchNorm1d: train mode needs at least two elements per "
               "channel, input is ", ShapeToString(x.shape()));
  const auto xd = x.data();
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(ch));
  std::vector<double> out(xd.size());
  auto rm = state.running_mean.mutable_data();
  auto rv = state.running_var.mutable_data();
  for (int64_t c = 0; c < ch; ++c) {
    double mean, var;
    if (train) {
      mean = 0.0;
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t t = 0; t < time; ++t) mean += xd[(b * ch + c) * time + t];
      mean /= static_cast<double>(n);
      var = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t t = 0; t < time; ++t) {
          const double d = xd[(b * ch + c) * time + t] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(n);
      rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * mean;
      rv[c] = (1.0 - state.momentum) * rv[c] +
              state.momentum * var * static_cast<double>(n) / static_cast<double>(n - 1);
    } else {
      mean = rm[c];
      var = rv[c];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[c] = is;
    const double gm = gamma.data()[c], bt = beta.data()[c];
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t t = 0; t < time; ++t) {
        const int64_t i = (b * ch + c) * time + t;
        (*xhat)[i] = (xd[i] - mean) * is;
        out[i] = gm * (*xhat)[i] + bt;
      }
    }
  }
  return MakeResult(
      "BatchNorm1d", x.shape(), std::move(out), {x, gamma, beta},
      [=](Node& self) {
        const auto& gm = self.inputs[1]->value;
        std::vector<double> dxhat(self.grad.size());
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t c = 0; c < ch; ++c)
            for (int64_t t = 0; t < time; ++t) {
              const int64_t i = (b * ch + c) * time + t;
              dxhat[i] = self.grad[i] * gm[c];
            }
        if (Wants(self, 1) || Wants(self, 2)) {
          std::vector<double> dg(ch, 0.0), db(ch, 0.0);
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t c = 0; c < ch; ++c)
              for (int64_t t = 0; t < time; ++t) {
                const int64_t i = (b * ch + c) * time + t;
                dg[c] += self.grad[i] * (*xhat)[i];
                db[c] += self.grad[i];
              }
          if (Wants(self, 1)) {
            auto& g = self.inputs[1]->EnsureGrad();
            for (int64_t c = 0; c < ch; ++c) g[c] += dg[c];
          }
          if (Wants(self, 2)) {
            auto& g = self.inputs[2]->EnsureGrad();
            for (int64_t c = 0; c < ch; ++c) g[c] += db[c];
          }
        }
        if (!Wants(self, 0)) return;
        auto& gx = self.inputs[0]->EnsureGrad();
        for (int64_t c = 0; c < ch; ++c) {
          const double is = (*inv_std)[c];
          if (!train) {
            for (int64_t b = 0; b < batch; ++b)
              for (int64_t t = 0; t < time; ++t) {
                const int64_t i = (b * ch + c) * time + t;
                gx[i] += dxhat[i] * is;
              }
            continue;
          }
          double m1 = 0.0, m2 = 0.0;
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t t = 0; t < time; ++t) {
              const int64_t i = (b * ch + c) * time + t;
              m1 += dxhat[i];
              m2 += dxhat[i] * (*xhat)[i];
            }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t t = 0; t < time; ++t) {
              const int64_t i = (b * ch + c) * time + t;
              gx[i] += is * (dxhat[i] - m1 - (*xhat)[i] * m2);
            }
        }
      });
}

Tensor InstanceNorm(const Tensor& x, double eps) {
  CheckRank("InstanceNorm", "input", x, 3);
  const int64_t time = x.dim(2);
  CASNET_CHECK(time >= 2, "InstanceNorm: need at least two time steps, input is ",
               ShapeToString(x.shape()));
  const int64_t rows = x.dim(0) * x.dim(1);
  std::vector<double> in(x.data().begin(), x.data().end());
  std::vector<double> xhat;
  auto inv_std = std::make_shared<std::vector<double>>();
  NormalizeRows(in, rows, time, eps, xhat, *inv_std);
  return MakeResult("InstanceNorm", x.shape(), xhat, {x},
                    [rows, time, inv_std](Node& self) {
                      auto& g = self.inputs[0]->EnsureGrad();
                      for (int64_t r = 0; r < rows; ++r) {
                        NormalizeRowsBackward(self.value.data() + r * time,
                                              self.grad.data() + r * time,
                                              (*inv_std)[r], time, 1,
                                              g.data() + r * time);
                      }
                    });
}

Tensor LayerNorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps) {
  const int64_t len = x.dim(-1);
  CASNET_CHECK(gamma.numel() == len && beta.numel() == len, "LayerNorm: gamma ",
               ShapeToString(gamma.shape()), " / beta ",
               ShapeToString(beta.shape()), " do not match input ",
               ShapeToString(x.shape()));
  const int64_t rows = x.numel() / len;
  std::vector<double> in(x.data().begin(), x.data().end());
  auto xhat = std::make_shared<std::vector<double>>();
  auto inv_std = std::make_shared<std::vector<double>>();
  NormalizeRows(in, rows, len, eps, *xhat, *inv_std);
  std::vector<double> out(xhat->size());
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < len; ++j)
      out[r * len + j] = (*xhat)[r * len + j] * gd[j] + bd[j];
  return MakeResult(
      "LayerNorm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, len, xhat, inv_std](Node& self) {
        const auto& gm = self.inputs[1]->value;
        if (Wants(self, 1)) {
          auto& g = self.inputs[1]->EnsureGrad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < len; ++j)
              g[j] += self.grad[r * len + j] * (*xhat)[r * len + j];
        }
        if (Wants(self, 2)) {
          auto& g = self.inputs[2]->EnsureGrad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < len; ++j) g[j] += self.grad[r * len + j];
        }
        if (Wants(self, 0)) {
          auto& g = self.inputs[0]->EnsureGrad();
          std::vector<double> dxhat(static_cast<size_t>(len));
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < len; ++j) dxhat[j] = self.grad[r * len + j] * gm[j];
            NormalizeRowsBackward(xhat->data() + r * len, dxhat.data(),
                                  (*inv_std)[r], len, 1, g.data() + r * len);
          }
        }
      });
}

Tensor AvgPoolTime(const Tensor& x) {
  CheckRank("AvgPoolTime", "input", x, 3);
  const int64_t rows = x.dim(0) * x.dim(1), time = x.dim(2);
  std::vector<double> out(static_cast<size_t>(rows));
  const auto xd = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t t = 0; t < time; ++t) s += xd[r * time + t];
    out[r] = s / static_cast<double>(time);
  }
  return MakeResult("AvgPoolTime", {x.dim(0), x.dim(1)}, std::move(out), {x},
                    [rows, time](Node& self) {
                      auto& g = self.inputs[0]->EnsureGrad();
                      const double inv = 1.0 / static_cast<double>(time);
                      for (int64_t r = 0; r < rows; ++r)
                        for (int64_t t = 0; t < time; ++t)
                          g[r * time + t] += self.grad[r] * inv;
                    });
}

Tensor ChannelAffine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
  CheckRank("ChannelAffine", "input", x, 3);
  const Shape bc = {x.dim(0), x.dim(1)};
  CASNET_CHECK(scale.shape() == bc, "ChannelAffine: scale ",
               ShapeToString(scale.shape()), " must be ", ShapeToString(bc),
               " for input ", ShapeToString(x.shape()));
  if (shift.defined()) {
    CASNET_CHECK(shift.shape() == bc, "ChannelAffine: shift ",
                 ShapeToString(shift.shape()), " must be ", ShapeToString(bc));
  }
  const int64_t rows = bc[0] * bc[1], time = x.dim(2);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int64_t r = 0; r < rows; ++r) {
    const double s = scale.data()[r];
    const double h = shift.defined() ? shift.data()[r] : 0.0;
    for (int64_t t = 0; t < time; ++t) out[r * time + t] = out[r * time + t] * s + h;
  }
  std::vector<Tensor> inputs = {x, scale};
  if (shift.defined()) inputs.push_back(shift);
  return MakeResult("ChannelAffine", x.shape(), std::move(out), inputs,
                    [rows, time](Node& self) {
                      const auto& xv = self.inputs[0]->value;
                      const auto& sv = self.inputs[1]->value;
                      std::vector<double>* gx = Wants(self, 0) ? &self.inputs[0]->EnsureGrad() : nullptr;
                      std::vector<double>* gs = Wants(self, 1) ? &self.inputs[1]->EnsureGrad() : nullptr;
                      std::vector<double>* gh = Wants(self, 2) ? &self.inputs[2]->EnsureGrad() : nullptr;
                      for (int64_t r = 0; r < rows; ++r) {
                        double ds = 0.0, dh = 0.0;
                        for (int64_t t = 0; t < time; ++t) {
                          const double d = self.grad[r * time + t];
                          if (gx) (*gx)[r * time + t] += d * sv[r];
                          ds += d * xv[r * time + t];
                          dh += d;
                        }
                        if (gs) (*gs)[r] += ds;
                        if (gh) (*gh)[r] += dh;
                      }
                    });
}

Tensor AttentionPool(const Tensor& x, const Tensor& scores) {
  CheckRank("AttentionPool", "input", x, 3);
  const int64_t m = x.dim(0), ch = x.dim(1), time = x.dim(2);
  CASNET_CHECK(scores.shape() == Shape({m, time}), "AttentionPool: scores ",
               ShapeToString(scores.shape()), " must be [", m, ", ", time,
               "] for input ", ShapeToString(x.shape()));
  const auto xd = x.data();
  const auto sd = scores.data();
  auto weights = std::make_shared<std::vector<double>>(sd.size());
  auto totals = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
  std::vector<double> out(static_cast<size_t>(m * ch), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    double total = 0.0;
    for (int64_t t = 0; t < time; ++t) {
      if (!std::isfinite(sd[i * time + t])) throw NumericError("AttentionPool: non-finite score");
      CASNET_CHECK(sd[i * time + t] > 0.0, "AttentionPool: scores must be positive");
      total += sd[i * time + t];
    }
    (*totals)[i] = total;
    for (int64_t t = 0; t < time; ++t) (*weights)[i * time + t] = sd[i * time + t] / total;
    for (int64_t c = 0; c < ch; ++c) {
      double acc = 0.0;
      for (int64_t t = 0; t < time; ++t)
        acc += (*weights)[i * time + t] * xd[(i * ch + c) * time + t];
      out[i * ch + c] = acc;
    }
  }
  return MakeResult(
      "AttentionPool", {m, ch}, std::move(out), {x, scores},
      [m, ch, time, weights, totals](Node& self) {
        const auto& xv = self.inputs[0]->value;
        if (Wants(self, 0)) {
          auto& g = self.inputs[0]->EnsureGrad();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t c = 0; c < ch; ++c)
              for (int64_t t = 0; t < time; ++t)
                g[(i * ch + c) * time + t] += self.grad[i * ch + c] * (*weights)[i * time + t];
        }
        if (Wants(self, 1)) {
          auto& g = self.inputs[1]->EnsureGrad();
          std::vector<double> da(static_cast<size_t>(time));
          for (int64_t i = 0; i < m; ++i) {
            double weighted = 0.0;
            for (int64_t t = 0; t < time; ++t) {
              double acc = 0.0;
              for (int64_t c = 0; c < ch; ++c)
                acc += self.grad[i * ch + c] * xv[(i * ch + c) * time + t];
              da[t] = acc;
              weighted += (*weights)[i * time + t] * acc;
            }
            for (int64_t t = 0; t < time; ++t)
              g[i * time + t] += (da[t] - weighted) / (*totals)[i];
          }
        }
      });
}

Tensor ApplyMasks(const Tensor& masks, const Tensor& features) {
  CheckRank("ApplyMasks", "masks", masks, 4);
  CheckRank("ApplyMasks", "features", features, 3);
  const int64_t batch = masks.dim(0), n = masks.dim(1);
  const int64_t inner = masks.dim(2) * masks.dim(3);
  CASNET_CHECK(features.dim(0) == batch && features.dim(1) == masks.dim(2) &&
                   features.dim(2) == masks.dim(3),
               "ApplyMasks: masks ", ShapeToString(masks.shape()),
               " do not match features ", ShapeToString(features.shape()));
  std::vector<double> out(masks.data().begin(), masks.data().end());
  const auto fd = features.data();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t s = 0; s < n; ++s)
      for (int64_t j = 0; j < inner; ++j) out[(b * n + s) * inner + j] *= fd[b * inner + j];
  return MakeResult("ApplyMasks", masks.shape(), std::move(out), {masks, features},
                    [batch, n, inner](Node& self) {
                      const auto& mv = self.inputs[0]->value;
                      const auto& fv = self.inputs[1]->value;
                      std::vector<double>* gm = Wants(self, 0) ? &self.inputs[0]->EnsureGrad() : nullptr;
                      std::vector<double>* gf = Wants(self, 1) ? &self.inputs[1]->EnsureGrad() : nullptr;
                      for (int64_t b = 0; b < batch; ++b)
                        for (int64_t s = 0; s < n; ++s)
                          for (int64_t j = 0; j < inner; ++j) {
                            const int64_t i = (b * n + s) * inner + j;
                            if (gm) (*gm)[i] += self.grad[i] * fv[b * inner + j];
                            if (gf) (*gf)[b * inner + j] += self.grad[i] * mv[i];
                          }
                    });
}

// ---------------------------------------------------------------------------
// Recurrent layers

Tensor Lstm(const Tensor& input, const LstmWeights& w, bool reverse) {
  CheckRank("Lstm", "input", input, 3);
  CheckRank("Lstm", "w_ih", w.w_ih, 2);
  CheckRank("Lstm", "w_hh", w.w_hh, 2);
  CheckRank("Lstm", "bias", w.bias, 1);
  const int64_t batch = input.dim(0), steps = input.dim(1), din = input.dim(2);
  const int64_t hidden = w.w_hh.dim(1), gates = 4 * hidden;
  CASNET_CHECK(w.w_hh.dim(0) == gates && w.w_ih.dim(0) == gates &&
                   w.bias.dim(0) == gates,
               "Lstm: inconsistent weights w_ih ", ShapeToString(w.w_ih.shape()),
               " w_hh ", ShapeToString(w.w_hh.shape()), " bias ",
               ShapeToString(w.bias.shape()));
  CASNET_CHECK(w.w_ih.dim(1) == din, "Lstm: input ", ShapeToString(input.shape()),
               " has feature size ", din, " but w_ih ",
               ShapeToString(w.w_ih.shape()), " expects ", w.w_ih.dim(1));

  ConstMapMat x(input.data().data(), batch * steps, din);
  ConstMapMat wih(w.w_ih.data().data(), gates, din);
  ConstMapMat whh(w.w_hh.data().data(), gates, hidden);
  Eigen::Map<const Eigen::RowVectorXd> bias(w.bias.data().data(), gates);
  RowMat xw = x * wih.transpose();
  xw.rowwise() += bias;

  // Per step (in processing order): activated gates [B, 4H], cell [B, H].
  struct Cache {
    std::vector<RowMat> act;
    std::vector<RowMat> cell;
    std::vector<RowMat> hid;
  };
  auto cache = std::make_shared<Cache>();
  cache->act.resize(steps);
  cache->cell.resize(steps);
  cache->hid.resize(steps);
  std::vector<double> out(static_cast<size_t>(batch * steps * hidden));
  RowMat h = RowMat::Zero(batch, hidden), c = RowMat::Zero(batch, hidden);
  for (int64_t s = 0; s < steps; ++s) {
    const int64_t t = reverse ? steps - 1 - s : s;
    RowMat z(batch, gates);
    for (int64_t b = 0; b < batch; ++b) z.row(b) = xw.row(b * steps + t);
    z.noalias() += h * whh.transpose();
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t j = 0; j < hidden; ++j) {
        z(b, j) = SigmoidScalar(z(b, j));
        z(b, hidden + j) = SigmoidScalar(z(b, hidden + j));
        z(b, 2 * hidden + j) = std::tanh(z(b, 2 * hidden + j));
        z(b, 3 * hidden + j) = SigmoidScalar(z(b, 3 * hidden + j));
        c(b, j) = z(b, hidden + j) * c(b, j) + z(b, j) * z(b, 2 * hidden + j);
        h(b, j) = z(b, 3 * hidden + j) * std::tanh(c(b, j));
        out[(b * steps + t) * hidden + j] = h(b, j);
      }
    }
    cache->act[s] = std::move(z);
    cache->cell[s] = c;
    cache->hid[s] = h;
  }

  return MakeResult(
      "Lstm", {batch, steps, hidden}, std::move(out), {input, w.w_ih, w.w_hh, w.bias},
      [=](Node& self) {
        RowMat dz_all(batch * steps, gates);
        RowMat dh_next = RowMat::Zero(batch, hidden);
        RowMat dc_next = RowMat::Zero(batch, hidden);
        ConstMapMat whh_m(self.inputs[2]->value.data(), gates, hidden);
        RowMat dwhh = RowMat::Zero(gates, hidden);
        RowMat dz(batch, gates);
        for (int64_t s = steps - 1; s >= 0; --s) {
          const int64_t t = reverse ? steps - 1 - s : s;
          const RowMat& a = cache->act[s];
          const RowMat& cell = cache->cell[s];
          for (int64_t b = 0; b < batch; ++b) {
            for (int64_t j = 0; j < hidden; ++j) {
              const double ig = a(b, j), fg = a(b, hidden + j);
              const double gg = a(b, 2 * hidden + j), og = a(b, 3 * hidden + j);
              const double tc = std::tanh(cell(b, j));
              const double c_prev = s > 0 ? cache->cell[s - 1](b, j) : 0.0;
              const double dh = self.grad[(b * steps + t) * hidden + j] + dh_next(b, j);
              const double dc = dh * og * (1.0 - tc * tc) + dc_next(b, j);
              dz(b, j) = dc * gg * ig * (1.0 - ig);
              dz(b, hidden + j) = dc * c_prev * fg * (1.0 - fg);
              dz(b, 2 * hidden + j) = dc * ig * (1.0 - gg * gg);
              dz(b, 3 * hidden + j) = dh * tc * og * (1.0 - og);
              dc_next(b, j) = dc * fg;
            }
            dz_all.row(b * steps + t) = dz.row(b);
          }
          dh_next.noalias() = dz * whh_m;
          if (s > 0) dwhh.noalias() += dz.transpose() * cache->hid[s - 1];
        }
        if (Wants(self, 0)) {
          auto& g = self.inputs[0]->EnsureGrad();
          AsMat(g, batch * steps, din).noalias() +=
              dz_all * AsMat(self.inputs[1]->value, gates, din);
        }
        if (Wants(self, 1)) {
          auto& g = self.inputs[1]->EnsureGrad();
          AsMat(g, gates, din).noalias() +=
              dz_all.transpose() * AsMat(self.inputs[0]->value, batch * steps, din);
        }
        if (Wants(self, 2)) {
          auto& g = self.inputs[2]->EnsureGrad();
          AsMat(g, gates, hidden) += dwhh;
        }
        if (Wants(self, 3)) {
          auto& g = self.inputs[3]->EnsureGrad();
          AddColumnSums(dz_all.data(), dz_all.rows(), gates, g.data());
        }
      });
}

Tensor RecurrentLayer(const Tensor& input, std::span<const LstmWeights> directions) {
  CASNET_CHECK(directions.size() == 1 || directions.size() == 2,
               "RecurrentLayer: expected 1 or 2 directions, got ", directions.size());
  Tensor fwd = Lstm(input, directions[0], false);
  if (directions.size() == 1) return fwd;
  return ConcatLast(fwd, Lstm(input, directions[1], true));
}

// ---------------------------------------------------------------------------
// Dual-path chunking

ChunkLayout MakeChunkLayout(int64_t frames, int64_t chunk, int64_t hop) {
  CASNET_CHECK(frames >= 1 && chunk >= 1 && hop >= 1 && hop <= chunk,
               "chunk layout needs frames >= 1 and 1 <= hop <= chunk, got frames ",
               frames, " chunk ", chunk, " hop ", hop);
  ChunkLayout layout;
  layout.front = hop;
  int64_t back = hop;
  while ((layout.front + frames + back - chunk) % hop != 0 ||
         layout.front + frames + back < chunk) {
    ++back;
  }
  layout.padded = layout.front + frames + back;
  layout.chunks = (layout.padded - chunk) / hop + 1;
  return layout;
}

Tensor Segment(const Tensor& x, int64_t chunk, int64_t hop) {
  CheckRank("Segment", "input", x, 3);
  const int64_t batch = x.dim(0), frames = x.dim(1), feat = x.dim(2);
  const ChunkLayout lay = MakeChunkLayout(frames, chunk, hop);
  std::vector<double> out(static_cast<size_t>(batch * lay.chunks * chunk * feat), 0.0);
  const auto xd = x.data();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t s = 0; s < lay.chunks; ++s)
      for (int64_t k = 0; k < chunk; ++k) {
        const int64_t t = s * hop + k - lay.front;
        if (t < 0 || t >= frames) continue;
        std::copy_n(xd.begin() + (b * frames + t) * feat, feat,
                    out.begin() + ((b * lay.chunks + s) * chunk + k) * feat);
      }
  return MakeResult(
      "Segment", {batch, lay.chunks, chunk, feat}, std::move(out), {x},
      [=](Node& self) {
        auto& g = self.inputs[0]->EnsureGrad();
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t s = 0; s < lay.chunks; ++s)
            for (int64_t k = 0; k < chunk; ++k) {
              const int64_t t = s * hop + k - lay.front;
              if (t < 0 || t >= frames) continue;
              for (int64_t f = 0; f < feat; ++f)
                g[(b * frames + t) * feat + f] +=
                    self.grad[((b * lay.chunks + s) * chunk + k) * feat + f];
            }
      });
}

Tensor OverlapAdd(const Tensor& x, int64_t frames, int64_t hop) {
  CheckRank("OverlapAdd", "input", x, 4);
  const int64_t batch = x.dim(0), chunks = x.dim(1), chunk = x.dim(2), feat = x.dim(3);
  const ChunkLayout lay = MakeChunkLayout(frames, chunk, hop);
  CASNET_CHECK(lay.chunks == chunks, "OverlapAdd: input ", ShapeToString(x.shape()),
               " has ", chunks, " chunks but ", frames, " frames need ", lay.chunks);
  // Window weight of every frame is 1 / (number of chunks covering it).
  auto weight = std::make_shared<std::vector<double>>(static_cast<size_t>(frames), 0.0);
  for (int64_t s = 0; s < chunks; ++s)
    for (int64_t k = 0; k < chunk; ++k) {
      const int64_t t = s * hop + k - lay.front;
      if (t >= 0 && t < frames) (*weight)[t] += 1.0;
    }
  for (double& w : *weight) w = 1.0 / w;
  std::vector<double> out(static_cast<size_t>(batch * frames * feat), 0.0);
  const auto xd = x.data();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t s = 0; s < chunks; ++s)
      for (int64_t k = 0; k < chunk; ++k) {
        const int64_t t = s * hop + k - lay.front;
        if (t < 0 || t >= frames) continue;
        for (int64_t f = 0; f < feat; ++f)
          out[(b * frames + t) * feat + f] += xd[((b * chunks + s) * chunk + k) * feat + f];
      }
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t t = 0; t < frames; ++t)
      for (int64_t f = 0; f < feat; ++f) out[(b * frames + t) * feat + f] *= (*weight)[t];
  return MakeResult(
      "OverlapAdd", {batch, frames, feat}, std::move(out), {x},
      [=](Node& self) {
        auto& g = self.inputs[0]->EnsureGrad();
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t s = 0; s < chunks; ++s)
            for (int64_t k = 0; k < chunk; ++k) {
              const int64_t t = s * hop + k - lay.front;
              if (t < 0 || t >= frames) continue;
              for (int64_t f = 0; f < feat; ++f)
                g[((b * chunks + s) * chunk + k) * feat + f] +=
                    self.grad[(b * frames + t) * feat + f] * (*weight)[t];
            }
      });
}

// ---------------------------------------------------------------------------
// Losses

namespace {

struct SiSnrParts {
  double value = 0.0;
  bool capped = false;
};

// With zero-meaned est/tgt: s_target = <e, t> / |t|^2 * t, e_noise = est - s_target.
SiSnrParts SiSnrCore(const double* est, const double* tgt, int64_t n,
                     double* grad_out) {
  double me = 0.0, mt = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    me += est[i];
    mt += tgt[i];
  }
  me /= static_cast<double>(n);
  mt /= static_cast<double>(n);
  double dot = 0.0, tt = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    dot += (est[i] - me) * (tgt[i] - mt);
    tt += (tgt[i] - mt) * (tgt[i] - mt);
  }
  CASNET_CHECK(tt > 0.0, "SI-SNR: target has zero energy after mean removal");
  const double alpha = dot / tt;
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double st = alpha * (tgt[i] - mt);
    const double e = (est[i] - me) - st;
    num += st * st;
    den += e * e;
  }
  SiSnrParts parts;
  const double ratio = num / (den + kSiSnrEps);
  // NaN falls through to log10 and stays NaN so callers can detect it.
  double v = ratio <= 0.0 ? -kSiSnrCap : 10.0 * std::log10(ratio);
  if (v >= kSiSnrCap) {
    v = kSiSnrCap;
    parts.capped = true;
  } else if (v <= -kSiSnrCap) {
    v = -kSiSnrCap;
    parts.capped = true;
  }
  parts.value = v;
  if (grad_out && !parts.capped) {
    // d/d est0 = (10 / ln 10) * (2 s_target / num - 2 e_noise / (den + eps)).
    const double k = 10.0 / std::log(10.0);
    double gm = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double st = alpha * (tgt[i] - mt);
      const double e = (est[i] - me) - st;
      grad_out[i] = k * (2.0 * st / num - 2.0 * e / (den + kSiSnrEps));
      gm += grad_out[i];
    }
    gm /= static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) grad_out[i] -= gm;
  } else if (grad_out) {
    std::fill_n(grad_out, n, 0.0);
  }
  return parts;
}

}  // namespace

double SiSnrValue(std::span<const double> estimate, std::span<const double> target) {
  CASNET_CHECK(estimate.size() == target.size() && !target.empty(),
               "SI-SNR: length mismatch ", estimate.size(), " vs ", target.size());
  return SiSnrCore(estimate.data(), target.data(),
                   static_cast<int64_t>(target.size()), nullptr)
      .value;
}

Tensor PairwiseSiSnr(const Tensor& est, const Tensor& tgt) {
  CheckRank("PairwiseSiSnr", "estimates", est, 3);
  CheckSameShape("PairwiseSiSnr", est, tgt);
  CASNET_CHECK(!tgt.requires_grad(), "PairwiseSiSnr: targets must not require grad");
  const int64_t batch = est.dim(0), n = est.dim(1), len = est.dim(2);
  std::vector<double> out(static_cast<size_t>(batch * n * n));
  const double* ed = est.data().data();
  const double* td = tgt.data().data();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j)
        out[(b * n + i) * n + j] =
            SiSnrCore(ed + (b * n + i) * len, td + (b * n + j) * len, len, nullptr).value;
  return MakeResult("PairwiseSiSnr", {batch, n, n}, std::move(out), {est, tgt},
                    [batch, n, len](Node& self) {
                      const double* e = self.inputs[0]->value.data();
                      const double* t = self.inputs[1]->value.data();
                      auto& g = self.inputs[0]->EnsureGrad();
                      std::vector<double> tmp(static_cast<size_t>(len));
                      for (int64_t b = 0; b < batch; ++b)
                        for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < n; ++j) {
                            const double d = self.grad[(b * n + i) * n + j];
                            if (d == 0.0) continue;
                            SiSnrCore(e + (b * n + i) * len, t + (b * n + j) * len, len,
                                      tmp.data());
                            double* gi = g.data() + (b * n + i) * len;
                            for (int64_t k = 0; k < len; ++k) gi[k] += d * tmp[k];
                          }
                    });
}

Tensor SoftmaxCrossEntropy(const Tensor& logits, std::span<const int> labels) {
  CheckRank("SoftmaxCrossEntropy", "logits", logits, 2);
  const int64_t m = logits.dim(0), k = logits.dim(1);
  CASNET_CHECK(static_cast<int64_t>(labels.size()) == m,
               "SoftmaxCrossEntropy: ", labels.size(), " labels for logits ",
               ShapeToString(logits.shape()));
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(m * k));
  std::vector<int> lab(labels.begin(), labels.end());
  const auto ld = logits.data();
  double loss = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    CASNET_CHECK(lab[i] >= 0 && lab[i] < k, "SoftmaxCrossEntropy: label ", lab[i],
                 " out of range for ", k, " classes");
    double mx = ld[i * k];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, ld[i * k + j]);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(ld[i * k + j] - mx);
    for (int64_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(ld[i * k + j] - mx) / z;
    loss += mx + std::log(z) - ld[i * k + lab[i]];
  }
  loss /= static_cast<double>(m);
  return MakeResult("SoftmaxCrossEntropy", {1}, {loss}, {logits},
                    [m, k, probs, lab = std::move(lab)](Node& self) {
                      auto& g = self.inputs[0]->EnsureGrad();
                      const double scale = self.grad[0] / static_cast<double>(m);
                      for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < k; ++j) {
                          const double onehot = j == lab[i] ? 1.0 : 0.0;
                          g[i * k + j] += scale * ((*probs)[i * k + j] - onehot);
                        }
                    });
}

}  // namespace casnet
