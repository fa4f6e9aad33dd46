#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

#include "depthgrow/rng.hpp"
#include "depthgrow/tensor.hpp"

namespace depthgrow {

namespace detail {

// Number of threads the matmul kernels may use. Work is split by output
// rows, so results are bit-identical for any thread count.
inline int& matmul_threads() {
  static int n = 1;
  return n;
}

template <typename T>
void mm_nn_rows(const T* a, const T* b, T* c, int r0, int r1, int k, int n) {
  for (int i = r0; i < r1; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      T av = arow[l];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  int nt = matmul_threads();
  if (nt > 1 && m >= 2 * nt && static_cast<int64_t>(m) * k * n >= 1 << 16) {
    std::vector<std::thread> ths;
    int chunk = (m + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
      int r0 = t * chunk, r1 = std::min(m, r0 + chunk);
      if (r0 >= r1) break;
      ths.emplace_back(mm_nn_rows<T>, a, b, c, r0, r1, k, n);
    }
    for (auto& th : ths) th.join();
  } else {
    mm_nn_rows(a, b, c, 0, m, k, n);
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * n;
    T* crow = c + static_cast<size_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      const T* brow = b + static_cast<size_t>(j) * n;
      T acc = T(0);
      for (int l = 0; l < n; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int l = 0; l < m; ++l) {
    const T* arow = a + static_cast<size_t>(l) * k;
    const T* brow = b + static_cast<size_t>(l) * n;
    for (int i = 0; i < k; ++i) {
      T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void softmax_axis_extents(const Shape& s, int axis, int64_t* outer, int64_t* inner) {
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) *inner *= s[i];
}

}  // namespace detail

// Reverse-mode autodiff over Tensor<T>. Each operation computes its forward
// value eagerly and, while recording, appends a backward closure to a tape.
// backward() replays the tape in reverse insertion order, which is a fixed
// topological order of the recorded graph, so gradient accumulation order is
// reproducible run to run.
//
// A Graph instance is single-writer. Concurrent eval-mode forwards over a
// frozen model must each use their own Graph.
template <typename T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  // Dropout masks are drawn from a counter stream keyed by (seed, step,
  // index of the dropout op within the step). Call once per training step.
  void set_dropout_stream(uint64_t seed, int64_t step) {
    dropout_seed_ = seed;
    dropout_step_ = step;
    dropout_op_ = 0;
  }

  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
      throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out(Shape{m, n});
    detail::mm_nn(a.data(), b.data(), out.data(), m, k, n);
    if (track(a, b)) {
      mark(out);
      tape_.push_back([a, b, out, m, k, n] {
        const T* g = out.grad();
        if (a.requires_grad()) detail::mm_nt(g, b.data(), a.grad(), m, n, k);
        if (b.requires_grad()) detail::mm_tn(a.data(), g, b.grad(), m, k, n);
      });
    }
    return out;
  }

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
    if (track(a, b)) {
      mark(out);
      tape_.push_back([a, b, out, n] {
        const T* g = out.grad();
        if (T* ag = a.grad()) for (int64_t i = 0; i < n; ++i) ag[i] += g[i];
        if (T* bg = b.grad()) for (int64_t i = 0; i < n; ++i) bg[i] += g[i];
      });
    }
    return out;
  }

  // x[r x c] + row vector b[c], broadcast over rows.
  Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
      throw ShapeError("add_bias: incompatible shapes " + shape_str(x.shape()) + " vs " +
                       shape_str(b.shape()));
    int r = x.dim(0), c = x.dim(1);
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    const T* bv = b.data();
    T* ov = out.data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ov[static_cast<size_t>(i) * c + j] = xv[static_cast<size_t>(i) * c + j] + bv[j];
    if (track(x, b)) {
      mark(out);
      tape_.push_back([x, b, out, r, c] {
        const T* g = out.grad();
        if (T* xg = x.grad())
          for (int64_t i = 0; i < static_cast<int64_t>(r) * c; ++i) xg[i] += g[i];
        if (T* bg = b.grad())
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) bg[j] += g[static_cast<size_t>(i) * c + j];
      });
    }
    return out;
  }

  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
    if (track(a, b)) {
      mark(out);
      tape_.push_back([a, b, out, n] {
        const T* g = out.grad();
        if (T* ag = a.grad()) {
          const T* bv2 = b.data();
          for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * bv2[i];
        }
        if (T* bg = b.grad()) {
          const T* av2 = a.data();
          for (int64_t i = 0; i < n; ++i) bg[i] += g[i] * av2[i];
        }
      });
    }
    return out;
  }

  Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    const T* av = a.data();
    T* ov = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * c;
    if (track(a)) {
      mark(out);
      tape_.push_back([a, out, c, n] {
        const T* g = out.grad();
        T* ag = a.grad();
        for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * c;
      });
    }
    return out;
  }

  Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    const T* av = a.data();
    T* ov = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
    if (track(a)) {
      mark(out);
      tape_.push_back([a, out, n] {
        const T* g = out.grad();
        const T* av2 = a.data();
        T* ag = a.grad();
        for (int64_t i = 0; i < n; ++i)
          if (av2[i] > T(0)) ag[i] += g[i];
      });
    }
    return out;
  }

  // Numerically stable softmax along `axis` (negative counts from the end).
  Tensor<T> softmax(const Tensor<T>& a, int axis) {
    if (axis < 0) axis += a.rank();
    if (axis < 0 || axis >= a.rank())
      throw ShapeError("softmax: axis out of range for " + shape_str(a.shape()));
    int64_t outer, inner;
    detail::softmax_axis_extents(a.shape(), axis, &outer, &inner);
    int64_t len = a.dim(axis);
    Tensor<T> out(a.shape());
    const T* av = a.data();
    T* ov = out.data();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        T m = av[base];
        for (int64_t l = 1; l < len; ++l) m = std::max(m, av[base + l * inner]);
        T sum = T(0);
        for (int64_t l = 0; l < len; ++l) {
          T e = std::exp(av[base + l * inner] - m);
          ov[base + l * inner] = e;
          sum += e;
        }
        if (std::isnan(static_cast<double>(sum)))
          throw NumericError("softmax: NaN in input");
        T inv = T(1) / sum;
        for (int64_t l = 0; l < len; ++l) ov[base + l * inner] *= inv;
      }
    }
    if (track(a)) {
      mark(out);
      tape_.push_back([a, out, outer, inner, len] {
        const T* g = out.grad();
        const T* y = out.data();
        T* ag = a.grad();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            T dot = T(0);
            for (int64_t l = 0; l < len; ++l) dot += y[base + l * inner] * g[base + l * inner];
            for (int64_t l = 0; l < len; ++l) {
              const int64_t idx = base + l * inner;
              ag[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      });
    }
    return out;
  }

  // Per-position normalization over the last axis, then affine gain/bias.
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    int dlast = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != dlast || bias.dim(0) != dlast)
      throw ShapeError("layer_norm: gain/bias shape must match last dimension " +
                       std::to_string(dlast));
    int64_t rows = x.numel() / dlast;
    Tensor<T> out(x.shape());
    std::vector<T> mean(static_cast<size_t>(rows)), rstd(static_cast<size_t>(rows));
    const T* xv = x.data();
    const T* gv = gain.data();
    const T* bv = bias.data();
    T* ov = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = xv + r * dlast;
      T mu = T(0);
      for (int j = 0; j < dlast; ++j) mu += row[j];
      mu /= static_cast<T>(dlast);
      T var = T(0);
      for (int j = 0; j < dlast; ++j) {
        T d = row[j] - mu;
        var += d * d;
      }
      var /= static_cast<T>(dlast);
      T rs = T(1) / std::sqrt(var + eps);
      mean[static_cast<size_t>(r)] = mu;
      rstd[static_cast<size_t>(r)] = rs;
      T* orow = ov + r * dlast;
      for (int j = 0; j < dlast; ++j) orow[j] = (row[j] - mu) * rs * gv[j] + bv[j];
    }
    if (track(x, gain, bias)) {
      mark(out);
      tape_.push_back([x, gain, bias, out, rows, dlast, mean = std::move(mean),
                       rstd = std::move(rstd)] {
        const T* g = out.grad();
        const T* xv2 = x.data();
        const T* gv2 = gain.data();
        T* xg = x.grad();
        T* gg = gain.grad();
        T* bg = bias.grad();
        for (int64_t r = 0; r < rows; ++r) {
          const T* row = xv2 + r * dlast;
          const T* grow = g + r * dlast;
          T mu = mean[static_cast<size_t>(r)];
          T rs = rstd[static_cast<size_t>(r)];
          if (gg || bg) {
            for (int j = 0; j < dlast; ++j) {
              T xhat = (row[j] - mu) * rs;
              if (gg) gg[j] += grow[j] * xhat;
              if (bg) bg[j] += grow[j];
            }
          }
          if (xg) {
            // dx = rs * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
            for (int j = 0; j < dlast; ++j) {
              T xhat = (row[j] - mu) * rs;
              T dxhat = grow[j] * gv2[j];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            T inv_d = T(1) / static_cast<T>(dlast);
            for (int j = 0; j < dlast; ++j) {
              T xhat = (row[j] - mu) * rs;
              T dxhat = grow[j] * gv2[j];
              xg[r * dlast + j] += rs * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
            }
          }
        }
      });
    }
    return out;
  }

  // Mean over non-pad positions of the label-smoothed negative log-likelihood
  // with target distribution q_v = smoothing/V + (1-smoothing)*[v == target].
  Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets, T smoothing,
                          int pad_id) {
    if (logits.rank() != 2)
      throw ShapeError("cross_entropy: logits must be 2-D, got " + shape_str(logits.shape()));
    int p = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != p)
      throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                       std::to_string(p) + " rows");
    int64_t live = 0;
    for (int t : targets) {
      if (t != pad_id && (t < 0 || t >= v))
        throw ContractError("cross_entropy: target id " + std::to_string(t) + " outside vocab");
      if (t != pad_id) ++live;
    }
    if (live == 0) throw DataError("cross_entropy: every target position is padding");

    const T* lv = logits.data();
    // Probabilities are kept for the backward closure.
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(p) * v);
    double total = 0.0;
    for (int i = 0; i < p; ++i) {
      if (targets[static_cast<size_t>(i)] == pad_id) continue;
      const T* row = lv + static_cast<size_t>(i) * v;
      T m = row[0];
      for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
      double sum = 0.0, rowsum = 0.0;
      for (int j = 0; j < v; ++j) {
        sum += std::exp(static_cast<double>(row[j] - m));
        rowsum += static_cast<double>(row[j]);
      }
      double lse = static_cast<double>(m) + std::log(sum);
      T* prow = probs->data() + static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j)
        prow[j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
      double sm = static_cast<double>(smoothing);
      double target_logit = static_cast<double>(row[targets[static_cast<size_t>(i)]]);
      total += lse - (1.0 - sm) * target_logit - sm / v * rowsum;
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(live)));
    if (track(logits)) {
      mark(out);
      std::vector<int> tgt = targets;
      tape_.push_back([logits, out, probs, tgt = std::move(tgt), p, v, smoothing, pad_id, live] {
        T go = out.grad()[0];
        T* lg = logits.grad();
        T inv = go / static_cast<T>(live);
        T uni = smoothing / static_cast<T>(v);
        for (int i = 0; i < p; ++i) {
          int t = tgt[static_cast<size_t>(i)];
          if (t == pad_id) continue;
          const T* prow = probs->data() + static_cast<size_t>(i) * v;
          T* grow = lg + static_cast<size_t>(i) * v;
          for (int j = 0; j < v; ++j) {
            T q = uni + (j == t ? T(1) - smoothing : T(0));
            grow[j] += (prow[j] - q) * inv;
          }
        }
      });
    }
    return out;
  }

  // Gather rows of `table` at `ids`; backward scatter-adds into table.grad.
  Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2)
      throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
    int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
      if (id < 0 || id >= v) throw ContractError("embedding: id " + std::to_string(id) + " outside table");
    Tensor<T> out(Shape{static_cast<int>(ids.size()), d});
    const T* tv = table.data();
    T* ov = out.data();
    for (size_t i = 0; i < ids.size(); ++i)
      std::copy_n(tv + static_cast<size_t>(ids[i]) * d, d, ov + i * d);
    if (track(table)) {
      mark(out);
      std::vector<int> idv = ids;
      tape_.push_back([table, out, idv = std::move(idv), d] {
        const T* g = out.grad();
        T* tg = table.grad();
        for (size_t i = 0; i < idv.size(); ++i) {
          T* dst = tg + static_cast<size_t>(idv[i]) * d;
          const T* src = g + i * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
      });
    }
    return out;
  }

  // Inverted dropout: keep with probability 1-p and scale by 1/(1-p).
  // Inactive dropout is the identity (returns the input handle unchanged).
  Tensor<T> dropout(const Tensor<T>& x, T p, bool active) {
    if (p < T(0) || p >= T(1)) throw ContractError("dropout: p must be in [0, 1)");
    if (!active || p == T(0)) return x;
    uint64_t key = counter_key(dropout_seed_, static_cast<uint64_t>(dropout_step_),
                               static_cast<uint64_t>(dropout_op_++));
    Tensor<T> out(x.shape());
    int64_t n = x.numel();
    auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    T inv_keep = T(1) / (T(1) - p);
    const T* xv = x.data();
    T* ov = out.data();
    for (int64_t i = 0; i < n; ++i) {
      T m = counter_uniform(key, static_cast<uint64_t>(i)) >= static_cast<double>(p) ? inv_keep : T(0);
      (*mask)[static_cast<size_t>(i)] = m;
      ov[i] = xv[i] * m;
    }
    if (track(x)) {
      mark(out);
      tape_.push_back([x, out, mask, n] {
        const T* g = out.grad();
        T* xg = x.grad();
        for (int64_t i = 0; i < n; ++i) xg[i] += g[i] * (*mask)[static_cast<size_t>(i)];
      });
    }
    return out;
  }

  Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
    int m = a.dim(0), n = a.dim(1);
    Tensor<T> out(Shape{n, m});
    const T* av = a.data();
    T* ov = out.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ov[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
    if (track(a)) {
      mark(out);
      tape_.push_back([a, out, m, n] {
        const T* g = out.grad();
        T* ag = a.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) ag[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
      });
    }
    return out;
  }

  Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
      throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor<T> out = Tensor<T>::from(std::move(shape), a.vec());
    if (track(a)) {
      mark(out);
      int64_t n = a.numel();
      tape_.push_back([a, out, n] {
        const T* g = out.grad();
        T* ag = a.grad();
        for (int64_t i = 0; i < n; ++i) ag[i] += g[i];
      });
    }
    return out;
  }

  Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    return concat_impl(parts, /*axis=*/0);
  }

  Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    return concat_impl(parts, /*axis=*/1);
  }

  Tensor<T> slice_rows(const Tensor<T>& a, int start, int len) {
    if (a.rank() != 2 || start < 0 || len <= 0 || start + len > a.dim(0))
      throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                       std::to_string(start + len) + ") invalid for " + shape_str(a.shape()));
    int c = a.dim(1);
    Tensor<T> out(Shape{len, c});
    std::copy_n(a.data() + static_cast<size_t>(start) * c, static_cast<size_t>(len) * c, out.data());
    if (track(a)) {
      mark(out);
      tape_.push_back([a, out, start, len, c] {
        const T* g = out.grad();
        T* ag = a.grad() + static_cast<size_t>(start) * c;
        for (int64_t i = 0; i < static_cast<int64_t>(len) * c; ++i) ag[i] += g[i];
      });
    }
    return out;
  }

  Tensor<T> slice_cols(const Tensor<T>& a, int start, int len) {
    if (a.rank() != 2 || start < 0 || len <= 0 || start + len > a.dim(1))
      throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                       std::to_string(start + len) + ") invalid for " + shape_str(a.shape()));
    int m = a.dim(0), n = a.dim(1);
    Tensor<T> out(Shape{m, len});
    const T* av = a.data();
    T* ov = out.data();
    for (int i = 0; i < m; ++i)
      std::copy_n(av + static_cast<size_t>(i) * n + start, len, ov + static_cast<size_t>(i) * len);
    if (track(a)) {
      mark(out);
      tape_.push_back([a, out, start, len, m, n] {
        const T* g = out.grad();
        T* ag = a.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < len; ++j)
            ag[static_cast<size_t>(i) * n + start + j] += g[static_cast<size_t>(i) * len + j];
      });
    }
    return out;
  }

  Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    const T* av = a.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += av[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (track(a)) {
      mark(out);
      tape_.push_back([a, out, n] {
        T g = out.grad()[0];
        T* ag = a.grad();
        for (int64_t i = 0; i < n; ++i) ag[i] += g;
      });
    }
    return out;
  }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The tape is
  // consumed; a Graph instance drives at most one backward pass.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (loss.requires_grad()) loss.grad()[0] += T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    tape_.clear();
  }

  size_t tape_size() const { return tape_.size(); }

 private:
  bool track(const Tensor<T>& a) const { return recording_ && a.requires_grad(); }
  bool track(const Tensor<T>& a, const Tensor<T>& b) const {
    return recording_ && (a.requires_grad() || b.requires_grad());
  }
  bool track(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) const {
    return recording_ && (a.requires_grad() || b.requires_grad() || c.requires_grad());
  }
  static void mark(Tensor<T>& t) { t.set_requires_grad(true); }

  static void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }

  Tensor<T> concat_impl(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    int other = axis == 0 ? 1 : 0;
    int fixed = parts[0].dim(other);
    int total = 0;
    for (const auto& p : parts) {
      if (p.rank() != 2 || p.dim(other) != fixed)
        throw ShapeError("concat: mismatched part shape " + shape_str(p.shape()));
      total += p.dim(axis);
    }
    Shape os = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    Tensor<T> out(os);
    T* ov = out.data();
    bool any_grad = false;
    std::vector<int> offsets(parts.size());
    int off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const auto& p = parts[pi];
      offsets[pi] = off;
      any_grad = any_grad || p.requires_grad();
      if (axis == 0) {
        std::copy_n(p.data(), p.numel(), ov + static_cast<size_t>(off) * fixed);
      } else {
        for (int i = 0; i < fixed; ++i)
          std::copy_n(p.data() + static_cast<size_t>(i) * p.dim(1), p.dim(1),
                      ov + static_cast<size_t>(i) * total + off);
      }
      off += p.dim(axis);
    }
    if (recording_ && any_grad) {
      mark(out);
      std::vector<Tensor<T>> held = parts;
      tape_.push_back([held = std::move(held), offsets = std::move(offsets), out, axis, fixed, total] {
        const T* g = out.grad();
        for (size_t pi = 0; pi < held.size(); ++pi) {
          T* pg = held[pi].grad();
          if (!pg) continue;
          int len = held[pi].dim(axis);
          if (axis == 0) {
            const T* src = g + static_cast<size_t>(offsets[pi]) * fixed;
            for (int64_t i = 0; i < static_cast<int64_t>(len) * fixed; ++i) pg[i] += src[i];
          } else {
            for (int i = 0; i < fixed; ++i)
              for (int j = 0; j < len; ++j)
                pg[static_cast<size_t>(i) * len + j] += g[static_cast<size_t>(i) * total + offsets[pi] + j];
          }
        }
      });
    }
    return out;
  }

  bool recording_;
  std::vector<std::function<void()>> tape_;
  uint64_t dropout_seed_ = 0;
  int64_t dropout_step_ = 0;
  int64_t dropout_op_ = 0;
};

}  // namespace depthgrow
