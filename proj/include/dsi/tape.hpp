#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "dsi/attention.hpp"
#include "dsi/rope.hpp"

namespace dsi {

// Reverse-mode autodiff over Mat. Small by intent: just the operations the
// dual-stream blocks need. Values are recorded eagerly; backward() walks the
// node list in reverse creation order, so any value computed through the tape
// is differentiable with respect to every leaf that feeds it.
class Tape {
 public:
  using Id = std::size_t;

  Id leaf(Mat v) { return push(std::move(v), nullptr); }

  const Mat& val(Id id) const { return nodes_[id].value; }
  const Mat& grad(Id id) const { return nodes_[id].grad; }

  Id matmul(Id a, Id b) {
    Mat out = dsi::matmul(val(a), val(b));
    return push(std::move(out), [this, a, b](Id self) {
      const Mat& g = nodes_[self].grad;
      accumulate(a, dsi::matmul_nt(g, val(b)));
      accumulate(b, dsi::matmul(transposed_of(a), g));
    });
  }

  // a (m,d) x b (n,d)^T
  Id matmul_nt(Id a, Id b) {
    Mat out = dsi::matmul_nt(val(a), val(b));
    return push(std::move(out), [this, a, b](Id self) {
      const Mat& g = nodes_[self].grad;
      accumulate(a, dsi::matmul(g, val(b)));
      accumulate(b, dsi::matmul(transposed(g), val(a)));
    });
  }

  Id add(Id a, Id b) {
    if (!val(a).same_shape(val(b))) throw InputError("tape add: shape mismatch");
    Mat out = val(a);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += val(b).data[i];
    return push(std::move(out), [this, a, b](Id self) {
      accumulate(a, nodes_[self].grad);
      accumulate(b, nodes_[self].grad);
    });
  }

  Id scale(Id a, double s) {
    Mat out = val(a);
    for (double& v : out.data) v *= s;
    return push(std::move(out), [this, a, s](Id self) {
      Mat g = nodes_[self].grad;
      for (double& v : g.data) v *= s;
      accumulate(a, g);
    });
  }

  // adds a 1 x C row vector to every row
  Id add_rowvec(Id a, Id row) {
    const Mat& r = val(row);
    if (r.rows != 1 || r.cols != val(a).cols) throw InputError("tape add_rowvec: shape mismatch");
    Mat out = val(a);
    for (std::size_t i = 0; i < out.rows; ++i)
      for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += r(0, j);
    return push(std::move(out), [this, a, row](Id self) {
      const Mat& g = nodes_[self].grad;
      accumulate(a, g);
      Mat gr(1, g.cols);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) gr(0, j) += g(i, j);
      accumulate(row, gr);
    });
  }

  // row-wise RMS normalization with learned per-channel gain (1 x C)
  Id rms_norm(Id x, Id gain) {
    const Mat& xv = val(x);
    const Mat& gv = val(gain);
    if (gv.rows != 1 || gv.cols != xv.cols) throw InputError("tape rms_norm: gain shape mismatch");
    const double eps = 1e-6;
    std::vector<double> inv_rms(xv.rows);
    Mat out(xv.rows, xv.cols);
    for (std::size_t i = 0; i < xv.rows; ++i) {
      double ms = 0.0;
      for (std::size_t j = 0; j < xv.cols; ++j) ms += xv(i, j) * xv(i, j);
      ms = ms / static_cast<double>(xv.cols) + eps;
      inv_rms[i] = 1.0 / std::sqrt(ms);
      for (std::size_t j = 0; j < xv.cols; ++j) out(i, j) = xv(i, j) * inv_rms[i] * gv(0, j);
    }
    return push(std::move(out), [this, x, gain, inv_rms](Id self) {
      const Mat& g = nodes_[self].grad;
      const Mat& xv = val(x);
      const Mat& gv = val(gain);
      const auto cols = static_cast<double>(xv.cols);
      Mat dx(xv.rows, xv.cols);
      Mat dgain(1, xv.cols);
      for (std::size_t i = 0; i < xv.rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < xv.cols; ++j) dot += g(i, j) * gv(0, j) * xv(i, j);
        const double r = inv_rms[i];
        for (std::size_t j = 0; j < xv.cols; ++j) {
          dx(i, j) = g(i, j) * gv(0, j) * r - xv(i, j) * r * r * r * dot / cols;
          dgain(0, j) += g(i, j) * xv(i, j) * r;
        }
      }
      accumulate(x, dx);
      accumulate(gain, dgain);
    });
  }

  Id silu(Id x) {
    Mat out = val(x);
    for (double& v : out.data) v = v / (1.0 + std::exp(-v));
    return push(std::move(out), [this, x](Id self) {
      const Mat& g = nodes_[self].grad;
      const Mat& xv = val(x);
      Mat dx(xv.rows, xv.cols);
      for (std::size_t i = 0; i < xv.data.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xv.data[i]));
        dx.data[i] = g.data[i] * s * (1.0 + xv.data[i] * (1.0 - s));
      }
      accumulate(x, dx);
    });
  }

  Id masked_softmax(Id scores, AttentionMask mask) {
    Mat probs = masked_softmax_rows(val(scores), mask);
    Mat probs_copy = probs;
    return push(std::move(probs),
                [this, scores, mask = std::move(mask), p = std::move(probs_copy)](Id self) {
                  const Mat& g = nodes_[self].grad;
                  Mat ds(p.rows, p.cols);
                  for (std::size_t i = 0; i < p.rows; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < p.cols; ++j) dot += p(i, j) * g(i, j);
                    for (std::size_t j = 0; j < p.cols; ++j)
                      ds(i, j) = mask.at(i, j) ? p(i, j) * (g(i, j) - dot) : 0.0;
                  }
                  accumulate(scores, ds);
                });
  }

  Id rope(Id x, std::vector<TokenCoord> coords, const RopeConfig& cfg) {
    Mat out = val(x);
    detail::rope_rotate_inplace(out, coords, cfg);
    return push(std::move(out), [this, x, coords = std::move(coords), cfg](Id self) {
      Mat g = nodes_[self].grad;
      detail::rope_rotate_inplace(g, coords, cfg, /*inverse=*/true);
      accumulate(x, g);
    });
  }

  Id concat_rows(Id a, Id b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (av.cols != bv.cols) throw InputError("tape concat_rows: column mismatch");
    Mat out(av.rows + bv.rows, av.cols);
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(av.data.size()));
    return push(std::move(out), [this, a, b](Id self) {
      const Mat& g = nodes_[self].grad;
      const Mat& av = val(a);
      Mat ga(av.rows, av.cols);
      Mat gb(g.rows - av.rows, g.cols);
      std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(ga.data.size()),
                ga.data.begin());
      std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(ga.data.size()), g.data.end(),
                gb.data.begin());
      accumulate(a, ga);
      accumulate(b, gb);
    });
  }

  Id slice_rows(Id a, std::size_t r0, std::size_t r1) {
    const Mat& av = val(a);
    if (r1 > av.rows || r0 > r1) throw InputError("tape slice_rows: bad range");
    Mat out(r1 - r0, av.cols);
    std::copy(av.data.begin() + static_cast<std::ptrdiff_t>(r0 * av.cols),
              av.data.begin() + static_cast<std::ptrdiff_t>(r1 * av.cols), out.data.begin());
    return push(std::move(out), [this, a, r0](Id self) {
      const Mat& g = nodes_[self].grad;
      const Mat& av = val(a);
      Mat ga(av.rows, av.cols);
      std::copy(g.data.begin(), g.data.end(),
                ga.data.begin() + static_cast<std::ptrdiff_t>(r0 * av.cols));
      accumulate(a, ga);
    });
  }

  Id slice_cols(Id a, std::size_t c0, std::size_t c1) {
    const Mat& av = val(a);
    if (c1 > av.cols || c0 > c1) throw InputError("tape slice_cols: bad range");
    Mat out(av.rows, c1 - c0);
    for (std::size_t i = 0; i < av.rows; ++i)
      for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = av(i, j);
    return push(std::move(out), [this, a, c0](Id self) {
      const Mat& g = nodes_[self].grad;
      const Mat& av = val(a);
      Mat ga(av.rows, av.cols);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) ga(i, j + c0) = g(i, j);
      accumulate(a, ga);
    });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw InputError("tape concat_cols: empty");
    std::size_t cols = 0;
    const std::size_t rows = val(parts[0]).rows;
    for (Id p : parts) {
      if (val(p).rows != rows) throw InputError("tape concat_cols: row mismatch");
      cols += val(p).cols;
    }
    Mat out(rows, cols);
    std::size_t c0 = 0;
    for (Id p : parts) {
      const Mat& pv = val(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < pv.cols; ++j) out(i, c0 + j) = pv(i, j);
      c0 += pv.cols;
    }
    return push(std::move(out), [this, parts](Id self) {
      const Mat& g = nodes_[self].grad;
      std::size_t c0 = 0;
      for (Id p : parts) {
        const Mat& pv = val(p);
        Mat gp(pv.rows, pv.cols);
        for (std::size_t i = 0; i < pv.rows; ++i)
          for (std::size_t j = 0; j < pv.cols; ++j) gp(i, j) = g(i, c0 + j);
        accumulate(p, gp);
        c0 += pv.cols;
      }
    });
  }

  // mean squared difference against a constant target; 1x1 output
  Id mean_sq_diff(Id pred, Mat target) {
    const Mat& pv = val(pred);
    if (!pv.same_shape(target)) throw InputError("tape mean_sq_diff: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pv.data.size(); ++i) {
      const double d = pv.data[i] - target.data[i];
      s += d * d;
    }
    Mat out(1, 1);
    out(0, 0) = s / static_cast<double>(pv.data.size());
    return push(std::move(out), [this, pred, target = std::move(target)](Id self) {
      const double g = nodes_[self].grad(0, 0);
      const Mat& pv = val(pred);
      const double k = 2.0 * g / static_cast<double>(pv.data.size());
      Mat dp(pv.rows, pv.cols);
      for (std::size_t i = 0; i < pv.data.size(); ++i)
        dp.data[i] = k * (pv.data[i] - target.data[i]);
      accumulate(pred, dp);
    });
  }

  Id add_scaled(Id a, Id b, double sa, double sb) {
    if (!val(a).same_shape(val(b))) throw InputError("tape add_scaled: shape mismatch");
    Mat out = val(a);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = sa * out.data[i] + sb * val(b).data[i];
    return push(std::move(out), [this, a, b, sa, sb](Id self) {
      Mat ga = nodes_[self].grad;
      Mat gb = ga;
      for (double& v : ga.data) v *= sa;
      for (double& v : gb.data) v *= sb;
      accumulate(a, ga);
      accumulate(b, gb);
    });
  }

  void backward(Id root) {
    if (val(root).rows != 1 || val(root).cols != 1)
      throw InputError("tape backward: root must be a scalar");
    for (auto& n : nodes_) {
      n.grad = Mat(n.value.rows, n.value.cols);
    }
    nodes_[root].grad(0, 0) = 1.0;
    for (std::size_t i = root + 1; i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Id)> back;
  };

  Id push(Mat v, std::function<void(Id)> back) {
    nodes_.push_back(Node{std::move(v), Mat(), std::move(back)});
    return nodes_.size() - 1;
  }

  void accumulate(Id id, const Mat& g) {
    Mat& dst = nodes_[id].grad;
    if (dst.data.empty()) dst = Mat(g.rows, g.cols);
    for (std::size_t i = 0; i < g.data.size(); ++i) dst.data[i] += g.data[i];
  }

  static Mat transposed(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
  }

  Mat transposed_of(Id id) { return transposed(val(id)); }

  std::vector<Node> nodes_;
};

}  // namespace dsi
