#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dsi/layout.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// AttentionMask
// ----------------------------------------------------------------------------

struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed; // row-major

  AttentionMask() = default;
  AttentionMask(std::size_t r, std::size_t c, bool value = false)
      : rows(r), cols(c), allowed(r * c, value ? 1 : 0) {}

  bool at(std::size_t i, std::size_t j) const { return allowed[i * cols + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { allowed[i * cols + j] = v ? 1 : 0; }
};

// Asymmetric semi-attention rule. Queries from the target segment may read
// every column, including injected cross-stream keys appended at the end;
// queries from a condition segment are confined to that segment's own
// columns. Injected columns are key/value-only and contribute no rows.
inline AttentionMask build_semi_mask(const SegmentLayout& layout,
                                     std::size_t injected_tokens = 0) {
  AttentionMask mask(layout.total_tokens, layout.total_tokens + injected_tokens, false);
  for (const Segment& seg : layout.segments) {
    if (is_target_role(seg.role)) {
      for (std::size_t i = seg.begin; i < seg.end; ++i)
        for (std::size_t j = 0; j < mask.cols; ++j) mask.set(i, j, true);
    } else {
      for (std::size_t i = seg.begin; i < seg.end; ++i)
        for (std::size_t j = seg.begin; j < seg.end; ++j) mask.set(i, j, true);
    }
  }
  return mask;
}

// ----------------------------------------------------------------------------
// Masked scaled-dot-product attention
// ----------------------------------------------------------------------------

// Row-wise softmax over allowed columns with max subtraction; disallowed
// columns get exactly zero weight.
inline Mat masked_softmax_rows(const Mat& scores, const AttentionMask& mask) {
  if (scores.rows != mask.rows || scores.cols != mask.cols)
    throw InputError("attend: mask shape does not match score shape");
  Mat probs(scores.rows, scores.cols);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < scores.cols; ++j)
      if (mask.at(i, j)) mx = std::max(mx, scores(i, j));
    if (mx == -std::numeric_limits<double>::infinity())
      throw InputError("attend: fully-masked query row");
    double denom = 0.0;
    for (std::size_t j = 0; j < scores.cols; ++j)
      if (mask.at(i, j)) denom += std::exp(scores(i, j) - mx);
    for (std::size_t j = 0; j < scores.cols; ++j)
      probs(i, j) = mask.at(i, j) ? std::exp(scores(i, j) - mx) / denom : 0.0;
  }
  return probs;
}

inline Mat attend(const Mat& queries, const Mat& keys, const Mat& values,
                  const AttentionMask& mask) {
  if (queries.cols != keys.cols) throw InputError("attend: query/key dim mismatch");
  if (keys.rows != values.rows) throw InputError("attend: key/value count mismatch");
  if (mask.rows != queries.rows || mask.cols != keys.rows)
    throw InputError("attend: mask shape does not match inputs");
  Mat scores = matmul_nt(queries, keys);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.cols));
  for (double& v : scores.data) v *= inv_sqrt_d;
  return matmul(masked_softmax_rows(scores, mask), values);
}

// ----------------------------------------------------------------------------
// Cross-stream key/value injection
// ----------------------------------------------------------------------------

// Keys and values retained from the producing stream's self-attention, one
// matrix per head, immutable once handed over.
struct StreamKV {
  std::vector<Mat> keys;
  std::vector<Mat> values;
  SegmentLayout source_layout;

  std::size_t tokens() const { return keys.empty() ? 0 : keys[0].rows; }

  void validate() const {
    if (keys.size() != values.size()) throw InputError("stream kv: head count mismatch");
    for (std::size_t h = 0; h < keys.size(); ++h)
      if (!keys[h].same_shape(values[h]))
        throw InputError("stream kv: key/value shapes differ");
  }
};

// Single-head dual-stream attention: appends the image stream's keys and
// values to the video stream's and applies the semi-attention mask. Empty
// injected matrices reduce this to plain single-stream attend.
inline Mat dual_stream_attend(const Mat& queries, const Mat& keys, const Mat& values,
                              const SegmentLayout& layout, const Mat& image_keys,
                              const Mat& image_values) {
  if (image_keys.rows != image_values.rows)
    throw InputError("dual_stream_attend: injected key/value count mismatch");
  if (image_keys.rows == 0) return attend(queries, keys, values, build_semi_mask(layout, 0));
  if (image_keys.cols != keys.cols)
    throw InputError("dual_stream_attend: head dim differs between streams");
  Mat k_cat(keys.rows + image_keys.rows, keys.cols);
  Mat v_cat(values.rows + image_values.rows, values.cols);
  std::copy(keys.data.begin(), keys.data.end(), k_cat.data.begin());
  std::copy(image_keys.data.begin(), image_keys.data.end(),
            k_cat.data.begin() + static_cast<std::ptrdiff_t>(keys.data.size()));
  std::copy(values.data.begin(), values.data.end(), v_cat.data.begin());
  std::copy(image_values.data.begin(), image_values.data.end(),
            v_cat.data.begin() + static_cast<std::ptrdiff_t>(values.data.size()));
  return attend(queries, k_cat, v_cat, build_semi_mask(layout, image_keys.rows));
}

// Per-head variant fed by a StreamKV produced on the image stream.
inline std::vector<Mat> dual_stream_attend(const std::vector<Mat>& queries,
                                           const std::vector<Mat>& keys,
                                           const std::vector<Mat>& values,
                                           const SegmentLayout& layout, const StreamKV& image_kv) {
  image_kv.validate();
  if (!image_kv.keys.empty() && image_kv.keys.size() != queries.size())
    throw InputError("dual_stream_attend: head count differs between streams");
  std::vector<Mat> out;
  out.reserve(queries.size());
  static const Mat kEmpty;
  for (std::size_t h = 0; h < queries.size(); ++h) {
    const Mat& ik = image_kv.keys.empty() ? kEmpty : image_kv.keys[h];
    const Mat& iv = image_kv.values.empty() ? kEmpty : image_kv.values[h];
    out.push_back(dual_stream_attend(queries[h], keys[h], values[h], layout, ik, iv));
  }
  return out;
}

}  // namespace dsi
