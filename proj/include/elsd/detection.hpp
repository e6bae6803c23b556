#ifndef ELSD_DETECTION_HPP
#define ELSD_DETECTION_HPP

// Foreground segmentation, connected-component boxes and IoU-matched
// recall / precision / F1 scoring.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "elsd/errors.hpp"
#include "elsd/linalg.hpp"

namespace elsd {

/// Axis-aligned box: x = column, y = row of the top-left pixel.
struct Box {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
  int id = 0;
  double score = 0.0; // foreground mass for detections, unused for ground truth

  long area() const noexcept { return static_cast<long>(w) * h; }
  friend bool operator==(const Box& a, const Box& b) {
    return std::tie(a.x, a.y, a.w, a.h, a.id) == std::tie(b.x, b.y, b.w, b.h, b.id);
  }
};

/// Boxes indexed by frame.
using FrameBoxes = std::vector<std::vector<Box>>;
using DetectionSet = FrameBoxes;
using GroundTruthBoxes = FrameBoxes;

struct Geometry {
  int height = 0;
  int width = 0;
};

inline double iou(const Box& a, const Box& b) {
  const int x0 = std::max(a.x, b.x);
  const int y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.x + a.w, b.x + b.w);
  const int y1 = std::min(a.y + a.h, b.y + b.h);
  const long inter = (x1 > x0 && y1 > y0) ? static_cast<long>(x1 - x0) * (y1 - y0) : 0;
  const long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// ---------------------------------------------------------------------------
// Segmentation

struct FixedThreshold {
  double theta = 0.1;
};

/// theta = factor * 1.4826 * MAD(|S|) over the whole batch.
struct MadThreshold {
  double factor = 3.0;
};

using ThresholdPolicy = std::variant<FixedThreshold, MadThreshold>;

inline double median_inplace(std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

/// Robust standard deviation estimate 1.4826 * median(|x - median(x)|).
inline double mad_sigma(const Matrix& values) {
  std::vector<double> v(values.data(), values.data() + values.size());
  const double med = median_inplace(v);
  for (double& x : v) x = std::abs(x - med);
  return 1.4826 * median_inplace(v);
}

/// Resolves a policy to a concrete threshold for a foreground batch.
inline double resolve_threshold(const Matrix& S, const ThresholdPolicy& policy) {
  if (const auto* f = std::get_if<FixedThreshold>(&policy)) return f->theta;
  const auto& m = std::get<MadThreshold>(policy);
  return m.factor * mad_sigma(S.cwiseAbs());
}

/// mask_j = |s_j| >= theta. Exact zeros are never foreground, so a zero
/// threshold (MAD of a mostly-zero S) selects the support of s.
inline std::vector<std::uint8_t> segment(const Eigen::Ref<const Vector>& s, Geometry geo, double theta) {
  if (s.size() != static_cast<Index>(geo.height) * geo.width)
    throw InvalidInput("segment: frame length does not match geometry");
  if (!s.allFinite()) throw InvalidInput("segment: non-finite foreground");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(s.size()), 0);
  for (Index j = 0; j < s.size(); ++j) {
    const double a = std::abs(s(j));
    mask[static_cast<std::size_t>(j)] = (a >= theta && a > 0.0) ? 1 : 0;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Connected components

/// 8-connected components of area >= min_area, each reduced to its tight
/// bounding box. Components are emitted in raster order of their first pixel.
/// If `weights` is given, a box's score is the sum of |weights| over the
/// component.
inline std::vector<Box> components_to_boxes(const std::vector<std::uint8_t>& mask, Geometry geo,
                                            int min_area,
                                            const Eigen::Ref<const Vector>* weights = nullptr) {
  const int H = geo.height;
  const int W = geo.width;
  if (mask.size() != static_cast<std::size_t>(H) * W)
    throw InvalidInput("components_to_boxes: mask size does not match geometry");
  std::vector<int> label(mask.size(), -1);
  std::vector<int> stack;
  std::vector<Box> boxes;
  int next_id = 0;
  for (int start = 0; start < H * W; ++start) {
    if (!mask[start] || label[start] >= 0) continue;
    int r0 = H, c0 = W, r1 = -1, c1 = -1;
    long area = 0;
    double mass = 0.0;
    stack.assign(1, start);
    label[start] = next_id;
    while (!stack.empty()) {
      const int j = stack.back();
      stack.pop_back();
      const int r = j / W;
      const int c = j % W;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
      ++area;
      if (weights) mass += std::abs((*weights)(j));
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
          const int k = rr * W + cc;
          if (mask[k] && label[k] < 0) {
            label[k] = next_id;
            stack.push_back(k);
          }
        }
      }
    }
    ++next_id;
    if (area >= min_area) {
      Box b{c0, r0, c1 - c0 + 1, r1 - r0 + 1, static_cast<int>(boxes.size()), mass};
      boxes.push_back(b);
    }
  }
  return boxes;
}

struct DetectOptions {
  ThresholdPolicy threshold = MadThreshold{};
  int min_area = 2;
};

/// Segments every column of S with one batch-level threshold and extracts
/// boxes per frame.
inline DetectionSet detect(const Matrix& S, Geometry geo, const DetectOptions& opt = {}) {
  const double theta = resolve_threshold(S, opt.threshold);
  DetectionSet out(static_cast<std::size_t>(S.cols()));
  for (Index i = 0; i < S.cols(); ++i) {
    const Eigen::Ref<const Vector> col = S.col(i);
    auto mask = segment(col, geo, theta);
    out[static_cast<std::size_t>(i)] = components_to_boxes(mask, geo, opt.min_area, &col);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct MetricsReport {
  long tp = 0;
  long fn = 0;
  long fp = 0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double iou_threshold = 0.3;
  long rank_B = -1; // -1 when not attached to a decomposition
};

inline double f1_score(double recall, double precision) {
  return recall + precision > 0.0 ? 2.0 * recall * precision / (recall + precision) : 0.0;
}

/// Fills recall / precision / f1 from the counts; empty denominators give 0.
inline void finalize_rates(MetricsReport& m) {
  m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
  m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
  m.f1 = f1_score(m.recall, m.precision);
}

/// Greedy one-to-one matching of one frame in descending IoU order; ties
/// broken by (gt index, det index). Returns the matched (gt, det) pairs.
inline std::vector<std::pair<std::size_t, std::size_t>>
match_frame(const std::vector<Box>& dets, const std::vector<Box>& gt, double iou_threshold) {
  struct Cand {
    double iou;
    std::size_t g;
    std::size_t d;
  };
  std::vector<Cand> cands;
  for (std::size_t g = 0; g < gt.size(); ++g)
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const double v = iou(gt[g], dets[d]);
      if (v >= iou_threshold && v > 0.0) cands.push_back({v, g, d});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    return std::tie(a.g, a.d) < std::tie(b.g, b.d);
  });
  std::vector<char> gt_used(gt.size(), 0);
  std::vector<char> det_used(dets.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const Cand& c : cands) {
    if (gt_used[c.g] || det_used[c.d]) continue;
    gt_used[c.g] = det_used[c.d] = 1;
    pairs.emplace_back(c.g, c.d);
  }
  return pairs;
}

/// Micro-aggregated TP / FN / FP over all frames.
inline MetricsReport match_and_score(const DetectionSet& dets, const GroundTruthBoxes& gt,
                                     double iou_threshold) {
  if (dets.size() != gt.size())
    throw InvalidInput("match_and_score: " + std::to_string(dets.size()) + " detection frames vs " +
                       std::to_string(gt.size()) + " ground-truth frames");
  MetricsReport m;
  m.iou_threshold = iou_threshold;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    const long matched = static_cast<long>(match_frame(dets[f], gt[f], iou_threshold).size());
    m.tp += matched;
    m.fn += static_cast<long>(gt[f].size()) - matched;
    m.fp += static_cast<long>(dets[f].size()) - matched;
  }
  finalize_rates(m);
  return m;
}

inline std::vector<MetricsReport> sweep_iou(const DetectionSet& dets, const GroundTruthBoxes& gt,
                                            const std::vector<double>& thresholds) {
  for (double t : thresholds)
    if (!(t > 0.0 && t < 1.0)) throw InvalidParameter("sweep_iou: thresholds must lie in (0, 1)");
  std::vector<MetricsReport> curve;
  curve.reserve(thresholds.size());
  for (double t : thresholds) curve.push_back(match_and_score(dets, gt, t));
  return curve;
}

} // namespace elsd

#endif // ELSD_DETECTION_HPP
