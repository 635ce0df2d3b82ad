// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "mudet/dataio.hpp"
#include "mudet/error.hpp"

namespace mudet {

std::size_t MatchResult::tp() const {
  return static_cast<std::size_t>(
      std::count_if(detections.begin(), detections.end(), [](const auto& d) { return d.tp; }));
}

std::size_t MatchResult::fp() const { return detections.size() - tp(); }

namespace {

bool match_before(const DetectionMatch& a, const DetectionMatch& b) {
  if (detection_before(a.det, b.det)) return true;
  if (detection_before(b.det, a.det)) return false;
  return a.image < b.image;
}

}  // namespace

MatchResult match_detections(std::vector<DetectionRecord> dets,
                             const std::vector<ObbAnnotation>& gts, double iou_threshold,
                             std::size_t image) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ValidationError("IoU threshold must lie in (0, 1]");
  }
  std::stable_sort(dets.begin(), dets.end(), detection_before);
  MatchResult m;
  m.num_gt = gts.size();
  std::vector<bool> used(gts.size(), false);
  for (const auto& d : dets) {
    DetectionMatch dm{d, false, -1, image};
    double best = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].class_id != d.obb.class_id) continue;
      const double iou = polygon_iou(d.obb, gts[g]);
      if (iou > best) {
        best = iou;
        dm.gt = static_cast<int>(g);
      }
    }
    if (dm.gt >= 0 && best >= iou_threshold) {
      dm.tp = true;
      used[static_cast<std::size_t>(dm.gt)] = true;
    } else {
      dm.gt = -1;
    }
    m.detections.push_back(dm);
  }
  return m;
}

MatchResult merge_matches(const std::vector<MatchResult>& parts) {
  MatchResult m;
  for (const auto& p : parts) {
    m.num_gt += p.num_gt;
    m.detections.insert(m.detections.end(), p.detections.begin(), p.detections.end());
  }
  std::stable_sort(m.detections.begin(), m.detections.end(), match_before);
  return m;
}

PrecisionRecall precision_recall(const MatchResult& m) {
  PrecisionRecall pr;
  const std::size_t tp = m.tp();
  if (!m.detections.empty()) pr.precision = static_cast<double>(tp) / m.detections.size();
  if (m.num_gt > 0) pr.recall = static_cast<double>(tp) / m.num_gt;
  return pr;
}

ApResult average_precision(const MatchResult& m, bool interpolate) {
  ApResult out;
  if (m.num_gt == 0) {
    out.no_ground_truth = true;
    return out;
  }
  std::vector<DetectionMatch> ranked = m.detections;
  std::stable_sort(ranked.begin(), ranked.end(), match_before);
  std::size_t tp = 0, i = 0;
  while (i < ranked.size()) {
    const double k = ranked[i].det.score;
    while (i < ranked.size() && ranked[i].det.score == k) {
      tp += ranked[i].tp;
      ++i;
    }
    out.curve.push_back({k, static_cast<double>(tp) / static_cast<double>(i),
                         static_cast<double>(tp) / static_cast<double>(m.num_gt)});
  }
  std::vector<double> prec(out.curve.size());
  for (std::size_t j = 0; j < prec.size(); ++j) prec[j] = out.curve[j].precision;
  if (interpolate) {
    for (std::size_t j = prec.size(); j-- > 1;) prec[j - 1] = std::max(prec[j - 1], prec[j]);
  }
  double prev_recall = 0.0;
  for (std::size_t j = 0; j < prec.size(); ++j) {
    out.ap += prec[j] * (out.curve[j].recall - prev_recall);
    prev_recall = out.curve[j].recall;
  }
  return out;
}

ApResult average_precision(const std::vector<DetectionRecord>& dets,
                           const std::vector<ObbAnnotation>& gts, double iou_threshold,
                           bool interpolate) {
  return average_precision(match_detections(dets, gts, iou_threshold), interpolate);
}

EvalResult evaluate(const std::vector<std::vector<DetectionRecord>>& dets,
                    const std::vector<std::vector<ObbAnnotation>>& gts, double iou_threshold,
                    bool interpolate) {
  if (dets.size() != gts.size()) {
    throw ValidationError("evaluate: " + std::to_string(dets.size()) + " detection lists for " +
                          std::to_string(gts.size()) + " images");
  }
  std::set<int> classes;
  EvalResult out;
  for (const auto& g : gts) {
    out.num_gt += g.size();
    for (const auto& a : g) classes.insert(a.class_id);
  }
  for (const auto& d : dets) out.num_det += d.size();
  for (int cls : classes) {
    std::vector<MatchResult> parts;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      std::vector<DetectionRecord> dc;
      std::vector<ObbAnnotation> gc;
      for (const auto& d : dets[i]) {
        if (d.obb.class_id == cls) dc.push_back(d);
      }
      for (const auto& a : gts[i]) {
        if (a.class_id == cls) gc.push_back(a);
      }
      parts.push_back(match_detections(std::move(dc), gc, iou_threshold, i));
    }
    out.per_class[cls] = average_precision(merge_matches(parts), interpolate);
  }
  for (const auto& [cls, r] : out.per_class) out.ap += r.ap;
  if (!out.per_class.empty()) out.ap /= static_cast<double>(out.per_class.size());
  return out;
}

std::string pr_csv(const PrCurve& curve) {
  std::string out = "threshold,precision,recall\n";
  char buf[96];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f\n", p.threshold, p.precision, p.recall);
    out += buf;
  }
  return out;
}

PrCurve parse_pr_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  PrCurve curve;
  while (std::getline(is, line)) {
    ++n;
    if (n == 1) {
      if (line != "threshold,precision,recall") throw ParseError("bad PR CSV header", 1);
      continue;
    }
    if (line.empty()) continue;
    PrPoint p;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf%c", &p.threshold, &p.precision, &p.recall,
                    &tail) != 3) {
      throw ParseError("expected 'threshold,precision,recall'", n);
    }
    curve.push_back(p);
  }
  if (n == 0) throw ParseError("empty PR CSV");
  return curve;
}

void emit_pr_csv(const PrCurve& curve, const std::filesystem::path& path) {
  write_file(path, pr_csv(curve));
}

}  // namespace mudet
