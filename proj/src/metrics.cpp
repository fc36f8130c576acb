#include "stsx/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

namespace stsx {
namespace {

bool is_ignored(int label, std::span<const int> ignored) {
  return std::find(ignored.begin(), ignored.end(), label) != ignored.end();
}

std::vector<Segment> kept_segments(std::span<const int> labels, std::span<const int> ignored) {
  auto segments = extract_segments(labels);
  std::erase_if(segments, [&](const Segment& s) { return is_ignored(s.label, ignored); });
  return segments;
}

std::string format_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

double frame_accuracy(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size()) {
    throw ContractError("frame_accuracy: lengths " + std::to_string(pred.size()) + " and " +
                        std::to_string(gt.size()) + " differ");
  }
  if (gt.empty()) throw ContractError("frame_accuracy: empty sequences");
  std::size_t correct = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) correct += pred[t] == gt[t];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(gt.size());
}

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double edit_score(std::span<const int> pred, std::span<const int> gt, std::span<const int> ignored) {
  std::vector<int> p;
  std::vector<int> g;
  for (const auto& s : kept_segments(pred, ignored)) p.push_back(s.label);
  for (const auto& s : kept_segments(gt, ignored)) g.push_back(s.label);
  const std::size_t denom = std::max(p.size(), g.size());
  if (denom == 0) return 100.0;
  return 100.0 * (1.0 - static_cast<double>(levenshtein(p, g)) / static_cast<double>(denom));
}

double F1Counts::precision() const {
  const std::size_t d = tp + fp;
  return d == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(d);
}

double F1Counts::recall() const {
  const std::size_t d = tp + fn;
  return d == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(d);
}

double F1Counts::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r == 0.0 ? 0.0 : 100.0 * 2.0 * p * r / (p + r);
}

F1Counts f1_counts(std::span<const int> pred, std::span<const int> gt, double threshold,
                   std::span<const int> ignored) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("F1 threshold must lie in (0, 1)");
  const auto p = kept_segments(pred, ignored);
  const auto g = kept_segments(gt, ignored);
  std::vector<bool> hit(g.size(), false);
  F1Counts counts;
  for (const auto& s : p) {
    double best = -1.0;
    std::size_t best_idx = g.size();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (hit[j] || g[j].label != s.label) continue;
      const double iou = tiou(s, g[j]);
      if (iou > best) {
        best = iou;
        best_idx = j;
      }
    }
    if (best_idx < g.size() && best > threshold) {
      hit[best_idx] = true;
      ++counts.tp;
    } else {
      ++counts.fp;
    }
  }
  counts.fn = g.size() - counts.tp;
  return counts;
}

VideoMetrics evaluate_video(const std::string& id, std::span<const int> pred, std::span<const int> gt,
                            std::span<const int> ignored) {
  VideoMetrics m;
  m.video = id;
  m.row.acc = frame_accuracy(pred, gt);
  m.row.edit = edit_score(pred, gt, ignored);
  for (std::size_t k = 0; k < kF1Thresholds.size(); ++k) {
    m.counts[k] = f1_counts(pred, gt, kF1Thresholds[k], ignored);
    m.row.f1[k] = m.counts[k].f1();
  }
  m.frames = gt.size();
  for (std::size_t t = 0; t < gt.size(); ++t) m.correct += pred[t] == gt[t];
  return m;
}

MetricRow aggregate(std::span<const VideoMetrics> videos) {
  MetricRow row;
  if (videos.empty()) return row;
  std::array<F1Counts, 3> pooled{};
  std::size_t frames = 0;
  std::size_t correct = 0;
  double edit = 0.0;
  for (const auto& v : videos) {
    for (std::size_t k = 0; k < pooled.size(); ++k) {
      pooled[k].tp += v.counts[k].tp;
      pooled[k].fp += v.counts[k].fp;
      pooled[k].fn += v.counts[k].fn;
    }
    frames += v.frames;
    correct += v.correct;
    edit += v.row.edit;
  }
  for (std::size_t k = 0; k < pooled.size(); ++k) row.f1[k] = pooled[k].f1();
  row.edit = edit / static_cast<double>(videos.size());
  row.acc = frames == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(frames);
  return row;
}

std::string EvalReport::to_tsv() const {
  std::string out = "name\tF1@10\tF1@25\tF1@50\tEdit\tAcc\n";
  for (const auto& e : entries) {
    out += e.name;
    for (double f : e.corpus.f1) out += "\t" + format_fixed(f);
    out += "\t" + format_fixed(e.corpus.edit) + "\t" + format_fixed(e.corpus.acc) + "\n";
  }
  return out;
}

namespace {

nlohmann::ordered_json row_json(const MetricRow& r) {
  nlohmann::ordered_json j;
  j["F1@10"] = r.f1[0];
  j["F1@25"] = r.f1[1];
  j["F1@50"] = r.f1[2];
  j["Edit"] = r.edit;
  j["Acc"] = r.acc;
  return j;
}

MetricRow row_from_json(const nlohmann::json& j) {
  MetricRow r;
  r.f1 = {j.at("F1@10").get<double>(), j.at("F1@25").get<double>(), j.at("F1@50").get<double>()};
  r.edit = j.at("Edit").get<double>();
  r.acc = j.at("Acc").get<double>();
  return r;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json root = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json entry;
    entry["name"] = e.name;
    entry["corpus"] = row_json(e.corpus);
    auto videos = nlohmann::ordered_json::array();
    for (const auto& v : e.videos) {
      nlohmann::ordered_json jv;
      jv["video"] = v.video;
      jv["metrics"] = row_json(v.row);
      auto counts = nlohmann::ordered_json::array();
      for (const auto& c : v.counts) counts.push_back({c.tp, c.fp, c.fn});
      jv["f1_counts"] = counts;
      jv["frames"] = v.frames;
      jv["correct"] = v.correct;
      videos.push_back(jv);
    }
    entry["videos"] = videos;
    root.push_back(entry);
  }
  return root.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport report;
  try {
    const auto root = nlohmann::json::parse(text);
    for (const auto& entry : root) {
      Entry e;
      e.name = entry.at("name").get<std::string>();
      e.corpus = row_from_json(entry.at("corpus"));
      for (const auto& jv : entry.at("videos")) {
        VideoMetrics v;
        v.video = jv.at("video").get<std::string>();
        v.row = row_from_json(jv.at("metrics"));
        const auto& counts = jv.at("f1_counts");
        for (std::size_t k = 0; k < v.counts.size(); ++k) {
          v.counts[k] = {counts.at(k).at(0).get<std::size_t>(), counts.at(k).at(1).get<std::size_t>(),
                         counts.at(k).at(2).get<std::size_t>()};
        }
        v.frames = jv.at("frames").get<std::size_t>();
        v.correct = jv.at("correct").get<std::size_t>();
        e.videos.push_back(std::move(v));
      }
      report.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IntegrityError(std::string("malformed report JSON: ") + ex.what());
  }
  return report;
}

}  // namespace stsx
