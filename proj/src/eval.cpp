#include "fustal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fustal/errors.hpp"

namespace fustal::eval {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double range_mean(const MapTable& t, double lo, double hi) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.tious.size(); ++i) {
    if (t.tious[i] >= lo - 1e-9 && t.tious[i] <= hi + 1e-9) {
      sum += t.map[i];
      ++n;
    }
  }
  return n ? sum / double(n) : 0.0;
}

}  // namespace

double average_precision(std::span<const Proposal> predictions, std::span<const GroundTruthSegment> ground_truth,
                         double tiou) {
  if (ground_truth.empty()) return 0.0;
  std::vector<const Proposal*> order;
  order.reserve(predictions.size());
  for (const auto& p : predictions) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(), [](const Proposal* a, const Proposal* b) {
    if (a->conf != b->conf) return a->conf > b->conf;
    return a->interval.start() < b->interval.start();
  });

  std::map<std::string, std::vector<std::size_t>> gt_by_video;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) gt_by_video[ground_truth[i].video_id].push_back(i);
  std::vector<bool> used(ground_truth.size(), false);

  const double npos = double(ground_truth.size());
  std::vector<double> precision, recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  double tp = 0.0, fp = 0.0;
  for (const auto* p : order) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    if (const auto it = gt_by_video.find(p->video_id); it != gt_by_video.end()) {
      for (auto g : it->second) {
        if (used[g]) continue;
        const double v = iou(p->interval, ground_truth[g].interval);
        if (v >= tiou && v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
    }
    if (best) {
      used[*best] = true;
      tp += 1.0;
    } else {
      fp += 1.0;
    }
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / npos);
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return std::clamp(ap, 0.0, 1.0);
}

std::vector<double> default_tious() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}; }

MapTable map_suite(std::span<const Proposal> predictions, std::span<const GroundTruthSegment> ground_truth,
                   std::vector<double> tious) {
  if (ground_truth.empty()) throw EvalError("map_suite: ground truth is empty");
  if (tious.empty()) throw EvalError("map_suite: no tIoU thresholds given");

  std::set<int> classes;
  for (const auto& g : ground_truth) classes.insert(g.class_id);
  const std::vector<int> class_list(classes.begin(), classes.end());
  std::map<int, std::vector<Proposal>> preds;
  std::map<int, std::vector<GroundTruthSegment>> gts;
  for (const auto& p : predictions)
    if (classes.count(p.class_id)) preds[p.class_id].push_back(p);
  for (const auto& g : ground_truth) gts[g.class_id].push_back(g);

  const std::size_t nc = class_list.size(), nt = tious.size();
  std::vector<double> ap(nc * nt, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t job = 0; job < nc * nt; ++job) {
    const int c = class_list[job / nt];
    const auto pit = preds.find(c);
    const std::span<const Proposal> pc = pit == preds.end() ? std::span<const Proposal>{} : pit->second;
    ap[job] = average_precision(pc, gts.at(c), tious[job % nt]);
  }

  MapTable t;
  t.tious = std::move(tious);
  t.map.assign(nt, 0.0);
  for (std::size_t j = 0; j < nt; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < nc; ++i) s += ap[i * nt + j];
    t.map[j] = s / double(nc);
  }
  t.avg_01_05 = range_mean(t, 0.1, 0.5);
  t.avg_03_07 = range_mean(t, 0.3, 0.7);
  t.avg_01_07 = range_mean(t, 0.1, 0.7);
  return t;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows,
                       const std::optional<dataio::ArtifactMeta>& meta) {
  if (rows.empty()) throw ContractError("write_metrics_csv: no rows");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  if (meta) out << "# config_hash=" << meta->config_hash << " seed=" << meta->seed << "\n";
  out << "method";
  for (double t : rows.front().table.tious) out << ',' << fmt("%.1f", t);
  out << ",avg_0.1:0.5,avg_0.3:0.7,avg_0.1:0.7\n";
  for (const auto& r : rows) {
    if (r.name.find(',') != std::string::npos) throw ContractError("metrics row name contains a comma: " + r.name);
    out << r.name;
    for (double v : r.table.map) out << ',' << fmt("%.2f", 100.0 * v);
    out << ',' << fmt("%.2f", 100.0 * r.table.avg_01_05) << ',' << fmt("%.2f", 100.0 * r.table.avg_03_07) << ','
        << fmt("%.2f", 100.0 * r.table.avg_01_07) << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::string line;
  std::vector<double> tious;
  std::vector<MetricsRow> rows;
  std::size_t offset = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (!have_header) {
      if (cells.size() < 5 || cells[0] != "method") throw FormatError(path.string(), here, "missing metrics header");
      for (std::size_t i = 1; i + 3 < cells.size(); ++i) tious.push_back(std::stod(cells[i]));
      have_header = true;
      continue;
    }
    if (cells.size() != tious.size() + 4) throw FormatError(path.string(), here, "wrong number of columns");
    MetricsRow r;
    r.name = cells[0];
    r.table.tious = tious;
    try {
      for (std::size_t i = 0; i < tious.size(); ++i) r.table.map.push_back(std::stod(cells[1 + i]) / 100.0);
      r.table.avg_01_05 = std::stod(cells[tious.size() + 1]) / 100.0;
      r.table.avg_03_07 = std::stod(cells[tious.size() + 2]) / 100.0;
      r.table.avg_01_07 = std::stod(cells[tious.size() + 3]) / 100.0;
    } catch (const std::logic_error&) {
      throw FormatError(path.string(), here, "non-numeric metric value");
    }
    rows.push_back(std::move(r));
  }
  if (!have_header) throw FormatError(path.string(), 0, "empty metrics file");
  return rows;
}

std::string format_table(std::span<const MetricsRow> rows) {
  std::ostringstream out;
  if (rows.empty()) return {};
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  out << std::string(w, ' ');
  for (double t : rows.front().table.tious) out << "  " << fmt("%5.1f", t);
  out << "  avg.1:.5  avg.3:.7  avg.1:.7\n";
  for (const auto& r : rows) {
    out << r.name << std::string(w - r.name.size(), ' ');
    for (double v : r.table.map) out << "  " << fmt("%5.1f", 100.0 * v);
    out << "  " << fmt("%8.1f", 100.0 * r.table.avg_01_05) << "  " << fmt("%8.1f", 100.0 * r.table.avg_03_07) << "  "
        << fmt("%8.1f", 100.0 * r.table.avg_01_07) << '\n';
  }
  return out.str();
}

}  // namespace fustal::eval
