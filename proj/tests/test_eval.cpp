#include <doctest.h>

#include <fstream>
#include <random>

#include "fustal/errors.hpp"
#include "fustal/eval.hpp"
#include "helpers.hpp"

using namespace fustal;
using namespace fustal::eval;
using testing::proposal;
using testing::segment;

namespace {

std::vector<GroundTruthSegment> five_video_gt() {
  return {segment("v0", 10, 30, 0), segment("v1", 5, 13, 1), segment("v1", 40, 70, 0),
          segment("v2", 0, 16, 2),  segment("v3", 20, 24, 1), segment("v4", 50, 90, 2)};
}

std::vector<Proposal> as_predictions(const std::vector<GroundTruthSegment>& gt, double shift_fraction) {
  std::vector<Proposal> ps;
  double conf = 0.9;
  for (const auto& g : gt) {
    const double d = g.interval.length() * shift_fraction;
    ps.push_back(proposal(g.video_id, g.interval.start() + d, g.interval.end() + d, g.class_id, conf));
    conf -= 0.05;
  }
  return ps;
}

}  // namespace

TEST_CASE("hand-traced AP cases") {
  const std::vector<GroundTruthSegment> gt{segment("v", 0, 10, 0)};
  CHECK(average_precision(std::vector<Proposal>{proposal("v", 0, 10, 0, 0.9), proposal("v", 20, 30, 0, 0.8)}, gt,
                          0.5) == 1.0);
  CHECK(average_precision(std::vector<Proposal>{proposal("v", 0, 10, 0, 0.8), proposal("v", 20, 30, 0, 0.9)}, gt,
                          0.5) == 0.5);
  CHECK(average_precision(std::vector<Proposal>{proposal("v", 0, 10, 0, 0.8)}, gt, 0.5) == 1.0);
  CHECK(average_precision(std::vector<Proposal>{}, gt, 0.5) == 0.0);
  CHECK(average_precision(std::vector<Proposal>{proposal("v", 0, 10, 0, 0.8)}, std::vector<GroundTruthSegment>{},
                          0.5) == 0.0);
}

TEST_CASE("one ground-truth segment matches at most one prediction") {
  const std::vector<GroundTruthSegment> gt{segment("v", 0, 10, 0), segment("v", 20, 30, 0)};
  // Two hits on the first segment: the second is a false positive.
  const std::vector<Proposal> ps{proposal("v", 0, 10, 0, 0.9), proposal("v", 0, 9, 0, 0.8),
                                 proposal("v", 20, 30, 0, 0.7)};
  CHECK(average_precision(ps, gt, 0.5) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0));
}

TEST_CASE("perfect predictions give 1.0 everywhere") {
  const auto gt = five_video_gt();
  const auto table = map_suite(as_predictions(gt, 0.0), gt);
  for (double m : table.map) CHECK(m == 1.0);
  CHECK(table.avg_01_05 == 1.0);
  CHECK(table.avg_03_07 == 1.0);
  CHECK(table.avg_01_07 == 1.0);
  CHECK(table.tious == default_tious());
}

TEST_CASE("half-length shift lowers mAP as tiou rises") {
  const auto gt = five_video_gt();
  const auto table = map_suite(as_predictions(gt, 0.5), gt);
  for (std::size_t i = 1; i < table.map.size(); ++i) CHECK(table.map[i] <= table.map[i - 1]);
  CHECK(table.map.front() > table.map.back());
  CHECK(table.avg_01_07 < 1.0);
}

TEST_CASE("tiou zero only checks classes") {
  const auto gt = five_video_gt();
  std::vector<Proposal> ps;
  for (const auto& g : gt) ps.push_back(proposal(g.video_id, 100, 101, g.class_id, 0.5));
  const auto table = map_suite(ps, gt, {0.0});
  CHECK(table.map[0] == 1.0);
}

TEST_CASE("AP properties on random sets") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    // Ground truth sits in disjoint 12-snippet slots, so at tiou 0.5 no
    // prediction can match two segments.
    std::vector<GroundTruthSegment> gt;
    std::vector<Proposal> ps;
    for (int slot = 0; slot < 6; ++slot) {
      const double s = slot * 12.0 + 4 * u(rng);
      gt.push_back(segment(slot % 2 ? "a" : "b", s, s + 2 + 6 * u(rng), 0));
    }
    for (int i = 0; i < 10; ++i) {
      const double s = 72 * u(rng);
      ps.push_back(proposal(i % 2 ? "a" : "b", s, s + 2 + 6 * u(rng), 0, u(rng)));
    }
    const double ap = average_precision(ps, gt, 0.5);
    CHECK(ap >= 0.0);
    CHECK(ap <= 1.0);

    for (const auto& p : ps) {
      auto dup = ps;
      auto copy = p;
      copy.conf -= 1.0;
      dup.push_back(copy);
      CHECK(average_precision(dup, gt, 0.5) <= ap + 1e-12);
    }

    for (std::size_t i = 0; i < ps.size(); ++i) {
      double best = 0;
      for (const auto& g : gt)
        if (g.video_id == ps[i].video_id) best = std::max(best, iou(g.interval, ps[i].interval));
      if (best < 0.5) {
        auto fewer = ps;
        fewer.erase(fewer.begin() + long(i));
        CHECK(average_precision(fewer, gt, 0.5) >= ap - 1e-12);
      }
    }
  }
}

TEST_CASE("classes without ground truth are skipped") {
  const std::vector<GroundTruthSegment> gt{segment("v", 0, 10, 0)};
  const std::vector<Proposal> ps{proposal("v", 0, 10, 0, 0.9), proposal("v", 0, 10, 3, 0.9)};
  CHECK(map_suite(ps, gt).avg_01_07 == 1.0);
}

TEST_CASE("evaluation errors") {
  CHECK_THROWS_AS(map_suite(std::vector<Proposal>{}, std::vector<GroundTruthSegment>{}), EvalError);
  const std::vector<GroundTruthSegment> gt{segment("v", 0, 10, 0)};
  CHECK_THROWS_AS(map_suite(std::vector<Proposal>{}, gt, {}), EvalError);
}

TEST_CASE("metrics CSV round trip and layout") {
  testing::TempDir dir("metrics");
  const auto gt = five_video_gt();
  std::vector<MetricsRow> rows{{"perfect", map_suite(as_predictions(gt, 0.0), gt)},
                               {"shifted", map_suite(as_predictions(gt, 0.5), gt)}};
  write_metrics_csv(dir / "m.csv", rows, dataio::ArtifactMeta{"h", 3, "metrics"});
  std::ifstream in(dir / "m.csv");
  std::string meta, header, first;
  std::getline(in, meta);
  std::getline(in, header);
  std::getline(in, first);
  CHECK(meta == "# config_hash=h seed=3");
  CHECK(header == "method,0.1,0.2,0.3,0.4,0.5,0.6,0.7,avg_0.1:0.5,avg_0.3:0.7,avg_0.1:0.7");
  CHECK(first == "perfect,100.00,100.00,100.00,100.00,100.00,100.00,100.00,100.00,100.00,100.00");

  const auto back = read_metrics_csv(dir / "m.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].name == "shifted");
  CHECK(back[1].table.avg_01_07 == doctest::Approx(rows[1].table.avg_01_07).epsilon(1e-4));
  CHECK(format_table(back).find("shifted") != std::string::npos);
}
