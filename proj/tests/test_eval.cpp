#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "peftseg/errors.hpp"
#include "peftseg/eval.hpp"

using namespace peftseg;

TEST_CASE("confusion counts and the hand example") {
  ConfusionMatrix cm(5);
  const std::vector<std::uint8_t> pred{0, 0, 1, 1}, truth{0, 1, 1, 1};
  peftseg::accumulate(pred, truth, cm);
  CHECK(cm.at(1, 0) == 1);
  CHECK(cm.at(1, 1) == 2);
  CHECK(cm.total() == 4);
  const auto r = metrics_from_confusion(cm);
  CHECK(r.per_class_iou[0] == doctest::Approx(0.5));
  CHECK(r.per_class_iou[1] == doctest::Approx(2.0 / 3.0));
  CHECK(std::isnan(r.per_class_iou[4]));
  CHECK(r.miou == doctest::Approx(7.0 / 12.0));
  CHECK(r.per_class_precision[1] == doctest::Approx(1.0));
  CHECK(r.per_class_recall[1] == doctest::Approx(2.0 / 3.0));
  CHECK(r.micro_dice == doctest::Approx(2.0 * 3 / (2.0 * 3 + 1 + 1)));
}

TEST_CASE("accumulate rejects bad input") {
  ConfusionMatrix cm(3);
  const std::vector<std::uint8_t> a{0, 1}, b{0}, c{0, 3};
  CHECK_THROWS_AS(peftseg::accumulate(a, b, cm), ShapeError);
  CHECK_THROWS_AS(peftseg::accumulate(c, a, cm), LabelError);
}

TEST_CASE("merged matrices equal one pass") {
  ConfusionMatrix a(3), b(3), all(3);
  const std::vector<std::uint8_t> p1{0, 1, 2}, t1{0, 2, 2}, p2{1, 1}, t2{1, 0};
  peftseg::accumulate(p1, t1, a);
  peftseg::accumulate(p2, t2, b);
  peftseg::accumulate(p1, t1, all);
  peftseg::accumulate(p2, t2, all);
  a.merge(b);
  CHECK(a == all);
}

TEST_CASE("aggregates use the sample standard deviation") {
  MetricsReport r1, r2, r3;
  r1.miou = 0.5;
  r2.miou = 0.7;
  r3.miou = 0.9;
  for (auto* r : {&r1, &r2, &r3}) r->per_class_iou = {r->miou, std::nan("")};
  const auto agg = aggregate_runs({r1, r2, r3});
  CHECK(agg.runs == 3);
  CHECK(agg.metrics.at("miou").mean == doctest::Approx(0.7));
  CHECK(agg.metrics.at("miou").std == doctest::Approx(0.2));
  CHECK(agg.per_class_iou[0].mean == doctest::Approx(0.7));
  const auto one = aggregate_runs({r1});
  CHECK(one.single_run);
  CHECK(one.metrics.at("miou").std == 0.0);
}

TEST_CASE("results table and chart data name every method") {
  MetricsReport r;
  r.miou = 0.8;
  r.per_class_iou = {0.9, 0.7, 0.8, 0.6, 0.5};
  std::vector<TableRow> rows{{"LoRA", 1234, aggregate_runs({r})}, {"AdapterH", 9'660'000, aggregate_runs({r})}};
  std::ostringstream table, csv;
  write_results_table(table, rows);
  write_per_class_csv(csv, rows, default_class_names());
  CHECK(table.str().find("LoRA") != std::string::npos);
  CHECK(table.str().find("9.66M") != std::string::npos);
  CHECK(csv.str().find("AdapterH,VEGETATION") != std::string::npos);
}

TEST_CASE("two-class confusion hand case") {
  ConfusionMatrix cm(2);
  const std::vector<std::uint8_t> pred{0, 0, 1, 1}, truth{0, 1, 1, 1};
  peftseg::accumulate(pred, truth, cm);
  CHECK(cm.counts() == std::vector<std::int64_t>{1, 0, 1, 2});
  ConfusionMatrix diag(3);
  peftseg::accumulate(truth, truth, diag);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(diag.at(i, j) == 0);
}

TEST_CASE("metric identities on random matrices") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint8_t> p(64), t(64);
    for (auto& v : p) v = static_cast<std::uint8_t>(rng() % 4);
    for (auto& v : t) v = static_cast<std::uint8_t>(rng() % 4);
    ConfusionMatrix cm(4), relabeled(4);
    peftseg::accumulate(p, t, cm);
    const std::array<std::uint8_t, 4> perm{2, 0, 3, 1};
    auto rp = p, rt = t;
    for (auto& v : rp) v = perm[v];
    for (auto& v : rt) v = perm[v];
    peftseg::accumulate(rp, rt, relabeled);
    const auto r = metrics_from_confusion(cm);
    CHECK(metrics_from_confusion(relabeled).miou == doctest::Approx(r.miou).epsilon(1e-14));
    for (int c = 0; c < 4; ++c)
      if (!std::isnan(r.per_class_iou[std::size_t(c)]))
        CHECK(r.per_class_dice[std::size_t(c)] ==
              doctest::Approx(2 * r.per_class_iou[std::size_t(c)] / (1 + r.per_class_iou[std::size_t(c)])).epsilon(1e-14));
    // Additivity over any split of the pixels.
    ConfusionMatrix parts(4);
    const std::size_t cut = rng() % 64;
    peftseg::accumulate(std::span(p).subspan(cut), std::span(t).subspan(cut), parts);
    peftseg::accumulate(std::span(p).first(cut), std::span(t).first(cut), parts);
    CHECK(parts == cm);
  }
}

TEST_CASE("perfect and constant-background predictions") {
  std::vector<std::uint8_t> t{0, 1, 2, 3, 4, 4, 0};
  ConfusionMatrix perfect(5), background(5);
  peftseg::accumulate(t, t, perfect);
  const auto r = metrics_from_confusion(perfect);
  CHECK(r.miou == 1.0);
  CHECK(r.macro_precision == 1.0);
  CHECK(r.macro_recall == 1.0);
  CHECK(r.macro_dice == 1.0);
  CHECK(r.micro_dice == 1.0);
  const std::vector<std::uint8_t> zeros(t.size(), 0);
  peftseg::accumulate(zeros, t, background);
  const auto b = metrics_from_confusion(background);
  for (int c = 1; c < 5; ++c) CHECK(b.per_class_iou[std::size_t(c)] == 0.0);
}

TEST_CASE("aggregate hand values") {
  MetricsReport a, b;
  a.miou = 0.4;
  b.miou = 0.5;
  const auto agg = aggregate_runs({a, b});
  CHECK(agg.metrics.at("miou").mean == doctest::Approx(0.45));
  CHECK(agg.metrics.at("miou").std == doctest::Approx(0.0707).epsilon(1e-3));
  CHECK(aggregate_runs({a, a, a}).metrics.at("miou").std == 0.0);
}
