#include <algorithm>
#include <cmath>
#include <random>

#include "../oracles/metrics_oracle.hpp"
#include "crs/errors.hpp"
#include "crs/metrics.hpp"
#include "doctest.h"

using namespace crs;
using namespace crs::metrics;

namespace {

std::vector<int> from_cm(std::size_t tn, std::size_t fp, std::size_t fn, std::size_t tp,
                         std::vector<int>* predicted) {
  std::vector<int> labels;
  auto push = [&](std::size_t count, int y, int p) {
    for (std::size_t i = 0; i < count; ++i) {
      labels.push_back(y);
      predicted->push_back(p);
    }
  };
  push(tn, 0, 0);
  push(fp, 0, 1);
  push(fn, 1, 0);
  push(tp, 1, 1);
  return labels;
}

PredictionSet make_set(const std::vector<int>& labels, const std::vector<double>& scores) {
  PredictionSet ps;
  ps.model = "m";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "C%04zu", i);
    ps.case_ids.push_back(id);
    ps.labels.push_back(labels[i]);
    ps.scores.push_back(scores[i]);
    ps.hard_labels.push_back(scores[i] >= 0.5);
  }
  return ps;
}

}  // namespace

TEST_CASE("confusion matrix") {
  std::vector<int> pred;
  auto labels = from_cm(5, 15, 7, 78, &pred);
  CHECK(confusion(labels, pred) == ConfusionMatrix{5, 15, 7, 78});

  std::vector<int> y{0, 1, 1};
  CHECK(confusion(y, y) == ConfusionMatrix{1, 0, 0, 2});

  std::vector<int> truth(105, 1), all_ones(105, 1);
  for (int i = 0; i < 20; ++i) truth[static_cast<std::size_t>(i)] = 0;
  CHECK(confusion(truth, all_ones) == ConfusionMatrix{0, 20, 0, 85});

  std::vector<int> short_pred{1};
  CHECK_THROWS_AS(confusion(y, short_pred), ValidationError);
}

TEST_CASE("threshold metrics") {
  auto a = threshold_metrics({5, 15, 7, 78});
  CHECK(a.accuracy == doctest::Approx(0.79).epsilon(0.005));
  CHECK(a.recall0 == doctest::Approx(0.25));
  CHECK(a.precision0 == doctest::Approx(5.0 / 12));
  CHECK(a.balanced_accuracy == doctest::Approx((0.25 + 78.0 / 85) / 2));

  auto c = threshold_metrics({6, 14, 3, 82});
  CHECK(c.accuracy == doctest::Approx(88.0 / 105));
  CHECK(c.recall1 == doctest::Approx(82.0 / 85));

  auto m = threshold_metrics({0, 20, 1, 84});
  CHECK(m.precision0 == 0.0);
  CHECK(m.recall0 == 0.0);
  CHECK(m.undefined.empty());

  auto never_zero = threshold_metrics({0, 20, 0, 85});
  CHECK(never_zero.precision0 == 0.0);
  CHECK(std::find(never_zero.undefined.begin(), never_zero.undefined.end(), "precision0") !=
        never_zero.undefined.end());

  auto all_pos = threshold_metrics({0, 20, 0, 85});
  CHECK(all_pos.balanced_accuracy == doctest::Approx(0.5));
  CHECK(all_pos.f1_pos == doctest::Approx(2 * 85.0 / (2 * 85 + 20)));

  CHECK_THROWS_AS(threshold_metrics({}), ValidationError);
}

TEST_CASE("threshold metrics round trip through predictions") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.6);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> y, p;
    for (int i = 0; i < 50; ++i) {
      y.push_back(coin(rng));
      p.push_back(coin(rng));
    }
    double direct = 0;
    for (std::size_t i = 0; i < y.size(); ++i) direct += y[i] == p[i];
    CHECK(threshold_metrics(confusion(y, p)).accuracy == doctest::Approx(direct / 50));
  }
}

TEST_CASE("auroc") {
  std::vector<int> y{1, 1, 0, 0};
  std::vector<double> perfect{0.9, 0.8, 0.7, 0.6};
  CHECK(auroc(y, perfect) == 1.0);
  std::vector<double> flat(4, 0.3);
  CHECK(auroc(y, flat) == 0.5);
  std::vector<int> one_class{1, 1};
  std::vector<double> s2{0.1, 0.2};
  CHECK_THROWS_AS(auroc(one_class, s2), ValidationError);

  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_instance(rng, 12, rep % 2 == 0);
    CHECK(std::fabs(auroc(inst.labels, inst.scores) -
                    oracle::pair_count_auc(inst.labels, inst.scores)) <= 1e-12);
  }
}

TEST_CASE("average precision") {
  std::vector<int> y{1, 1, 0, 0};
  std::vector<double> perfect{0.9, 0.8, 0.7, 0.6};
  CHECK(average_precision(y, perfect) == 1.0);
  std::vector<int> last{0, 0, 0, 1};
  std::vector<double> desc{0.9, 0.8, 0.7, 0.6};
  CHECK(average_precision(last, desc) == doctest::Approx(0.25));
  std::vector<int> mix{1, 0, 1, 1, 0};
  std::vector<double> flat(5, 0.4);
  CHECK(average_precision(mix, flat) == doctest::Approx(0.6));
  std::vector<int> none{0, 0};
  std::vector<double> s2{0.1, 0.2};
  CHECK_THROWS_AS(average_precision(none, s2), ValidationError);

  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_instance(rng, 40, rep % 2 == 1);
    CHECK(std::fabs(average_precision(inst.labels, inst.scores) -
                    oracle::step_sum_ap(inst.labels, inst.scores)) <= 1e-12);
  }
}

TEST_CASE("brier") {
  std::vector<int> y{1, 0};
  std::vector<double> sure{1.0, 0.0}, half{0.5, 0.5}, mix{0.8, 0.3};
  CHECK(brier(y, sure) == 0.0);
  CHECK(brier(y, half) == 0.25);
  CHECK(brier(y, mix) == doctest::Approx(0.065));
}

TEST_CASE("reliability curve") {
  std::vector<int> y{1, 0, 1};
  std::vector<double> p(3, 0.55);
  auto bins = reliability_curve(y, p);
  REQUIRE(bins.size() == 10);
  int populated = 0;
  for (const auto& b : bins) {
    if (b.count) {
      ++populated;
      CHECK(b.center == doctest::Approx(0.55));
      CHECK(*b.empirical_rate == doctest::Approx(2.0 / 3));
    } else {
      CHECK_FALSE(b.mean_probability.has_value());
    }
  }
  CHECK(populated == 1);

  auto empty = reliability_curve({}, {});
  for (const auto& b : empty) {
    CHECK(b.count == 0);
    CHECK_FALSE(b.empirical_rate.has_value());
  }
  std::vector<double> edge{0.0, 1.0};
  std::vector<int> ye{0, 1};
  auto e = reliability_curve(ye, edge);
  CHECK(e.front().count == 1);
  CHECK(e.back().count == 1);
  CHECK_THROWS_AS(reliability_curve(ye, edge, 1), ValidationError);
}

TEST_CASE("net benefit anchors") {
  std::vector<int> y;
  for (int i = 0; i < 105; ++i) y.push_back(i < 20 ? 0 : 1);
  std::vector<double> t{0.5};
  std::vector<double> ones(105, 1.0);
  auto nb = net_benefit(y, ones, t);
  CHECK(nb[0].treat_all == doctest::Approx(85.0 / 105 - 20.0 / 105));
  CHECK(nb[0].model == doctest::Approx(nb[0].treat_all));

  std::vector<double> perfect(y.begin(), y.end());
  auto grid = default_thresholds();
  for (const auto& pt : net_benefit(y, perfect, grid)) {
    CHECK(pt.model == doctest::Approx(85.0 / 105));
    CHECK(pt.treat_none == 0.0);
  }
  std::vector<double> bad{1.0};
  CHECK_THROWS_AS(net_benefit(y, ones, bad), ValidationError);
}

TEST_CASE("roc and pr curves") {
  std::vector<int> y{1, 0, 1, 0};
  std::vector<double> s{0.9, 0.6, 0.6, 0.1};
  auto roc = roc_curve(y, s);
  CHECK(roc.front().fpr == 0.0);
  CHECK(roc.front().tpr == 0.0);
  CHECK(roc.back().fpr == 1.0);
  CHECK(roc.back().tpr == 1.0);
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  CHECK(area == doctest::Approx(auroc(y, s)));
  auto pr = pr_curve(y, s);
  CHECK(pr.back().recall == 1.0);
}

TEST_CASE("delong") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  std::vector<int> y;
  std::vector<double> a, b;
  for (int i = 0; i < 105; ++i) {
    int label = i % 5 != 0;
    y.push_back(label);
    a.push_back(z(rng) + 1.2 * label);
    b.push_back(z(rng) + 0.6 * label);
  }
  auto same = delong_test(y, a, a);
  CHECK(same.difference == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK(same.zero_variance);

  auto r = delong_test(y, a, b);
  CHECK(r.auc_a == auroc(y, a));
  CHECK(r.auc_b == auroc(y, b));
  CHECK(r.ci_low < r.difference);
  CHECK(r.difference < r.ci_high);
  auto boot = paired_bootstrap_auc(y, a, b, 2000, 9);
  CHECK(std::max(r.ci_low, boot.lo95) <= std::min(r.ci_high, boot.hi95));
  CHECK(std::fabs(r.p_value - boot.p_value) <= 0.05);
}

TEST_CASE("mcnemar") {
  auto build = [](std::size_t b, std::size_t c, std::size_t agree) {
    struct Out {
      std::vector<int> y, a, bb;
    } o;
    for (std::size_t i = 0; i < b; ++i) o.y.push_back(1), o.a.push_back(1), o.bb.push_back(0);
    for (std::size_t i = 0; i < c; ++i) o.y.push_back(1), o.a.push_back(0), o.bb.push_back(1);
    for (std::size_t i = 0; i < agree; ++i) o.y.push_back(0), o.a.push_back(0), o.bb.push_back(0);
    return o;
  };
  auto same = build(0, 0, 10);
  auto r0 = mcnemar(same.y, same.a, same.bb);
  CHECK(r0.p_value == 1.0);
  CHECK(r0.no_discordant_pairs);

  auto ten = build(10, 0, 5);
  auto r1 = mcnemar(ten.y, ten.a, ten.bb);
  CHECK(r1.b == 10);
  CHECK(r1.c == 0);
  CHECK(r1.exact);
  CHECK(r1.p_value == doctest::Approx(2 * std::pow(0.5, 10)));

  auto big = build(20, 10, 5);
  auto r2 = mcnemar(big.y, big.a, big.bb);
  CHECK_FALSE(r2.exact);
  CHECK(r2.statistic == doctest::Approx(2.7));
  CHECK(r2.p_value == doctest::Approx(0.1003).epsilon(1e-3));
}

TEST_CASE("bootstrap") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  std::vector<int> y;
  std::vector<double> s;
  for (int i = 0; i < 105; ++i) {
    int label = i % 5 != 0;
    y.push_back(label);
    s.push_back(1 / (1 + std::exp(-(z(rng) + 1.5 * label))));
  }
  auto data = make_set(y, s);

  auto constant = bootstrap_ci([](const PredictionSet&) { return 0.42; }, data, 200, 1);
  CHECK(constant.lo95 == 0.42);
  CHECK(constant.hi95 == 0.42);

  auto acc = [](const PredictionSet& p) {
    return threshold_metrics(confusion(p.labels, p.hard_labels)).accuracy;
  };
  auto a = bootstrap_ci(acc, data, 2000, 1);
  auto b = bootstrap_ci(acc, data, 2000, 2);
  CHECK(a.point == acc(data));
  CHECK(std::fabs(a.lo95 - b.lo95) < 0.02);
  CHECK(std::fabs(a.hi95 - b.hi95) < 0.02);
  CHECK(a.lo95 <= a.point);
  CHECK(a.point <= a.hi95);

  auto again = bootstrap_ci(acc, data, 2000, 1);
  CHECK(again.samples == a.samples);
  auto threaded = bootstrap_ci(acc, data, 2000, 1, 4);
  CHECK(threaded.samples == a.samples);

  CHECK_THROWS_AS(bootstrap_ci(acc, data, 50, 1), ValidationError);
  // One class-0 case in 30: about a third of raw draws lose it and are redrawn.
  std::vector<int> rare(30, 1);
  rare[0] = 0;
  auto lonely = make_set(rare, std::vector<double>(30, 0.9));
  auto redrawn = bootstrap_ci(acc, lonely, 300, 1);
  CHECK(redrawn.redraws > 50);
  CHECK(redrawn.redraws < 300);
}

TEST_CASE("permutation importance") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z;
  Dataset ds;
  ds.x = Matrix(200, 3);
  for (std::size_t i = 0; i < 200; ++i) {
    for (std::size_t j = 0; j < 3; ++j) ds.x(i, j) = z(rng);
    ds.y.push_back(ds.x(i, 1) > 0);
    ds.case_ids.push_back(std::to_string(i));
  }
  for (std::size_t i = 0; i < 200; ++i) ds.x(i, 2) = 1.0;
  ds.feature_names = {"noise", "driver", "flat"};
  BatchClassifier model = [](const Matrix& x) {
    std::vector<int> out;
    for (std::size_t i = 0; i < x.rows; ++i) out.push_back(x(i, 1) > 0);
    return out;
  };
  auto driver = permutation_importance(model, ds, 1, 20, 3);
  CHECK(driver.mean_delta_balanced_accuracy > 0.3);
  auto driver1 = permutation_importance(model, ds, 1, 1, 3);
  CHECK(driver1.mean_delta_balanced_accuracy > 0);
  auto noise = permutation_importance(model, ds, 0, 20, 3);
  CHECK(noise.mean_delta_balanced_accuracy == 0.0);
  auto flat = permutation_importance(model, ds, 2, 20, 3);
  CHECK(flat.constant);
  CHECK(flat.mean_delta_balanced_accuracy == 0.0);
  CHECK(permutation_importance(model, ds, 1, 20, 3).deltas == driver.deltas);
  CHECK_THROWS_AS(permutation_importance(model, ds, 3, 20, 3), ValidationError);
}

TEST_CASE("evaluate and compare") {
  std::vector<int> y;
  std::vector<double> s;
  for (int i = 0; i < 40; ++i) {
    y.push_back(i % 4 != 0);
    s.push_back((i % 7) / 7.0 * 0.5 + 0.5 * y.back());
  }
  auto ps = make_set(y, s);
  EvaluateOptions opts;
  opts.bootstrap_resamples = 200;
  auto report = evaluate(ps, opts);
  CHECK(report.n == 40);
  CHECK(*report.auroc == auroc(y, s));
  CHECK(report.auroc_ci.has_value());
  CHECK(report.cm == confusion(ps.labels, ps.hard_labels));
  auto j = to_json(report);
  CHECK(j.contains("net_benefit"));

  auto self = compare(ps, ps, 200, 1);
  CHECK(self.delong.p_value == 1.0);
  CHECK(self.mcnemar.p_value == 1.0);

  auto other = ps;
  other.case_ids[0] = "ZZZ";
  CHECK_THROWS_AS(compare(ps, other, 200, 1), ValidationError);

  PredictionSet proxy = ps;
  proxy.score_kind = ScoreKind::Proxy;
  proxy.scores.assign(40, -0.5);
  CHECK(proxy.probabilities()[0] == doctest::Approx(0.25));
  proxy.scores[0] = 1.5;
  CHECK_THROWS_AS(proxy.validate(), ValidationError);
}
