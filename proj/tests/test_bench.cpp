#include <gtest/gtest.h>

#include <sstream>

#include "mtlu/bench.hpp"

using namespace mtlu;

namespace {

BenchOptions small(int repeats, bool backward = false) {
  BenchOptions o;
  o.shape = {1, 8, 16, 16};
  o.repeats = repeats;
  o.warmup = 0;
  o.backward = backward;
  return o;
}

int count(const std::string& s, char c) { return static_cast<int>(std::ranges::count(s, c)); }

}  // namespace

TEST(Bench, SingleRepeatGivesAWellFormedRow) {
  ActivationSpec spec;
  const BenchRow r = bench_activation(spec, small(1));
  EXPECT_EQ(r.activation, "mtlu");
  EXPECT_EQ(r.hyper, "bins=40");
  EXPECT_EQ(r.pass, "forward");
  EXPECT_EQ(r.elements, 8 * 16 * 16);
  EXPECT_EQ(r.repeats, 1);
  EXPECT_GE(r.median_ms, 0.0);
  EXPECT_EQ(r.iqr_ms, 0.0);
  std::ostringstream os;
  write_bench_csv_header(os);
  write_bench_csv_row(os, r);
  std::istringstream is(os.str());
  std::string head, row;
  std::getline(is, head);
  std::getline(is, row);
  EXPECT_EQ(count(head, ','), 6);
  EXPECT_EQ(count(row, ','), 6);
  EXPECT_EQ(row.rfind("mtlu,bins=40,forward,2048,1,", 0), 0u) << row;
}

TEST(Bench, EveryKindRunsBothPasses) {
  for (auto kind : {ActivationKind::relu, ActivationKind::prelu, ActivationKind::mtlu, ActivationKind::maxout,
                    ActivationKind::apl, ActivationKind::plf})
    for (bool back : {false, true}) {
      ActivationSpec spec;
      spec.kind = kind;
      const BenchRow r = bench_activation(spec, small(3, back));
      EXPECT_EQ(r.pass, back ? "backward" : "forward");
      EXPECT_GE(r.iqr_ms, 0.0);
    }
}

TEST(Bench, InvalidOptions) {
  EXPECT_THROW(bench_activation({}, small(0)), ConfigError);
  auto o = small(1);
  o.warmup = -1;
  EXPECT_THROW(bench_activation({}, o), ConfigError);
}

TEST(Bench, QuantileInterpolates) {
  EXPECT_EQ(detail::quantile({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_EQ(detail::quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_EQ(detail::quantile({1, 2, 3, 4, 5}, 0.75) - detail::quantile({1, 2, 3, 4, 5}, 0.25), 2.0);
  EXPECT_EQ(detail::quantile({7}, 0.25), 7.0);
}
