#include "ctg/signal.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ctg;
using namespace ctg::signal;

namespace {

RawTrace make_raw(std::size_t n, double fhr = 140, double toco = 20) {
  RawTrace r;
  r.fhr.assign(n, fhr);
  r.toco.assign(n, toco);
  r.trace_id = "t";
  return r;
}

RawTrace random_raw(std::size_t n, double missing_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> fhr(40, 260), toco(0, 110), u(0, 1);
  RawTrace r;
  r.trace_id = "r" + std::to_string(seed);
  for (std::size_t i = 0; i < n; ++i) {
    r.fhr.push_back(u(rng) < missing_rate ? kMissing : fhr(rng));
    r.toco.push_back(u(rng) < missing_rate ? kMissing : toco(rng));
  }
  return r;
}

std::size_t observed(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return x != kMissing; }));
}

}  // namespace

TEST(ClipRanges, ClampsHighFhr) {
  RawTrace r = make_raw(3);
  r.fhr[1] = 300;
  r.fhr[2] = 20;
  r.toco[0] = 140;
  const RawTrace c = clip_ranges(r);
  EXPECT_EQ(c.fhr[1], 250);
  EXPECT_EQ(c.fhr[2], 50);
  EXPECT_EQ(c.toco[0], 100);
}

TEST(ClipRanges, SentinelsPreserved) {
  RawTrace r = make_raw(3);
  r.fhr[0] = kMissing;
  r.toco[2] = kMissing;
  const RawTrace c = clip_ranges(r);
  EXPECT_EQ(c.fhr[0], kMissing);
  EXPECT_EQ(c.toco[2], kMissing);
}

TEST(Validate, NegativeNonSentinelRejected) {
  RawTrace r = make_raw(3);
  r.toco[1] = -5;
  EXPECT_THROW(clip_ranges(r), SignalError);
  r.toco[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(validate(r), SignalError);
}

TEST(Validate, LengthsMustAgreeAndBeNonEmpty) {
  RawTrace r = make_raw(3);
  r.toco.pop_back();
  EXPECT_THROW(validate(r), SignalError);
  EXPECT_THROW(validate(make_raw(0)), SignalError);
  RawTrace bad_label = make_raw(2);
  bad_label.label = 2;
  EXPECT_THROW(validate(bad_label), SignalError);
}

TEST(ScaleUnit, Midpoint) { EXPECT_EQ(scale_unit(make_raw(1, 150)).fhr[0], 0.5); }

TEST(ScaleUnit, Endpoints) {
  EXPECT_EQ(scale_unit(make_raw(1, 50)).fhr[0], 0.0);
  EXPECT_EQ(scale_unit(make_raw(1, 250)).fhr[0], 1.0);
}

TEST(ScaleUnit, Toco) { EXPECT_DOUBLE_EQ(scale_unit(make_raw(1, 140, 37)).toco[0], 0.37); }

TEST(ScaleUnit, UnclippedValueRejected) {
  EXPECT_THROW(scale_unit(make_raw(1, 251)), SignalError);
  EXPECT_THROW(scale_unit(make_raw(1, 140, 101)), SignalError);
  EXPECT_EQ(scale_unit(make_raw(1, kMissing, kMissing)).fhr[0], kMissing);
}

TEST(WindowPad, ExactLengthGivesOneUnpaddedWindow) {
  const auto w = window_pad(scale_unit(make_raw(960)));
  ASSERT_EQ(w.size(), 1u);
  EXPECT_TRUE(w[0].fhr_mask.all());
  EXPECT_EQ(w[0].trace_id, "t");
}

TEST(WindowPad, LongTraceSegmentsAndPads) {
  const auto w = window_pad(scale_unit(make_raw(2400)));
  ASSERT_EQ(w.size(), 3u);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(w[static_cast<std::size_t>(k)].window_index, k);
    EXPECT_EQ(w[static_cast<std::size_t>(k)].length(), 960);
  }
  EXPECT_TRUE(w[0].fhr_mask.all());
  EXPECT_TRUE(w[1].fhr_mask.all());
  EXPECT_EQ(w[2].fhr_mask.count(), 480);
  EXPECT_TRUE(w[2].fhr_mask.head(480).all());
  EXPECT_EQ(w[0].trace_id, "t/w0");
  EXPECT_EQ(w[2].trace_id, "t/w2");
}

TEST(WindowPad, HeavilyMissingWindowDropped) {
  RawTrace r = make_raw(960);
  std::fill(r.fhr.begin(), r.fhr.begin() + 400, kMissing);
  EXPECT_TRUE(window_pad(scale_unit(r)).empty());
  // 288/960 = 30% exactly is kept
  RawTrace edge = make_raw(960);
  std::fill(edge.fhr.begin(), edge.fhr.begin() + 288, kMissing);
  EXPECT_EQ(window_pad(scale_unit(edge)).size(), 1u);
  std::fill(edge.fhr.begin(), edge.fhr.begin() + 289, kMissing);
  EXPECT_TRUE(window_pad(scale_unit(edge)).empty());
}

TEST(WindowPad, MissingTocoDoesNotDropWindow) {
  RawTrace r = make_raw(960);
  std::fill(r.toco.begin(), r.toco.end(), kMissing);
  EXPECT_EQ(window_pad(scale_unit(r)).size(), 1u);
}

TEST(WindowPad, EmptyRejected) { EXPECT_THROW(window_pad(make_raw(0)), SignalError); }

TEST(BuildMask, NoMissingNoPadding) {
  std::vector<double> v(960, 0.4);
  EXPECT_TRUE(build_mask(v).mask.all());
}

TEST(BuildMask, SentinelAtIndexFive) {
  std::vector<double> v(960, 0.4);
  v[5] = kMissing;
  const auto m = build_mask(v);
  EXPECT_FALSE(m.mask[5]);
  EXPECT_EQ(m.values[5], 0.0);
  EXPECT_EQ(m.mask.count(), 959);
}

TEST(BuildMask, PaddedWindow) {
  std::vector<double> v(480, 0.4);
  const auto m = build_mask(v);
  ASSERT_EQ(m.values.size(), 960);
  EXPECT_TRUE(m.mask.head(480).all());
  EXPECT_FALSE(m.mask.tail(480).any());
  EXPECT_TRUE((m.values.tail(480).array() == 0).all());
}

TEST(Pipeline, OutputRangeAndMaskedZeros) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const RawTrace r = random_raw(100 + seed * 97, 0.1, seed);
    for (const Trace& t : preprocess(r)) {
      EXPECT_NO_THROW(validate_trace(t));
      for (const auto* ch : {&t.fhr, &t.toco}) {
        EXPECT_GE(ch->minCoeff(), 0.0);
        EXPECT_LE(ch->maxCoeff(), 1.0);
      }
      for (Eigen::Index i = 0; i < t.length(); ++i) {
        if (!t.fhr_mask[i]) EXPECT_EQ(t.fhr[i], 0.0);
        if (!t.toco_mask[i]) EXPECT_EQ(t.toco[i], 0.0);
      }
    }
  }
}

TEST(Pipeline, WindowCountAndObservedSamplesConserved) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 1 + seed * 311;
    const RawTrace r = random_raw(n, 0.05, seed + 100);
    const auto windows = preprocess(r);
    EXPECT_EQ(windows.size(), (n + 959) / 960);  // 5% missing never trips the 30% rule
    Eigen::Index fhr_obs = 0, toco_obs = 0;
    for (const auto& w : windows) {
      fhr_obs += w.fhr_mask.count();
      toco_obs += w.toco_mask.count();
    }
    EXPECT_EQ(static_cast<std::size_t>(fhr_obs), observed(r.fhr));
    EXPECT_EQ(static_cast<std::size_t>(toco_obs), observed(r.toco));
  }
}

TEST(Pipeline, ReprocessingAWindowReproducesIt) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto windows = preprocess(random_raw(960 * 2, 0.1, seed + 200));
    for (const Trace& t : windows) {
      const auto again = preprocess(to_raw(t));
      ASSERT_EQ(again.size(), 1u);
      const Trace& u = again[0];
      EXPECT_TRUE((u.fhr_mask == t.fhr_mask).all());
      EXPECT_TRUE((u.toco_mask == t.toco_mask).all());
      // Unit rescaling rounds, so values agree to the last few ulps.
      EXPECT_LT((u.fhr - t.fhr).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((u.toco - t.toco).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_EQ(u.label, t.label);
    }
  }
}

TEST(Pipeline, FullyObservedWindowRoundTripsExactlyOnGridValues) {
  RawTrace r = make_raw(960);
  for (std::size_t i = 0; i < 960; ++i) {
    r.fhr[i] = 50 + static_cast<double>(i % 9) * 25;
    r.toco[i] = static_cast<double>(i % 5) * 25;
  }
  const Trace t = preprocess(r)[0];
  const Trace u = preprocess(to_raw(t))[0];
  EXPECT_TRUE((u.fhr.array() == t.fhr.array()).all());
  EXPECT_TRUE((u.toco.array() == t.toco.array()).all());
}

TEST(ValidateTrace, DetectsBrokenInvariants) {
  Trace t = preprocess(make_raw(960))[0];
  EXPECT_NO_THROW(validate_trace(t));
  Trace bad = t;
  bad.fhr_mask[3] = false;  // masked but value nonzero
  EXPECT_THROW(validate_trace(bad), SignalError);
  bad = t;
  bad.toco[0] = 1.5;
  EXPECT_THROW(validate_trace(bad), SignalError);
  EXPECT_THROW(validate_trace(t, 32), SignalError);
}

TEST(MissingFraction, CountsFalseEntries) {
  Mask m = Mask::Constant(10, true);
  m.head(3).setConstant(false);
  EXPECT_DOUBLE_EQ(missing_fraction(m), 0.3);
}
