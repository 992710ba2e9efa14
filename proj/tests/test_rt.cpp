#include <gtest/gtest.h>

#include <sstream>

#include "ctm/pipeline.hpp"
#include "ctm/rt.hpp"
#include "ctm/synth.hpp"
#include "support.hpp"

using namespace ctm;

namespace {

struct Fixture {
  std::vector<Recording> recs;
  GbtModel model;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture fx;
    SynthConfig sc;
    sc.n_subjects = 2;
    sc.duration_s = 60.0;
    fx.recs = generate_synthetic(sc);
    const auto fm = build_dataset(fx.recs, {}, {});
    GbtHyperParams hp;
    hp.n_rounds = 10;
    hp.max_depth = 3;
    const auto w = balanced_weights(fm.labels);
    fx.model = train({fm.values, fm.rows(), fm.cols, fm.labels, w, fm.names}, hp, 1);
    return fx;
  }();
  return f;
}

Recording head(const Recording& r, std::size_t n) {
  Recording out = r;
  out.wrist.resize(n);
  out.trunk.resize(n);
  out.labels.resize(n);
  return out;
}

}  // namespace

TEST(RingBuffer, KeepsNewestInOrder) {
  RingBuffer<int> rb(3);
  EXPECT_EQ(rb.size(), 0u);
  rb.push(1);
  rb.push(2);
  EXPECT_FALSE(rb.full());
  EXPECT_EQ(rb[0], 1);
  rb.push(3);
  rb.push(4);
  rb.push(5);
  EXPECT_TRUE(rb.full());
  EXPECT_EQ(rb.count(), 5u);
  std::vector<int> snap;
  rb.snapshot(snap);
  EXPECT_EQ(snap, (std::vector<int>{3, 4, 5}));
  EXPECT_EQ(rb[2], 5);
}

TEST(RunningStats, WelfordMatchesTwoPass) {
  RunningStats s;
  const std::vector<double> x{2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0};
  for (double v : x) s.add(v);
  EXPECT_DOUBLE_EQ(s.mean(), 5.0);
  EXPECT_NEAR(s.std(), std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_EQ(s.max(), 9.0);
  EXPECT_EQ(RunningStats{}.std(), 0.0);
}

TEST(Engine, PredictionCadence) {
  const auto& f = fixture();
  Engine eng(f.model, {});
  const Recording r = head(f.recs[0], 120);
  std::vector<std::uint64_t> at;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (auto p = eng.on_sample(r.wrist[i], r.trunk[i])) at.push_back(p->sample);
  EXPECT_EQ(at, (std::vector<std::uint64_t>{60, 75, 90, 105, 120}));
  const auto rep = eng.latency_report();
  EXPECT_EQ(rep.n, 5u);
  EXPECT_EQ(rep.samples, 120u);
  EXPECT_EQ(rep.dropped, 0u);
  EXPECT_GE(rep.end_to_end.max_ms, rep.end_to_end.mean_ms);
}

TEST(Engine, MatchesBatchPrediction) {
  const auto& f = fixture();
  for (const auto& rec : f.recs) {
    const auto batch = batch_predict(f.model, rec, {}, {});
    Engine eng(f.model, {});
    RecordingSource src(rec);
    const auto rr = replay(eng, src);
    ASSERT_EQ(rr.predictions.size(), batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      EXPECT_EQ(rr.predictions[k].t, batch[k].t);
      EXPECT_EQ(rr.predictions[k].label, batch[k].label);
      for (int c = 0; c < kNumClasses; ++c)
        EXPECT_LT(std::abs(rr.predictions[k].probs[static_cast<std::size_t>(c)] - batch[k].probs[static_cast<std::size_t>(c)]),
                  1e-12);
    }
    EXPECT_NEAR(rr.stream_seconds, rec.wrist.back().t - rec.wrist.front().t, 1e-12);
  }
}

TEST(Engine, DropsOutOfOrderAndUnsynchronizedSamples) {
  const auto& f = fixture();
  Engine eng(f.model, {});
  const Recording r = head(f.recs[0], 70);
  for (std::size_t i = 0; i < 10; ++i) eng.on_sample(r.wrist[i], r.trunk[i]);
  EXPECT_FALSE(eng.on_sample(r.wrist[5], r.trunk[5]));  // stale
  RawSample skew = r.trunk[10];
  skew.t += 1e-3;
  EXPECT_FALSE(eng.on_sample(r.wrist[10], skew));
  RawSample bad = r.wrist[10];
  bad.t = std::nan("");
  EXPECT_FALSE(eng.on_sample(bad, r.trunk[10]));
  EXPECT_EQ(eng.dropped(), 3u);
  EXPECT_EQ(eng.accepted(), 10u);
  for (std::size_t i = 10; i < 70; ++i) eng.on_sample(r.wrist[i], r.trunk[i]);
  EXPECT_EQ(eng.accepted(), 70u);
  EXPECT_EQ(eng.latency_report().n, 1u);  // only the 60th accepted sample fires
}

TEST(Engine, RejectsModelWithUnknownFeatures) {
  GbtModel m;
  m.features = {"not.a.feature"};
  EXPECT_THROW(Engine(m, {}), ModelError);
  EngineOptions bad;
  bad.window.hop = 0;
  EXPECT_THROW(Engine(fixture().model, bad), ConfigError);
}

TEST(Engine, EmptyLatencyReport) {
  Engine eng(fixture().model, {});
  const auto rep = eng.latency_report();
  EXPECT_EQ(rep.n, 0u);
  EXPECT_EQ(rep.end_to_end.mean_ms, 0.0);
  const auto j = to_json(rep);
  EXPECT_EQ(j["n"], 0);
  EXPECT_TRUE(j.contains("end_to_end"));
}

TEST(Frames, RoundTripAndLayout) {
  SamplePair s{{1.25, {0.5, -1.0, 9.75}, {0.125, 0.0, -0.25}}, {1.25, {1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}}};
  const Frame f = encode_frame(s);
  static_assert(kFrameSize == 56);
  EXPECT_EQ(f[7], 0x3F);  // 1.25 = 0x3FF4000000000000, little-endian
  EXPECT_EQ(f[6], 0xF4);
  const auto back = decode_frame(f);
  EXPECT_EQ(back.wrist.t, 1.25);
  EXPECT_EQ(back.trunk.t, 1.25);
  EXPECT_EQ(back.wrist.accel.z, 9.75);
  EXPECT_EQ(back.trunk.gyro.z, 6.0);
  SamplePair odd = s;
  odd.wrist.accel.x = 0.1;
  EXPECT_EQ(decode_frame(encode_frame(odd)).wrist.accel.x, static_cast<double>(0.1f));
}

TEST(Frames, StreamSourceFeedsEngine) {
  const auto& f = fixture();
  const Recording r = head(f.recs[1], 150);
  std::string bytes;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto fr = encode_frame({r.wrist[i], r.trunk[i]});
    bytes.append(reinterpret_cast<const char*>(fr.data()), fr.size());
  }
  std::istringstream in(bytes);
  FrameStreamSource src(in);
  Engine eng(f.model, {});
  const auto rr = replay(eng, src);
  EXPECT_EQ(rr.predictions.size(), 7u);
  std::istringstream cut(bytes.substr(0, bytes.size() - 3));
  FrameStreamSource bad(cut);
  Engine eng2(f.model, {});
  EXPECT_THROW(replay(eng2, bad), DataError);
}
