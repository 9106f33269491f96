#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "mtfatt/training.hpp"

using namespace mtfatt;

namespace {

Tensor<double> band_audio(Rng& rng, int64_t n, int n_fft, int tones = 3) {
  auto x = Tensor<double>::zeros({static_cast<int>(n), 2});
  for (int k = 0; k < tones; ++k) {
    const double bin = rng.uniform(3.0, 0.7 * (n_fft / 2));
    const double w = 2 * M_PI * bin / n_fft;
    const double ph = rng.uniform(0.0, 2 * M_PI);
    const double amp = rng.uniform(0.05, 0.15);
    for (int64_t i = 0; i < n; ++i) {
      const double v = amp * std::sin(w * static_cast<double>(i) + ph);
      x.mutable_data()[i * 2 + 0] += v;
      x.mutable_data()[i * 2 + 1] += 0.7 * v;
    }
  }
  return x;
}

struct Song {
  std::array<Tensor<double>, 4> stems;
};

Song make_song(Rng& rng, int64_t n, int n_fft) {
  Song s;
  for (auto& st : s.stems) st = band_audio(rng, n, n_fft);
  return s;
}

void set_all(ParamStore<double>& store, const std::string& name, double v) {
  auto& t = store.params.at(name);
  std::fill(t.mutable_data(), t.mutable_data() + t.size(), v);
}

}  // namespace

TEST_CASE("stem names map to indices") {
  for (int i = 0; i < 4; ++i) CHECK(stem_index(kStemNames[static_cast<size_t>(i)]) == i);
  CHECK(stem_index("vocals") == 0);
  CHECK(stem_index("other") == 3);
  CHECK_THROWS_AS(stem_index("piano"), DimensionError);
}

TEST_CASE("time loss is the mean absolute sample error") {
  Tape<double> tape;
  auto target = Tensor<double>::zeros({2, 2});
  for (int64_t i = 0; i < 4; ++i) target.mutable_data()[i] = static_cast<double>(i + 1);
  auto est = Tensor<double>::zeros({2, 2});
  CHECK(loss_time(tape, target, est).value() == doctest::Approx(2.5));

  // sign of the error does not matter
  auto over = Tensor<double>::zeros({2, 2});
  for (int64_t i = 0; i < 4; ++i) over.mutable_data()[i] = 2.0 * static_cast<double>(i + 1);
  CHECK(loss_time(tape, target, over).value() == doctest::Approx(2.5));

  CHECK(loss_time(tape, target, target).value() == 0.0);
}

TEST_CASE("frequency loss sums the real and imaginary mean absolute errors") {
  Tape<double> tape;
  ComplexSpectrogram<double> a, b;
  a.re = Tensor<double>::filled({2, 3, 2}, 1.0);
  a.im = Tensor<double>::filled({2, 3, 2}, 2.0);
  b.re = Tensor<double>::filled({2, 3, 2}, 0.5);
  b.im = Tensor<double>::filled({2, 3, 2}, 1.75);
  CHECK(loss_freq(tape, a, b).value() == doctest::Approx(0.5 + 0.25));
  CHECK(loss_freq(tape, a, a).value() == 0.0);
}

TEST_CASE("combined loss is exactly time plus alpha times frequency") {
  auto cfg = ModelConfig::micro();
  cfg.seed = 3;
  auto model = build<double>(cfg);
  Rng rng(17);
  auto mix = band_audio(rng, cfg.segment_samples(), cfg.n_fft);
  auto target = band_audio(rng, cfg.segment_samples(), cfg.n_fft);
  auto target_spec = stft(target, cfg.n_fft, cfg.hop, cfg.sample_rate);

  Tape<double> tape;
  auto fw = forward(model, tape, mix, Mode::Infer);
  const double alpha = 0.1;
  auto lb = combined_loss(tape, target, target_spec, fw, alpha);

  CHECK(std::isfinite(lb.total.value()));
  CHECK(lb.l_time.value() >= 0.0);
  CHECK(lb.l_freq.value() >= 0.0);
  CHECK(lb.l_freq.value() > 0.0);  // untrained mask will not match the target
  // bitwise: total is assembled as l_time + alpha * l_freq in this order
  CHECK(lb.total.value() == lb.l_time.value() + alpha * lb.l_freq.value());
}

TEST_CASE("adam first step from a fresh state moves each weight by about lr") {
  ParamStore<double> store;
  Rng rng(1);
  auto w = store.add_param("w", {4}, rng, 4);
  auto idle = store.add_param("z_idle", {3}, rng, 3);
  std::vector<double> w0(w.data(), w.data() + 4);
  std::vector<double> idle0(idle.data(), idle.data() + 3);

  Tape<double> tape;
  auto loss = sum(tape, w);  // gradient is exactly one per element
  tape.backward(loss);

  Adam<double> adam;
  const double lr = 1e-3;
  adam.step(store, lr);

  // m/(1-b1) = g and sqrt(v/(1-b2)) = |g| on step one, so the update is
  // lr * g / (|g| + eps), within eps of lr * sign(g)
  for (int i = 0; i < 4; ++i)
    CHECK(w.data()[i] - w0[i] == doctest::Approx(-lr).epsilon(1e-6));
  // a parameter that never saw a gradient stays bitwise untouched
  for (int i = 0; i < 3; ++i) CHECK(idle.data()[i] == idle0[i]);
}

TEST_CASE("adam with zero learning rate is a bitwise no-op") {
  ParamStore<double> store;
  Rng rng(2);
  auto w = store.add_param("w", {6}, rng, 6);
  std::vector<double> w0(w.data(), w.data() + 6);

  Tape<double> tape;
  auto loss = sum(tape, mul(tape, w, w));
  tape.backward(loss);

  Adam<double> adam;
  adam.step(store, 0.0);
  for (int i = 0; i < 6; ++i) CHECK(w.data()[i] == w0[i]);
  CHECK(adam.t == 1);
}

TEST_CASE("adam rejects a non-finite gradient and names the parameter") {
  ParamStore<double> store;
  Rng rng(3);
  auto w = store.add_param("w", {2}, rng, 2);

  Tape<double> tape;
  auto loss = sum(tape, scale(tape, w, std::numeric_limits<double>::quiet_NaN()));
  tape.backward(loss);

  Adam<double> adam;
  CHECK_THROWS_WITH_AS(adam.step(store, 1e-3), "non-finite gradient in parameter 'w'",
                       std::runtime_error);
}

TEST_CASE("adam walks a quadratic bowl to its minimum") {
  ParamStore<double> store;
  Rng rng(4);
  auto w = store.add_param("w", {5}, rng, 1);  // start in roughly [-2.4, 2.4]
  const double target[5] = {1.0, -0.5, 0.25, 2.0, 0.0};

  Adam<double> adam;
  for (int it = 0; it < 1500; ++it) {
    Tape<double> tape;
    auto t = Tensor<double>::zeros({5});
    std::copy(target, target + 5, t.mutable_data());
    auto d = sub(tape, w, t);
    auto loss = sum(tape, mul(tape, d, d));
    tape.backward(loss);
    adam.step(store, 0.02);
    store.zero_grads();
  }
  for (int i = 0; i < 5; ++i) CHECK(w.data()[i] == doctest::Approx(target[i]).epsilon(0.02));
}

TEST_CASE("plateau schedule cuts the lr by 0.8 after ten stale epochs") {
  PlateauLr<double> sched(1e-3);
  sched.update(1.0);  // first value is always a new best
  CHECK(sched.lr == 1e-3);
  for (int i = 0; i < 9; ++i) sched.update(2.0);
  CHECK(sched.lr == 1e-3);  // nine stale epochs: still waiting
  sched.update(2.0);        // tenth
  CHECK(sched.lr == 1e-3 * 0.8);
  for (int i = 0; i < 10; ++i) sched.update(2.0);
  CHECK(sched.lr == 1e-3 * 0.8 * 0.8);
}

TEST_CASE("an improvement resets the plateau counter") {
  PlateauLr<double> sched(1e-3);
  sched.update(1.0);
  for (int i = 0; i < 9; ++i) sched.update(2.0);
  sched.update(0.5);  // new best on the would-be tenth stale epoch
  for (int i = 0; i < 9; ++i) sched.update(2.0);
  CHECK(sched.lr == 1e-3);
  sched.update(2.0);
  CHECK(sched.lr == 1e-3 * 0.8);
}

TEST_CASE("the mixture is the exact samplewise stem sum") {
  Rng rng(7);
  TrainExample<double> ex;
  for (auto& s : ex.stems) s = band_audio(rng, 64, 16, 2);
  auto mix = ex.mixture();
  REQUIRE(mix.shape() == ex.stems[0].shape());
  for (int64_t i = 0; i < mix.size(); ++i) {
    double expected = 0;
    for (const auto& s : ex.stems) expected += s.data()[i];
    CHECK(mix.data()[i] == expected);
  }
}

TEST_CASE("augmentation draws swap coins then remix picks in a fixed order") {
  auto make_batch = [] {
    std::vector<TrainExample<double>> batch(2);
    for (int e = 0; e < 2; ++e)
      for (int s = 0; s < 4; ++s) {
        auto t = Tensor<double>::zeros({3, 2});
        for (int64_t i = 0; i < 3; ++i) {
          t.mutable_data()[i * 2 + 0] = 10.0 * e + s + 0.25;
          t.mutable_data()[i * 2 + 1] = 10.0 * e + s + 0.75;
        }
        batch[static_cast<size_t>(e)].stems[static_cast<size_t>(s)] = t;
      }
    return batch;
  };

  auto batch = make_batch();
  Rng rng(123);
  augment(rng, batch);

  // replay the documented draw order on a second generator: all swap coins
  // in (example, stem) order, then all remix picks in the same order, the
  // picks reading from the pre-remix state
  auto expect = make_batch();
  Rng rep(123);
  for (auto& ex : expect)
    for (auto& stem : ex.stems)
      if (rep.bernoulli(0.5)) {
        double* p = stem.mutable_data();
        for (int64_t i = 0; i < stem.dim(0); ++i) std::swap(p[i * 2], p[i * 2 + 1]);
      }
  const auto before = expect;
  for (auto& ex : expect)
    for (int s = 0; s < 4; ++s)
      ex.stems[static_cast<size_t>(s)] =
          before[static_cast<size_t>(rep.uniform_int(2))].stems[static_cast<size_t>(s)];

  for (int e = 0; e < 2; ++e)
    for (int s = 0; s < 4; ++s) {
      const auto& got = batch[static_cast<size_t>(e)].stems[static_cast<size_t>(s)];
      const auto& want = expect[static_cast<size_t>(e)].stems[static_cast<size_t>(s)];
      for (int64_t i = 0; i < got.size(); ++i) CHECK(got.data()[i] == want.data()[i]);
    }
}

TEST_CASE("augmentation keeps every stem slot populated from the same slot") {
  Rng rng(55);
  std::vector<TrainExample<double>> batch(3);
  for (int e = 0; e < 3; ++e)
    for (int s = 0; s < 4; ++s)
      batch[static_cast<size_t>(e)].stems[static_cast<size_t>(s)] =
          Tensor<double>::filled({4, 2}, 100.0 * e + s);

  augment(rng, batch);
  // constant-valued stems are swap-invariant, so every output stem must be
  // one of the three input values for its own slot
  for (const auto& ex : batch)
    for (int s = 0; s < 4; ++s) {
      const double v = ex.stems[static_cast<size_t>(s)].data()[0];
      const double slot = v - 100.0 * std::floor(v / 100.0);
      CHECK(slot == doctest::Approx(static_cast<double>(s)));
    }
}

TEST_CASE("segment starts tile each song at the shift spacing") {
  auto refs = detail::song_segments(3, 1000, 300, 300);
  REQUIRE(refs.size() == 3);
  for (size_t i = 0; i < refs.size(); ++i) {
    CHECK(refs[i].song == 3);
    CHECK(refs[i].start == static_cast<int64_t>(i) * 300);
  }

  refs = detail::song_segments(0, 1000, 300, 200);
  REQUIRE(refs.size() == 4);
  CHECK(refs.back().start == 600);

  // exact multiple: the last window ends exactly at the song end
  refs = detail::song_segments(0, 900, 300, 300);
  REQUIRE(refs.size() == 3);
  CHECK(refs.back().start == 600);
}

TEST_CASE("a song shorter than one segment yields a single padded reference") {
  auto refs = detail::song_segments(1, 100, 300, 300);
  REQUIRE(refs.size() == 1);
  CHECK(refs[0].song == 1);
  CHECK(refs[0].start == 0);
}

TEST_CASE("cut_segment zero pads past the song end") {
  auto song = Tensor<double>::zeros({10, 2});
  for (int64_t i = 0; i < 20; ++i) song.mutable_data()[i] = static_cast<double>(i);

  auto mid = detail::cut_segment(song, 2, 4);
  REQUIRE(mid.shape() == Shape{4, 2});
  for (int64_t i = 0; i < 8; ++i) CHECK(mid.data()[i] == static_cast<double>(i + 4));

  auto tail = detail::cut_segment(song, 6, 8);
  REQUIRE(tail.shape() == Shape{8, 2});
  for (int64_t i = 0; i < 8; ++i) CHECK(tail.data()[i] == static_cast<double>(i + 12));
  for (int64_t i = 8; i < 16; ++i) CHECK(tail.data()[i] == 0.0);
}

TEST_CASE("two micro epochs improve validation loss and checkpoint the best") {
  auto cfg = ModelConfig::micro();
  cfg.seed = 5;
  auto model = build<double>(cfg);
  Rng rng(11);
  std::vector<Song> tr, va;
  for (int i = 0; i < 2; ++i) tr.push_back(make_song(rng, cfg.segment_samples() * 2, cfg.n_fft));
  va.push_back(make_song(rng, cfg.segment_samples(), cfg.n_fft));

  TrainOptions opt;
  opt.epochs = 2;
  opt.batch = 2;
  opt.seed = 3;
  opt.checkpoint_path = "best.ckpt";
  int saves = 0;
  std::function<void(const SeparationModel<double>&, const std::string&)> on_best =
      [&](const SeparationModel<double>&, const std::string& path) {
        ++saves;
        CHECK(path == "best.ckpt");
      };
  auto report = train(model, tr, va, stem_index("vocals"), opt, on_best);

  REQUIRE(report.records.size() == 2);
  CHECK(std::isfinite(report.initial_val));
  CHECK(report.records.back().val_loss < report.initial_val);
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  for (const auto& r : report.records)
    if (r.val_loss < best) {
      best = r.val_loss;
      best_epoch = r.epoch;
    }
  CHECK(report.best_val == best);
  CHECK(report.best_epoch == best_epoch);
  CHECK(saves >= 1);
  CHECK(report.checkpoint_path == "best.ckpt");

  std::ostringstream ss;
  report.write_tsv(ss);
  const std::string tsv = ss.str();
  CHECK(tsv.rfind("epoch\tlr\ttrain_loss\tval_loss\tl_time\tl_freq\n", 0) == 0);
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 3);
}

TEST_CASE("zero epochs still measures the initial validation loss") {
  auto cfg = ModelConfig::micro();
  cfg.seed = 5;
  auto model = build<double>(cfg);
  Rng rng(19);
  std::vector<Song> tr{make_song(rng, cfg.segment_samples(), cfg.n_fft)};
  std::vector<Song> va{make_song(rng, cfg.segment_samples(), cfg.n_fft)};

  TrainOptions opt;
  opt.epochs = 0;
  auto report = train(model, tr, va, 0, opt);
  CHECK(report.records.empty());
  CHECK(std::isfinite(report.initial_val));
  CHECK(report.initial_val > 0.0);
  CHECK(report.best_epoch == -1);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto cfg = ModelConfig::micro();
  Rng rng(29);
  std::vector<Song> tr, va;
  for (int i = 0; i < 2; ++i) tr.push_back(make_song(rng, cfg.segment_samples() * 2, cfg.n_fft));
  va.push_back(make_song(rng, cfg.segment_samples(), cfg.n_fft));

  auto run = [&] {
    cfg.seed = 5;
  auto model = build<double>(cfg);
    TrainOptions opt;
    opt.epochs = 2;
    opt.batch = 2;
    opt.seed = 7;
    return train(model, tr, va, stem_index("drums"), opt);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.records.size() == b.records.size());
  CHECK(a.initial_val == b.initial_val);
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].train_loss == b.records[i].train_loss);
    CHECK(a.records[i].val_loss == b.records[i].val_loss);
    CHECK(a.records[i].lr == b.records[i].lr);
  }
}

TEST_CASE("a non-finite loss aborts training with a clear error") {
  auto cfg = ModelConfig::micro();
  cfg.seed = 5;
  auto model = build<double>(cfg);
  set_all(model.store, "enc.eb1.dense.b0.w", std::numeric_limits<double>::quiet_NaN());
  Rng rng(31);
  std::vector<Song> tr{make_song(rng, cfg.segment_samples(), cfg.n_fft)};
  std::vector<Song> va;

  TrainOptions opt;
  opt.epochs = 1;
  opt.batch = 1;
  CHECK_THROWS_WITH_AS(train(model, tr, va, 0, opt),
                       "non-finite training loss at epoch 0; last saved checkpoint retained",
                       std::runtime_error);
}
