#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <ostream>

#include "mtfatt/model.hpp"

// Losses, optimizer, LR schedule, augmentation, and the training loop.
namespace mtfatt {

inline constexpr std::array<const char*, 4> kStemNames = {"vocals", "bass", "drums", "other"};

inline int stem_index(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == kStemNames[static_cast<size_t>(i)]) return i;
  fail_dim("unknown stem '" + name + "'");
}

// Mean absolute error over samples.
template <typename S>
Tensor<S> loss_time(Tape<S>& tape, const Tensor<S>& target, const Tensor<S>& est) {
  return mean(tape, abs_val(tape, sub(tape, target, est)));
}

// Mean absolute error over real and imaginary spectrogram planes, summed.
template <typename S>
Tensor<S> loss_freq(Tape<S>& tape, const ComplexSpectrogram<S>& target,
                    const ComplexSpectrogram<S>& est) {
  auto lre = mean(tape, abs_val(tape, sub(tape, target.re, est.re)));
  auto lim = mean(tape, abs_val(tape, sub(tape, target.im, est.im)));
  return add(tape, lre, lim);
}

template <typename S>
struct LossBreakdown {
  Tensor<S> total, l_time, l_freq;
};

// total = l_time + alpha * l_freq, composed exactly in that order.
template <typename S>
LossBreakdown<S> combined_loss(Tape<S>& tape, const Tensor<S>& target_samples,
                               const ComplexSpectrogram<S>& target_spec,
                               const ForwardResult<S>& fw, S alpha) {
  LossBreakdown<S> lb;
  lb.l_time = loss_time(tape, target_samples, fw.estimate);
  lb.l_freq = loss_freq(tape, target_spec, fw.est_spec);
  lb.total = add(tape, lb.l_time, scale(tape, lb.l_freq, alpha));
  return lb;
}

// Adam with per-parameter moment buffers keyed by name. A non-finite
// gradient aborts the step with the offending parameter named.
template <typename S>
struct Adam {
  S beta1 = S(0.9), beta2 = S(0.999), eps = S(1e-8);
  int64_t t = 0;
  std::map<std::string, std::pair<std::vector<S>, std::vector<S>>> moments;

  void step(ParamStore<S>& store, S lr) {
    ++t;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), static_cast<double>(t)));
    for (auto& [name, param] : store.params) {
      const int64_t n = numel(param.shape());
      auto& [m, v] = moments[name];
      if (m.empty()) {
        m.assign(static_cast<size_t>(n), S(0));
        v.assign(static_cast<size_t>(n), S(0));
      }
      const S* g = param.has_grad() ? param.grad().data() : nullptr;
      if (g)
        for (int64_t i = 0; i < n; ++i)
          if (!std::isfinite(static_cast<double>(g[i])))
            throw std::runtime_error("non-finite gradient in parameter '" + name + "'");
      S* p = param.mutable_data();
      for (int64_t i = 0; i < n; ++i) {
        const S gi = g ? g[static_cast<size_t>(i)] : S(0);
        auto ui = static_cast<size_t>(i);
        m[ui] = beta1 * m[ui] + (S(1) - beta1) * gi;
        v[ui] = beta2 * v[ui] + (S(1) - beta2) * gi * gi;
        p[i] -= lr * (m[ui] / bc1) / (static_cast<S>(std::sqrt(static_cast<double>(v[ui] / bc2))) + eps);
      }
    }
  }
};

// Reduce-on-plateau: after 10 consecutive epochs without a new best
// validation loss, multiply the LR by 0.8 and restart the count.
template <typename S>
struct PlateauLr {
  S lr;
  S best = std::numeric_limits<S>::infinity();
  int counter = 0;
  int patience = 10;
  S factor = S(0.8);

  explicit PlateauLr(S lr0 = S(1e-3)) : lr(lr0) {}

  void update(S val_loss) {
    if (val_loss < best) {
      best = val_loss;
      counter = 0;
    } else if (++counter == patience) {
      lr *= factor;
      counter = 0;
    }
  }
};

// One training example: the four stems of one segment, each [N x 2].
// The mixture is always re-derived as the exact sample-wise sum.
template <typename S>
struct TrainExample {
  std::array<Tensor<S>, 4> stems;

  Tensor<S> mixture() const {
    auto mix = Tensor<S>::zeros(stems[0].shape());
    S* pm = mix.mutable_data();
    for (const auto& s : stems) {
      const S* ps = s.data();
      for (int64_t i = 0; i < numel(mix.shape()); ++i) pm[i] += ps[i];
    }
    return mix;
  }
};

// In-place batch augmentation. First each example/stem flips L/R with
// probability 0.5, then each output example redraws every stem from a
// random example of the batch. Draw order is fixed: all swap coins in
// (example, stem) order, then all remix picks in the same order.
template <typename S>
void augment(Rng& rng, std::vector<TrainExample<S>>& batch) {
  for (auto& ex : batch)
    for (auto& stem : ex.stems)
      if (rng.bernoulli(0.5)) {
        auto swapped = Tensor<S>::zeros(stem.shape());
        const S* src = stem.data();
        S* dst = swapped.mutable_data();
        for (int64_t i = 0; i < stem.dim(0); ++i) {
          dst[i * 2 + 0] = src[i * 2 + 1];
          dst[i * 2 + 1] = src[i * 2 + 0];
        }
        stem = swapped;
      }
  const auto before = batch;
  for (auto& ex : batch)
    for (int s = 0; s < 4; ++s)
      ex.stems[static_cast<size_t>(s)] =
          before[rng.uniform_int(before.size())].stems[static_cast<size_t>(s)];
}

struct EpochRecord {
  int epoch;
  double lr, train_loss, val_loss, l_time, l_freq;
};

struct TrainReport {
  double initial_val = std::numeric_limits<double>::quiet_NaN();
  std::vector<EpochRecord> records;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  std::string checkpoint_path;

  void write_tsv(std::ostream& os) const {
    os << "epoch\tlr\ttrain_loss\tval_loss\tl_time\tl_freq\n";
    char line[160];
    for (const auto& r : records) {
      std::snprintf(line, sizeof(line), "%d\t%.8g\t%.8g\t%.8g\t%.8g\t%.8g\n", r.epoch, r.lr,
                    r.train_loss, r.val_loss, r.l_time, r.l_freq);
      os << line;
    }
  }
};

struct TrainOptions {
  int epochs = 30;
  int batch = 4;
  uint64_t seed = 1234;
  int shift_frames = 0;  // 0: non-overlapping segments
  double lr0 = 1e-3;
  double alpha = 0.1;  // frequency-loss weight
  std::string checkpoint_path;  // empty: do not save
  std::ostream* log = nullptr;
};

namespace detail {

struct SegmentRef {
  int song;
  int64_t start;
};

// Hop-aligned segment starts covering each song; a too-short song yields
// one zero-padded segment at offset 0.
inline std::vector<SegmentRef> song_segments(int song, int64_t n_samples, int64_t seg,
                                             int64_t shift) {
  std::vector<SegmentRef> out;
  if (n_samples < seg) {
    std::cerr << "song " << song << ": " << n_samples
              << " samples is shorter than one segment; zero-padding\n";
    out.push_back({song, 0});
    return out;
  }
  for (int64_t s = 0; s + seg <= n_samples; s += shift) out.push_back({song, s});
  return out;
}

template <typename S>
Tensor<S> cut_segment(const Tensor<S>& song, int64_t start, int64_t seg) {
  auto out = Tensor<S>::zeros({static_cast<int>(seg), 2});
  const int64_t avail = std::min(seg, song.dim(0) - start);
  std::copy(song.data() + start * 2, song.data() + (start + avail) * 2, out.mutable_data());
  return out;
}

}  // namespace detail

// Full training driver. Songs provide all four stems; the model learns the
// one selected stem. Everything is seeded, so repeated runs produce
// identical loss curves and parameters.
template <typename S, typename SongT>
TrainReport train(SeparationModel<S>& model, const std::vector<SongT>& train_songs,
                  const std::vector<SongT>& val_songs, int stem, const TrainOptions& opt,
                  const std::function<void(const SeparationModel<S>&, const std::string&)>& save =
                      nullptr) {
  const auto& cfg = model.config;
  const int64_t seg = cfg.segment_samples();
  const int64_t shift = opt.shift_frames > 0 ? static_cast<int64_t>(opt.shift_frames) * cfg.hop : seg;
  const S alpha = static_cast<S>(opt.alpha);

  std::vector<detail::SegmentRef> train_refs, val_refs;
  for (size_t i = 0; i < train_songs.size(); ++i) {
    auto part = detail::song_segments(static_cast<int>(i), train_songs[i].stems[0].dim(0), seg, shift);
    train_refs.insert(train_refs.end(), part.begin(), part.end());
  }
  for (size_t i = 0; i < val_songs.size(); ++i) {
    auto part = detail::song_segments(static_cast<int>(i), val_songs[i].stems[0].dim(0), seg, seg);
    val_refs.insert(val_refs.end(), part.begin(), part.end());
  }
  if (train_refs.empty() && opt.epochs > 0) fail_dim("train: no training segments");

  auto example_at = [&](const std::vector<SongT>& songs, const detail::SegmentRef& ref) {
    TrainExample<S> ex;
    for (int s = 0; s < 4; ++s)
      ex.stems[static_cast<size_t>(s)] =
          detail::cut_segment(songs[static_cast<size_t>(ref.song)].stems[static_cast<size_t>(s)],
                              ref.start, seg);
    return ex;
  };

  // Loss of one example on the given tape (forward only when not recording).
  auto example_loss = [&](Tape<S>& tape, const TrainExample<S>& ex, Mode mode) {
    auto mix = ex.mixture();
    const auto& tgt = ex.stems[static_cast<size_t>(stem)];
    auto tgt_spec = stft(tgt, cfg.n_fft, cfg.hop, cfg.sample_rate);
    auto fw = forward(model, tape, mix, mode);
    return combined_loss(tape, tgt, tgt_spec, fw, alpha);
  };

  auto validation = [&](double* out_time, double* out_freq) {
    double sum = 0, st = 0, sf = 0;
    for (const auto& ref : val_refs) {
      auto tape = inference_tape<S>();
      auto lb = example_loss(tape, example_at(val_songs, ref), Mode::Infer);
      sum += static_cast<double>(lb.total.value());
      st += static_cast<double>(lb.l_time.value());
      sf += static_cast<double>(lb.l_freq.value());
    }
    const double n = val_refs.empty() ? 1 : static_cast<double>(val_refs.size());
    if (out_time) *out_time = st / n;
    if (out_freq) *out_freq = sf / n;
    return sum / n;
  };

  TrainReport report;
  report.checkpoint_path = opt.checkpoint_path;
  if (!val_refs.empty()) report.initial_val = validation(nullptr, nullptr);

  Adam<S> adam;
  PlateauLr<S> sched(static_cast<S>(opt.lr0));
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng rng(opt.seed + static_cast<uint64_t>(epoch) * 0x9e3779b97f4a7c15ull);
    auto order = train_refs;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);

    double train_sum = 0;
    int64_t steps = 0;
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(opt.batch)) {
      const size_t bend = std::min(order.size(), b + static_cast<size_t>(opt.batch));
      std::vector<TrainExample<S>> batch;
      for (size_t i = b; i < bend; ++i) batch.push_back(example_at(train_songs, order[i]));
      augment(rng, batch);

      Tape<S> tape;
      std::vector<Tensor<S>> totals;
      for (const auto& ex : batch) totals.push_back(example_loss(tape, ex, Mode::Train).total);
      auto loss = mean(tape, stack0(tape, totals));
      const double lv = static_cast<double>(loss.value());
      if (!std::isfinite(lv))
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) +
                                 "; last saved checkpoint retained");
      tape.backward(loss);
      adam.step(model.store, sched.lr);
      model.store.zero_grads();
      train_sum += lv;
      ++steps;
    }

    double vt = 0, vf = 0;
    const double val = val_refs.empty() ? train_sum / static_cast<double>(steps)
                                        : validation(&vt, &vf);
    EpochRecord rec{epoch, static_cast<double>(sched.lr),
                    train_sum / static_cast<double>(std::max<int64_t>(steps, 1)), val, vt, vf};
    report.records.push_back(rec);
    if (opt.log) {
      char line[200];
      std::snprintf(line, sizeof(line),
                    "epoch %3d  lr %.6g  train %.6f  val %.6f (time %.6f freq %.6f)\n", epoch,
                    rec.lr, rec.train_loss, rec.val_loss, rec.l_time, rec.l_freq);
      (*opt.log) << line << std::flush;
    }
    if (val < report.best_val) {
      report.best_val = val;
      report.best_epoch = epoch;
      if (save && !opt.checkpoint_path.empty()) save(model, opt.checkpoint_path);
    }
    sched.update(static_cast<S>(val));
  }
  return report;
}

}  // namespace mtfatt
