#include "mtfatt/cli.hpp"

#include <iostream>

#include "mtfatt/gradcheck.hpp"
#include "mtfatt/metrics.hpp"
#include "mtfatt/reference.hpp"
#include "mtfatt/threads.hpp"

namespace mtfatt {

namespace fs = std::filesystem;

StemChoice parse_stem_choice(const std::string& name) {
  StemChoice c;
  if (name == "synthetic") {
    c.synthetic = true;
    c.stem = stem_index("vocals");
    return c;
  }
  if (name.rfind("synthetic-", 0) == 0) {
    c.synthetic = true;
    c.stem = stem_index(name.substr(10));
    return c;
  }
  c.stem = stem_index(name);
  return c;
}

namespace {

SynthSpec synth_spec_for(const RunConfig& cfg) {
  SynthSpec spec;
  spec.sample_rate = cfg.model.sample_rate;
  spec.duration = cfg.synth_duration;
  // bands were designed for 8 kHz; keep their relative placement at any rate
  const double r = cfg.model.sample_rate / 8000.0;
  for (int s = 0; s < 4; ++s) {
    spec.lo[s] *= r;
    spec.hi[s] *= r;
  }
  return spec;
}

struct Splits {
  std::vector<StemSet<float>> train, val, test;
};

Splits load_splits(const RunConfig& cfg, const StemChoice& choice) {
  Splits sp;
  if (choice.synthetic) {
    auto spec = synth_spec_for(cfg);
    auto all = synth_dataset<float>(cfg.synth_train + cfg.synth_val + cfg.synth_test, spec,
                                    cfg.synth_seed);
    auto it = all.begin();
    sp.train.assign(it, it + cfg.synth_train);
    it += cfg.synth_train;
    sp.val.assign(it, it + cfg.synth_val);
    it += cfg.synth_val;
    sp.test.assign(it, it + cfg.synth_test);
    return sp;
  }
  if (cfg.manifest.empty())
    throw ConfigError("config: paths.manifest required for dataset stem '" +
                      std::string(kStemNames[static_cast<size_t>(choice.stem)]) + "'");
  sp.train = load_split<float>(cfg.manifest, "train");
  sp.val = load_split<float>(cfg.manifest, "valid");
  sp.test = load_split<float>(cfg.manifest, "test");
  return sp;
}

void write_effective_config(const RunConfig& cfg, std::ostream& err) {
  fs::create_directories(cfg.out_dir);
  const auto path = (fs::path(cfg.out_dir) / "effective.cfg").string();
  std::ofstream os(path);
  if (!os) {
    err << "warning: cannot write " << path << "\n";
    return;
  }
  os << serialize_config(cfg);
}

std::string default_checkpoint(const RunConfig& cfg, int stem) {
  return (fs::path(cfg.checkpoint_dir) /
          (std::string(kStemNames[static_cast<size_t>(stem)]) + ".ckpt"))
      .string();
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  configure_threads(cfg.threads);
  const auto choice = parse_stem_choice(cfg.stem);
  auto model = build<float>(cfg.model);
  auto splits = load_splits(cfg, choice);
  write_effective_config(cfg, err);
  fs::create_directories(cfg.checkpoint_dir);

  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch = cfg.batch;
  opt.seed = cfg.seed;
  opt.shift_frames = cfg.shift_frames;
  opt.lr0 = cfg.lr0;
  opt.alpha = cfg.alpha;
  opt.checkpoint_path = default_checkpoint(cfg, choice.stem);
  opt.log = &out;

  out << "training stem '" << kStemNames[static_cast<size_t>(choice.stem)] << "' ("
      << (choice.synthetic ? "synthetic" : "dataset") << ", " << splits.train.size()
      << " train / " << splits.val.size() << " val songs, variant "
      << variant_name(cfg.model.variant) << ", " << model.store.param_count() << " parameters)\n";

  auto report = train<float, StemSet<float>>(
      model, splits.train, splits.val, choice.stem, opt,
      [](const SeparationModel<float>& m, const std::string& path) { save_checkpoint(m, path); });

  const auto report_path = (fs::path(cfg.out_dir) / "train_report.tsv").string();
  std::ofstream rp(report_path);
  report.write_tsv(rp);
  out << "initial val " << report.initial_val;
  if (!report.records.empty())
    out << ", best val " << report.best_val << " at epoch " << report.best_epoch
        << ", checkpoint " << opt.checkpoint_path;
  out << "\nreport written to " << report_path << "\n";
  return 0;
}

int cmd_separate(const RunConfig& cfg, const std::string& input_wav,
                 const std::string& checkpoint, std::ostream& out, std::ostream& err) {
  configure_threads(cfg.threads);
  const auto choice = parse_stem_choice(cfg.stem);
  auto model = build<float>(cfg.model);
  const std::string ckpt = checkpoint.empty() ? default_checkpoint(cfg, choice.stem) : checkpoint;
  load_checkpoint(model, ckpt);
  auto wav = read_wav(input_wav);
  if (wav.sample_rate != cfg.model.sample_rate)
    throw std::runtime_error("separate: " + input_wav + " is " +
                             std::to_string(wav.sample_rate) + " Hz, model expects " +
                             std::to_string(cfg.model.sample_rate));
  auto audio = wav_to_stereo<float>(wav);
  auto est = separate_long(model, audio);
  fs::create_directories(cfg.out_dir);
  write_effective_config(cfg, err);
  const auto out_path =
      (fs::path(cfg.out_dir) /
       (std::string(kStemNames[static_cast<size_t>(choice.stem)]) + "_estimate.wav"))
          .string();
  write_wav_float32(out_path, est.data(), est.dim(0), 2, cfg.model.sample_rate);
  out << "wrote " << out_path << " (" << est.dim(0) << " samples)\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  configure_threads(cfg.threads);
  const auto choice = parse_stem_choice(cfg.stem);
  auto splits = load_splits(cfg, choice);
  if (splits.test.empty()) throw std::runtime_error("evaluate: no test songs");
  write_effective_config(cfg, err);

  std::vector<int> stems;
  std::vector<SeparationModel<float>> models;
  for (int s = 0; s < 4; ++s) {
    const auto ckpt = default_checkpoint(cfg, s);
    if (!fs::exists(ckpt)) continue;
    models.push_back(build<float>(cfg.model));
    load_checkpoint(models.back(), ckpt);
    stems.push_back(s);
  }
  if (stems.empty())
    throw std::runtime_error("evaluate: no checkpoints found under " + cfg.checkpoint_dir);

  SdrReport rep;
  for (const auto& song : splits.test) rep.songs.push_back(song.name);
  out << "stem\tsong\tsdr_db\n";
  for (size_t i = 0; i < stems.size(); ++i) {
    auto scores = evaluate_stem(models[i], stems[i], splits.test);
    rep.per_song[static_cast<size_t>(stems[i])] = scores;
    for (size_t j = 0; j < scores.size(); ++j) {
      char line[128];
      std::snprintf(line, sizeof(line), "%s\t%s\t%.4f\n",
                    kStemNames[static_cast<size_t>(stems[i])], rep.songs[j].c_str(), scores[j]);
      out << line;
    }
  }
  out << "stem\tmedian_db\tmean_db\n";
  for (int s : stems) {
    char line[128];
    std::snprintf(line, sizeof(line), "%s\t%.4f\t%.4f\n", kStemNames[static_cast<size_t>(s)],
                  rep.stem_median(s), rep.stem_mean(s));
    out << line;
  }
  if (stems.size() == 4) {
    char line[128];
    std::snprintf(line, sizeof(line), "All\t%.4f\t%.4f\n", rep.all_median(), rep.all_mean());
    out << line;
  } else {
    err << "note: " << stems.size() << "/4 stems evaluated; no 'All' aggregate\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// selftest

namespace {

Tensor<double> random_tensor(Rng& rng, const Shape& shape, double lo = -1, double hi = 1) {
  auto t = Tensor<double>::zeros(shape);
  double* p = t.mutable_data();
  for (int64_t i = 0; i < numel(shape); ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

bool selftest_gradcheck(std::ostream& out) {
  Rng rng(7);
  bool ok = true;
  auto run = [&](const char* name, GradCheckResult r) {
    const bool pass = r.ok(1e-3);
    out << "  " << (pass ? "ok  " : "FAIL") << " gradcheck/" << name << " (rel err "
        << r.max_rel_err << " over " << r.coords << " coords)\n";
    ok = ok && pass;
  };

  {
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {4, 2});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    run("matmul", grad_check({a, b}, [&](Tape<double>& t) {
      return mean(t, abs_val(t, matmul(t, a, b)));
    }));
  }
  {
    auto x = random_tensor(rng, {5, 6, 2});
    auto w = random_tensor(rng, {3, 3, 2, 3}, -0.5, 0.5);
    auto b = random_tensor(rng, {3});
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    run("conv2d", grad_check({x, w, b}, [&](Tape<double>& t) {
      return mean(t, tanh_act(t, conv2d(t, x, w, b, 2, 2)));
    }));
  }
  {
    auto x = random_tensor(rng, {3, 4, 6});
    auto w = random_tensor(rng, {3, 3, 4, 6}, -0.5, 0.5);  // kh kw cout cin
    auto b = random_tensor(rng, {4});
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    run("conv2d_transpose", grad_check({x, w, b}, [&](Tape<double>& t) {
      return mean(t, elu(t, conv2d_transpose(t, x, w, b, 2, 2, 6, 7)));
    }));
  }
  {
    auto x = random_tensor(rng, {4, 5});
    x.set_requires_grad(true);
    run("softmax", grad_check({x}, [&](Tape<double>& t) {
      auto y = softmax_rows(t, x, 2.0);
      return mean(t, mul(t, y, y));
    }));
  }
  {
    auto x = random_tensor(rng, {6, 3, 4});
    auto g = random_tensor(rng, {4}, 0.5, 1.5);
    auto be = random_tensor(rng, {4});
    auto rm = Tensor<double>::zeros({4});
    auto rv = Tensor<double>::filled({4}, 1.0);
    x.set_requires_grad(true);
    g.set_requires_grad(true);
    be.set_requires_grad(true);
    run("batchnorm", grad_check({x, g, be}, [&](Tape<double>& t) {
      return mean(t, abs_val(t, batchnorm(t, x, g, be, rm, rv, Mode::Train, 1e-5, 0.9)));
    }));
  }
  {
    auto re = random_tensor(rng, {3, 8, 2});
    auto im = random_tensor(rng, {3, 8, 2});
    re.set_requires_grad(true);
    im.set_requires_grad(true);
    run("istft-primitives", grad_check({re, im}, [&](Tape<double>& t) {
      ComplexSpectrogram<double> spec{re, im, 1000, 16, 4};
      return mean(t, abs_val(t, istft(t, spec, 12)));
    }));
  }
  return ok;
}

bool selftest_shape_ledger(std::ostream& out) {
  bool ok = true;
  auto expect = [&](const StageShape& st, int t, int f, int c) {
    const bool pass = st.t == t && st.f == f && st.c == c;
    if (!pass)
      out << "  FAIL shape-ledger/" << st.name << ": got " << st.t << "x" << st.f << "x" << st.c
          << ", want " << t << "x" << f << "x" << c << "\n";
    ok = ok && pass;
  };
  auto full = shape_ledger(ModelConfig::full_scale());
  expect(full[0], 240, 1024, 16);
  expect(full[1], 240, 1024, 32);
  expect(full[2], 120, 512, 64);
  expect(full[3], 120, 256, 64);
  expect(full[4], 120, 256, 64);
  expect(full[5], 120, 512, 64);
  expect(full[6], 240, 1024, 64);
  expect(full[7], 240, 1024, 32);
  expect(full[8], 240, 1024, 16);
  auto desk = shape_ledger(ModelConfig::desk_scale());
  expect(desk[3], 32, 16, 16);
  expect(desk[8], 64, 64, 16);

  // the micro model's real tensors must match its ledger
  auto cfg = ModelConfig::micro();
  auto model = build<double>(cfg);
  auto tape = inference_tape<double>();
  Rng xr(3);
  auto x = random_tensor(xr, {cfg.segment_frames, cfg.sub_bins(), cfg.mask_channels()}, -0.1, 0.1);
  auto enc = model.enc.forward(tape, x, Mode::Infer);
  auto led = shape_ledger(cfg);
  auto check_dims = [&](const char* name, const Tensor<double>& t, const StageShape& st) {
    const bool pass = t.ndim() == 3 && t.dim(0) == st.t && t.dim(1) == st.f && t.dim(2) == st.c;
    if (!pass)
      out << "  FAIL shape-ledger/micro-" << name << ": got " << shape_str(t.shape()) << "\n";
    ok = ok && pass;
  };
  check_dims("eb1", enc.eb1, led[1]);
  check_dims("eb2", enc.eb2, led[2]);
  check_dims("eb3", enc.bottleneck, led[3]);
  auto sep = model.sep.forward(tape, enc.bottleneck, Mode::Infer);
  check_dims("separator", sep, led[4]);
  auto mask = model.dec.forward(tape, enc, sep, Mode::Infer);
  check_dims("mask", mask, led[8]);
  out << "  ok   shape-ledger (" << (ok ? "all stages" : "see failures above") << ")\n";
  return ok;
}

bool selftest_attention_oracle(std::ostream& out) {
  Rng rng(11);
  bool ok = true;
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int t = 2 + static_cast<int>(rng.uniform_int(5));
    const int f = 2 + static_cast<int>(rng.uniform_int(5));
    const int c = 2 * (1 + static_cast<int>(rng.uniform_int(3)));
    const int axis = trial % 2;
    ParamStore<double> store;
    Rng init(100 + static_cast<uint64_t>(trial));
    SelfAttentionLayer<double> layer(store, "sa", c, NormConfig{}, init);

    auto x = random_tensor(rng, {t, f, c});
    auto tape = inference_tape<double>();
    auto got = layer.forward(tape, x, Mode::Infer, axis);

    auto blk = [&](const char* prefix) {
      ref::ConvBlockRef<double> b;
      b.w = store.params.at(std::string("sa.") + prefix + ".w");
      b.b = store.params.at(std::string("sa.") + prefix + ".b");
      b.gamma = store.params.at(std::string("sa.") + prefix + ".gamma");
      b.beta = store.params.at(std::string("sa.") + prefix + ".beta");
      b.mean = store.buffers.at(std::string("sa.") + prefix + ".running_mean");
      b.var = store.buffers.at(std::string("sa.") + prefix + ".running_var");
      b.eps = 1e-5;
      b.act = 1;  // elu
      return b;
    };
    auto want = ref::self_attention_naive(x, blk("q"), blk("k"), blk("v"), blk("o"), axis);
    for (int64_t i = 0; i < numel(want.shape()); ++i)
      worst = std::max(worst, std::abs(got.data()[i] - want.data()[i]));
  }
  ok = worst < 1e-5;
  out << "  " << (ok ? "ok  " : "FAIL") << " attention-oracle (max deviation " << worst << ")\n";
  return ok;
}

bool selftest_stft_roundtrip(std::ostream& out) {
  Rng rng(23);
  const int n_fft = 512, hop = 64, sr = 8000;
  const int64_t n = 4096;
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    auto x = Tensor<double>::zeros({static_cast<int>(n), 2});
    double* p = x.mutable_data();
    for (int k = 0; k < 20; ++k) {
      const double bin = rng.uniform(4.0, 0.75 * (n_fft / 2));
      const double w = 2 * M_PI * bin / n_fft;
      const double ph = rng.uniform(0.0, 2 * M_PI);
      const double amp = rng.uniform(0.01, 0.05);
      const double pan = rng.uniform(0.3, 1.2);
      for (int64_t i = 0; i < n; ++i) {
        const double v = amp * std::sin(w * static_cast<double>(i) + ph);
        p[i * 2 + 0] += v * std::cos(pan);
        p[i * 2 + 1] += v * std::sin(pan);
      }
    }
    auto spec = stft(x, n_fft, hop, sr);
    auto tape = inference_tape<double>();
    auto back = istft(tape, spec, n);
    // reconstruction is specified over the interior: the first/last n_fft
    // samples see the reflection-pad kink, whose broadband spectrum reaches
    // the dropped Nyquist row
    double peak = 0, err = 0;
    for (int64_t i = n_fft * 2; i < (n - n_fft) * 2; ++i) {
      peak = std::max(peak, std::abs(p[i]));
      err = std::max(err, std::abs(p[i] - back.data()[i]));
    }
    worst = std::max(worst, err / peak);
  }
  bool ok = worst < 1e-4;
  out << "  " << (ok ? "ok  " : "FAIL") << " stft-roundtrip (interior max relative error " << worst
      << ")\n";

  // pack/unpack must be an exact permutation
  auto re = random_tensor(rng, {6, 8, 2});
  auto im = random_tensor(rng, {6, 8, 2});
  auto tape = inference_tape<double>();
  auto packed = pack_subbands(tape, re, im, 4);
  auto [ure, uim] = unpack_mask(tape, packed, 4);
  bool exact = true;
  for (int64_t i = 0; i < numel(re.shape()); ++i)
    exact = exact && ure.data()[i] == re.data()[i] && uim.data()[i] == im.data()[i];
  out << "  " << (exact ? "ok  " : "FAIL") << " subband-pack-roundtrip\n";
  return ok && exact;
}

}  // namespace

int cmd_selftest(const RunConfig& cfg, bool inject_softmax_fault, std::ostream& out,
                 std::ostream& err) {
  configure_threads(cfg.threads);
  if (inject_softmax_fault) {
    attention_scale_fudge = 1.25;
    err << "fault injection: attention softmax scale corrupted by 1.25\n";
  }
  struct Group {
    const char* name;
    bool (*fn)(std::ostream&);
  };
  const Group groups[] = {
      {"gradcheck", selftest_gradcheck},
      {"shape-ledger", selftest_shape_ledger},
      {"attention-oracle", selftest_attention_oracle},
      {"stft-roundtrip", selftest_stft_roundtrip},
  };
  bool all_ok = true;
  for (const auto& g : groups) {
    out << "selftest group: " << g.name << "\n";
    const bool ok = g.fn(out);
    out << (ok ? "[ok] " : "[FAIL] ") << g.name << "\n";
    all_ok = all_ok && ok;
  }
  attention_scale_fudge = 1.0;
  out << (all_ok ? "selftest passed\n" : "selftest FAILED\n");
  return all_ok ? 0 : 1;
}

}  // namespace mtfatt
