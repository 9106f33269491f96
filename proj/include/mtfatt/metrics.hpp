#pragma once

#include <iomanip>

#include "mtfatt/dataio.hpp"

// Separation quality metrics and whole-dataset evaluation.
namespace mtfatt {

// Signal-to-distortion ratio in dB, computed jointly over both channels,
// capped at 100 dB. A silent reference has no defined SDR.
template <typename S>
double sdr(const Tensor<S>& ref, const Tensor<S>& est) {
  check_same_shape(ref, est, "sdr");
  double se = 0, serr = 0;
  const S* pr = ref.data();
  const S* pe = est.data();
  for (int64_t i = 0; i < numel(ref.shape()); ++i) {
    const double r = static_cast<double>(pr[i]);
    const double d = r - static_cast<double>(pe[i]);
    se += r * r;
    serr += d * d;
  }
  if (se == 0) throw std::runtime_error("sdr: silent reference signal");
  if (serr == 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(se / serr));
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct SdrReport {
  std::vector<std::string> songs;
  std::array<std::vector<double>, 4> per_song;  // kStemNames order

  double stem_median(int s) const { return median(per_song[static_cast<size_t>(s)]); }
  double stem_mean(int s) const { return mean_of(per_song[static_cast<size_t>(s)]); }
  // "All" = average of the four per-stem medians (and means).
  double all_median() const {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += stem_median(i);
    return s / 4;
  }
  double all_mean() const {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += stem_mean(i);
    return s / 4;
  }

  void write(std::ostream& os) const {
    os << "stem\tsong\tsdr_db\n";
    for (int s = 0; s < 4; ++s)
      for (size_t j = 0; j < songs.size(); ++j)
        os << kStemNames[static_cast<size_t>(s)] << '\t' << songs[j] << '\t' << std::setprecision(4)
           << std::fixed << per_song[static_cast<size_t>(s)][j] << '\n';
    os << "stem\tmedian_db\tmean_db\n";
    for (int s = 0; s < 4; ++s)
      os << kStemNames[static_cast<size_t>(s)] << '\t' << stem_median(s) << '\t' << stem_mean(s)
         << '\n';
    os << "All\t" << all_median() << '\t' << all_mean() << '\n';
  }
};

// Runs every model over every song's mixture and scores each stem against
// its reference. `models` maps stem index -> trained model.
template <typename S>
SdrReport evaluate(std::array<SeparationModel<S>*, 4>& models,
                   const std::vector<StemSet<S>>& songs) {
  for (int s = 0; s < 4; ++s)
    if (!models[static_cast<size_t>(s)])
      throw std::runtime_error(std::string("evaluate: no model for stem '") +
                               kStemNames[static_cast<size_t>(s)] + "'");
  SdrReport rep;
  for (const auto& song : songs) {
    rep.songs.push_back(song.name);
    auto mix = song.mixture();
    for (int s = 0; s < 4; ++s) {
      auto est = separate_long(*models[static_cast<size_t>(s)], mix);
      rep.per_song[static_cast<size_t>(s)].push_back(
          sdr(song.stems[static_cast<size_t>(s)], est));
    }
  }
  return rep;
}

// Single-stem variant used when only one model has been trained.
template <typename S>
std::vector<double> evaluate_stem(SeparationModel<S>& model, int stem,
                                  const std::vector<StemSet<S>>& songs) {
  std::vector<double> out;
  for (const auto& song : songs) {
    auto est = separate_long(model, song.mixture());
    out.push_back(sdr(song.stems[static_cast<size_t>(stem)], est));
  }
  return out;
}

}  // namespace mtfatt
