#pragma once

#include <json.hpp>

#include "tvrl/core/rng.hpp"
#include "tvrl/data/dataset.hpp"

namespace tvrl {

// ---------------------------------------------------------------------------
// Shared helpers

namespace detail {

/// Per-sequence static texture: a low-amplitude oriented grating plus fixed
/// speckle. The grating orientation is the texture class (a non-temporal
/// control signal); the speckle makes each sequence identifiable.
struct Texture {
  int texture_class = 0;  // 0 horizontal grating, 1 vertical
  double grating_freq = 0.1;
  double grating_phase = 0.0;
  double grating_amp = 0.1;
  double base = 0.2;
  Mat<float> speckle;  // static per-sequence noise field

  float value(int r, int c) const {
    double coord = texture_class == 0 ? r : c;
    double v = base + grating_amp * std::sin(2.0 * M_PI * grating_freq * coord +
                                             grating_phase);
    return static_cast<float>(v) + speckle(r, c);
  }
};

inline Texture sample_texture(int size, Rng& rng) {
  Texture t;
  t.texture_class = rng.uniform_int(2);
  t.grating_freq = rng.uniform(0.08, 0.2);
  t.grating_phase = rng.uniform(0.0, 2.0 * M_PI);
  t.grating_amp = rng.uniform(0.06, 0.12);
  t.base = rng.uniform(0.15, 0.3);
  t.speckle.resize(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      t.speckle(r, c) = static_cast<float>(rng.normal(0.0, 0.03));
  return t;
}

/// Patient structure: most sequences get their own patient; a fraction share
/// a patient with the previous sequence (two studies of one subject), which
/// exercises patient-exclusive splitting.
inline std::vector<std::string> assign_patients(int n, Rng& rng,
                                                double share_prob = 0.2) {
  std::vector<std::string> out;
  int patient = -1;
  int count_for_patient = 0;
  char buf[32];
  for (int i = 0; i < n; ++i) {
    if (patient < 0 || count_for_patient >= 2 || !rng.bernoulli(share_prob)) {
      ++patient;
      count_for_patient = 0;
    }
    ++count_for_patient;
    std::snprintf(buf, sizeof(buf), "pat_%06d", patient);
    out.emplace_back(buf);
  }
  return out;
}

/// Patient-exclusive split with counts rounded to the 70/15/15 targets.
inline void assign_splits(DatasetManifest& m, const std::array<double, 3>& fractions,
                          Rng& rng) {
  std::vector<std::string> patients;
  std::map<std::string, std::vector<int>> by_patient;
  for (size_t i = 0; i < m.records.size(); ++i) {
    auto& v = by_patient[m.records[i].patient_id];
    if (v.empty()) patients.push_back(m.records[i].patient_id);
    v.push_back(static_cast<int>(i));
  }
  const int p = static_cast<int>(patients.size());
  std::vector<int> order = rng.permutation(p);
  int n_train = static_cast<int>(std::lround(fractions[0] * p));
  int n_val = static_cast<int>(std::lround(fractions[1] * p));
  n_train = std::min(n_train, p);
  n_val = std::min(n_val, p - n_train);
  for (int rank = 0; rank < p; ++rank) {
    Split s = rank < n_train            ? Split::kTrain
              : rank < n_train + n_val  ? Split::kVal
                                        : Split::kTest;
    for (int idx : by_patient[patients[order[rank]]]) m.records[idx].split = s;
  }
  m.split_fractions = fractions;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cardiac-like dense video: an ellipse whose area oscillates with a
// per-sequence rate, amplitude and phase over a static textured background.

struct CardiacSynthConfig {
  int image_size = 32;
  int frames = 50;
  double frame_spacing = 0.032;  // seconds
  double area_frac_min = 0.12;   // baseline area A0 as a fraction of image area
  double area_frac_max = 0.26;
  double contraction_min = 0.2;  // e: fraction of A0 lost at peak contraction
  double contraction_max = 0.6;
  double freq_min = 0.75;  // Hz; at least one full cycle in 1.6 s
  double freq_max = 1.5;
  double aspect_min = 0.75;
  double aspect_max = 1.3;
  double foreground = 0.85;
  double frame_noise_std = 0.01;
  std::array<double, 3> split_fractions = {0.70, 0.15, 0.15};
};

inline void to_json(nlohmann::json& j, const CardiacSynthConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"frames", c.frames},
                     {"frame_spacing", c.frame_spacing},
                     {"area_frac_min", c.area_frac_min},
                     {"area_frac_max", c.area_frac_max},
                     {"contraction_min", c.contraction_min},
                     {"contraction_max", c.contraction_max},
                     {"freq_min", c.freq_min},
                     {"freq_max", c.freq_max},
                     {"aspect_min", c.aspect_min},
                     {"aspect_max", c.aspect_max},
                     {"foreground", c.foreground},
                     {"frame_noise_std", c.frame_noise_std}};
}

inline void from_json(const nlohmann::json& j, CardiacSynthConfig& c) {
  CardiacSynthConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.frames = j.value("frames", d.frames);
  c.frame_spacing = j.value("frame_spacing", d.frame_spacing);
  c.area_frac_min = j.value("area_frac_min", d.area_frac_min);
  c.area_frac_max = j.value("area_frac_max", d.area_frac_max);
  c.contraction_min = j.value("contraction_min", d.contraction_min);
  c.contraction_max = j.value("contraction_max", d.contraction_max);
  c.freq_min = j.value("freq_min", d.freq_min);
  c.freq_max = j.value("freq_max", d.freq_max);
  c.aspect_min = j.value("aspect_min", d.aspect_min);
  c.aspect_max = j.value("aspect_max", d.aspect_max);
  c.foreground = j.value("foreground", d.foreground);
  c.frame_noise_std = j.value("frame_noise_std", d.frame_noise_std);
}

struct CardiacParams {
  double a0_px = 0;  // baseline ellipse area in px^2
  double e = 0;      // contraction fraction
  double f = 0;      // beat frequency, Hz
  double phi = 0;
  double aspect = 1.0;
  double cx = 0, cy = 0;
  detail::Texture texture;
};

/// A(t) = A0 (1 - e (1 + sin(2 pi f t + phi)) / 2).
inline double cardiac_area_at(const CardiacParams& p, double t) {
  return p.a0_px * (1.0 - p.e * (1.0 + std::sin(2.0 * M_PI * p.f * t + p.phi)) / 2.0);
}

/// stroke_area = A_max - A_min = A0 e; output_analog = stroke_area * f;
/// ef_analog = (A_max - A_min) / A_max = e.
inline std::map<std::string, double> cardiac_labels(const CardiacParams& p) {
  double stroke = p.a0_px * p.e;
  return {{"output_analog", stroke * p.f},
          {"ef_analog", p.e},
          {"texture_class", static_cast<double>(p.texture.texture_class)}};
}

inline CardiacParams sample_cardiac_params(const CardiacSynthConfig& cfg, Rng& rng) {
  CardiacParams p;
  const double area = cfg.image_size * static_cast<double>(cfg.image_size);
  p.a0_px = rng.uniform(cfg.area_frac_min, cfg.area_frac_max) * area;
  p.e = rng.uniform(cfg.contraction_min, cfg.contraction_max);
  p.f = rng.uniform(cfg.freq_min, cfg.freq_max);
  p.phi = rng.uniform(0.0, 2.0 * M_PI);
  p.aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
  // keep the fully relaxed ellipse inside the frame
  double rmax = std::sqrt(p.a0_px * std::max(p.aspect, 1.0 / p.aspect) / M_PI);
  double margin = rmax + 1.5;
  p.cx = rng.uniform(margin, cfg.image_size - margin);
  p.cy = rng.uniform(margin, cfg.image_size - margin);
  p.texture = detail::sample_texture(cfg.image_size, rng);
  return p;
}

/// Ellipse coverage in [0,1] per pixel (2x2 supersampled), exposed so tests
/// can pixel-count the area independently of the rendered intensities.
inline Mat<float> cardiac_coverage_at(const CardiacParams& p, double t, int size) {
  double area = std::max(cardiac_area_at(p, t), 1e-9);
  double rx = std::sqrt(area * p.aspect / M_PI);
  double ry = std::sqrt(area / (p.aspect * M_PI));
  Mat<float> cov(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      int hits = 0;
      for (int sr = 0; sr < 2; ++sr)
        for (int sc = 0; sc < 2; ++sc) {
          double y = r + 0.25 + 0.5 * sr - p.cy;
          double x = c + 0.25 + 0.5 * sc - p.cx;
          double d = (x * x) / (rx * rx) + (y * y) / (ry * ry);
          if (d <= 1.0) ++hits;
        }
      cov(r, c) = static_cast<float>(hits) / 4.0f;
    }
  return cov;
}

inline Mat<float> render_cardiac_frame(const CardiacParams& p, double t,
                                       const CardiacSynthConfig& cfg, Rng& frame_rng) {
  Mat<float> cov = cardiac_coverage_at(p, t, cfg.image_size);
  Mat<float> img(cfg.image_size, cfg.image_size);
  for (int r = 0; r < cfg.image_size; ++r)
    for (int c = 0; c < cfg.image_size; ++c) {
      float bg = p.texture.value(r, c);
      float v = bg + (static_cast<float>(cfg.foreground) - bg) * cov(r, c);
      v += static_cast<float>(frame_rng.normal(0.0, cfg.frame_noise_std));
      img(r, c) = std::min(1.0f, std::max(0.0f, v));
    }
  return img;
}

/// Dense-video benchmark with analytic labels. Deterministic in (n, seed).
inline DatasetManifest generate_cardiac_synthetic(int n, const CardiacSynthConfig& cfg,
                                                  uint64_t seed) {
  if (n < 1) throw config_error("generate_cardiac_synthetic: n >= 1 required");
  DatasetManifest m;
  m.unit = "seconds";
  m.tasks = {{"output_analog", TaskKind::kRegression},
             {"ef_analog", TaskKind::kRegression},
             {"texture_class", TaskKind::kClassification}};
  Rng base(seed);
  Rng structure = base.derive("patients");
  std::vector<std::string> patients = detail::assign_patients(n, structure);
  char buf[32];
  for (int i = 0; i < n; ++i) {
    Rng rng = base.derive("seq", static_cast<uint64_t>(i));
    CardiacParams p = sample_cardiac_params(cfg, rng);
    SequenceRecord rec;
    std::snprintf(buf, sizeof(buf), "seq_%06d", i);
    rec.sequence_id = buf;
    rec.patient_id = patients[i];
    rec.labels = cardiac_labels(p);
    for (int fidx = 0; fidx < cfg.frames; ++fidx) {
      double t = fidx * cfg.frame_spacing;
      rec.timestamps.push_back(t);
      Rng frame_rng = rng.derive("frame", static_cast<uint64_t>(fidx));
      rec.frames.push_back(to_u8(render_cardiac_frame(p, t, cfg, frame_rng)));
    }
    m.records.push_back(std::move(rec));
  }
  Rng split_rng = base.derive("split");
  detail::assign_splits(m, cfg.split_fractions, split_rng);
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Longitudinal lesion growth: scans at irregular (exponential) intervals of a
// blob with radius r(t) = r0 + g t. Prognosis asks whether the radius crosses
// the threshold within a fixed horizon after the last scan, which requires
// estimating the growth rate from irregular intervals.

struct LongitudinalSynthConfig {
  int image_size = 32;
  int scans_min = 4;
  int scans_max = 12;
  double gap_mean_days = 90.0;  // gaps are gap_floor + Exp(mean - floor)
  double gap_floor_days = 7.0;
  double r0_min = 2.0;  // px
  double r0_max = 5.0;
  double growth_zero_prob = 0.25;
  double growth_min = 0.002;  // px/day when growing
  double growth_max = 0.010;
  double horizon_days = 365.0;
  double threshold_px = 8.0;
  double lesion_intensity = 0.9;
  double frame_noise_std = 0.03;
  std::array<double, 3> split_fractions = {0.70, 0.15, 0.15};
};

inline void to_json(nlohmann::json& j, const LongitudinalSynthConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"scans_min", c.scans_min},
                     {"scans_max", c.scans_max},
                     {"gap_mean_days", c.gap_mean_days},
                     {"gap_floor_days", c.gap_floor_days},
                     {"r0_min", c.r0_min},
                     {"r0_max", c.r0_max},
                     {"growth_zero_prob", c.growth_zero_prob},
                     {"growth_min", c.growth_min},
                     {"growth_max", c.growth_max},
                     {"horizon_days", c.horizon_days},
                     {"threshold_px", c.threshold_px},
                     {"lesion_intensity", c.lesion_intensity},
                     {"frame_noise_std", c.frame_noise_std}};
}

inline void from_json(const nlohmann::json& j, LongitudinalSynthConfig& c) {
  LongitudinalSynthConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.scans_min = j.value("scans_min", d.scans_min);
  c.scans_max = j.value("scans_max", d.scans_max);
  c.gap_mean_days = j.value("gap_mean_days", d.gap_mean_days);
  c.gap_floor_days = j.value("gap_floor_days", d.gap_floor_days);
  c.r0_min = j.value("r0_min", d.r0_min);
  c.r0_max = j.value("r0_max", d.r0_max);
  c.growth_zero_prob = j.value("growth_zero_prob", d.growth_zero_prob);
  c.growth_min = j.value("growth_min", d.growth_min);
  c.growth_max = j.value("growth_max", d.growth_max);
  c.horizon_days = j.value("horizon_days", d.horizon_days);
  c.threshold_px = j.value("threshold_px", d.threshold_px);
  c.lesion_intensity = j.value("lesion_intensity", d.lesion_intensity);
  c.frame_noise_std = j.value("frame_noise_std", d.frame_noise_std);
}

struct LongitudinalParams {
  double r0 = 0;  // px at t = 0
  double g = 0;   // px/day
  double cx = 0, cy = 0;
  detail::Texture texture;
};

inline double lesion_radius_at(const LongitudinalParams& p, double t) {
  return p.r0 + p.g * t;
}

/// growth_rate = g; stage_class = [r(t_last) > threshold];
/// prognosis = [r(t_last + horizon) > threshold].
inline std::map<std::string, double> longitudinal_labels(
    const LongitudinalParams& p, double t_last, const LongitudinalSynthConfig& cfg) {
  double r_now = lesion_radius_at(p, t_last);
  double r_future = lesion_radius_at(p, t_last + cfg.horizon_days);
  return {{"growth_rate", p.g},
          {"stage_class", r_now > cfg.threshold_px ? 1.0 : 0.0},
          {"prognosis", r_future > cfg.threshold_px ? 1.0 : 0.0}};
}

inline LongitudinalParams sample_longitudinal_params(
    const LongitudinalSynthConfig& cfg, Rng& rng) {
  LongitudinalParams p;
  p.r0 = rng.uniform(cfg.r0_min, cfg.r0_max);
  p.g = rng.bernoulli(cfg.growth_zero_prob)
            ? 0.0
            : rng.uniform(cfg.growth_min, cfg.growth_max);
  p.cx = rng.uniform(cfg.image_size * 0.35, cfg.image_size * 0.65);
  p.cy = rng.uniform(cfg.image_size * 0.35, cfg.image_size * 0.65);
  p.texture = detail::sample_texture(cfg.image_size, rng);
  return p;
}

inline std::vector<double> sample_scan_times(const LongitudinalSynthConfig& cfg,
                                             Rng& rng) {
  int k = cfg.scans_min + rng.uniform_int(cfg.scans_max - cfg.scans_min + 1);
  std::vector<double> times = {0.0};
  for (int i = 1; i < k; ++i)
    times.push_back(times.back() + cfg.gap_floor_days +
                    rng.exponential(cfg.gap_mean_days - cfg.gap_floor_days));
  return times;
}

inline Mat<float> render_longitudinal_frame(const LongitudinalParams& p, double t,
                                            const LongitudinalSynthConfig& cfg,
                                            Rng& frame_rng) {
  double radius = lesion_radius_at(p, t);
  Mat<float> img(cfg.image_size, cfg.image_size);
  for (int r = 0; r < cfg.image_size; ++r)
    for (int c = 0; c < cfg.image_size; ++c) {
      int hits = 0;
      for (int sr = 0; sr < 2; ++sr)
        for (int sc = 0; sc < 2; ++sc) {
          double y = r + 0.25 + 0.5 * sr - p.cy;
          double x = c + 0.25 + 0.5 * sc - p.cx;
          if (x * x + y * y <= radius * radius) ++hits;
        }
      float cov = static_cast<float>(hits) / 4.0f;
      float bg = p.texture.value(r, c);
      float v = bg + (static_cast<float>(cfg.lesion_intensity) - bg) * cov;
      v += static_cast<float>(frame_rng.normal(0.0, cfg.frame_noise_std));
      img(r, c) = std::min(1.0f, std::max(0.0f, v));
    }
  return img;
}

/// Irregular longitudinal benchmark with analytic labels; the prognosis
/// label is a deterministic function of (r0, g, t_last, horizon, threshold).
inline DatasetManifest generate_longitudinal_synthetic(
    int n, const LongitudinalSynthConfig& cfg, uint64_t seed) {
  if (n < 1) throw config_error("generate_longitudinal_synthetic: n >= 1 required");
  DatasetManifest m;
  m.unit = "days";
  m.tasks = {{"growth_rate", TaskKind::kRegression},
             {"prognosis", TaskKind::kClassification},
             {"stage_class", TaskKind::kClassification}};
  Rng base(seed);
  Rng structure = base.derive("patients");
  std::vector<std::string> patients = detail::assign_patients(n, structure);
  char buf[32];
  for (int i = 0; i < n; ++i) {
    Rng rng = base.derive("seq", static_cast<uint64_t>(i));
    LongitudinalParams p = sample_longitudinal_params(cfg, rng);
    std::vector<double> times = sample_scan_times(cfg, rng);
    SequenceRecord rec;
    std::snprintf(buf, sizeof(buf), "seq_%06d", i);
    rec.sequence_id = buf;
    rec.patient_id = patients[i];
    rec.timestamps = times;
    rec.labels = longitudinal_labels(p, times.back(), cfg);
    for (size_t sidx = 0; sidx < times.size(); ++sidx) {
      Rng frame_rng = rng.derive("frame", static_cast<uint64_t>(sidx));
      rec.frames.push_back(
          to_u8(render_longitudinal_frame(p, times[sidx], cfg, frame_rng)));
    }
    m.records.push_back(std::move(rec));
  }
  Rng split_rng = base.derive("split");
  detail::assign_splits(m, cfg.split_fractions, split_rng);
  m.validate();
  return m;
}

}  // namespace tvrl
