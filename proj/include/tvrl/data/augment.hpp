#pragma once

#include <json.hpp>

#include "tvrl/data/clips.hpp"
#include "tvrl/image.hpp"

namespace tvrl {

/// The grayscale-safe slice of the standard contrastive augmentation menu:
/// random resized crop, horizontal flip, brightness/contrast jitter and
/// Gaussian blur. Hue/saturation jitter and grayscale conversion are dropped.
struct AugConfig {
  bool enabled = true;
  double crop_scale_min = 0.5;
  double crop_scale_max = 1.0;
  double flip_prob = 0.5;
  double brightness = 0.4;  // factor drawn from [1-b, 1+b]
  double contrast = 0.4;    // factor drawn from [1-c, 1+c]
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  void validate() const {
    if (crop_scale_min <= 0 || crop_scale_max > 1.0 ||
        crop_scale_min > crop_scale_max)
      throw config_error("augment: crop scale range invalid");
    if (brightness < 0 || brightness >= 1 || contrast < 0 || contrast >= 1)
      throw config_error("augment: jitter amplitude must lie in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const AugConfig& c) {
  j = nlohmann::json{{"enabled", c.enabled},
                     {"crop_scale_min", c.crop_scale_min},
                     {"crop_scale_max", c.crop_scale_max},
                     {"flip_prob", c.flip_prob},
                     {"brightness", c.brightness},
                     {"contrast", c.contrast},
                     {"blur_prob", c.blur_prob},
                     {"blur_sigma_min", c.blur_sigma_min},
                     {"blur_sigma_max", c.blur_sigma_max}};
}

inline void from_json(const nlohmann::json& j, AugConfig& c) {
  AugConfig d;
  c.enabled = j.value("enabled", d.enabled);
  c.crop_scale_min = j.value("crop_scale_min", d.crop_scale_min);
  c.crop_scale_max = j.value("crop_scale_max", d.crop_scale_max);
  c.flip_prob = j.value("flip_prob", d.flip_prob);
  c.brightness = j.value("brightness", d.brightness);
  c.contrast = j.value("contrast", d.contrast);
  c.blur_prob = j.value("blur_prob", d.blur_prob);
  c.blur_sigma_min = j.value("blur_sigma_min", d.blur_sigma_min);
  c.blur_sigma_max = j.value("blur_sigma_max", d.blur_sigma_max);
}

/// One concrete parameter draw. Within a view the same draw is applied to
/// every frame, so temporal structure survives augmentation.
struct AugParams {
  int crop_x = 0, crop_y = 0, crop_size = 0;
  bool flip = false;
  float brightness_factor = 1.0f;
  float contrast_factor = 1.0f;
  bool blur = false;
  double sigma = 0.0;
};

inline AugParams sample_aug_params(const AugConfig& cfg, int image_size, Rng& rng) {
  AugParams p;
  double scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
  p.crop_size = std::max(1, std::min(image_size, static_cast<int>(std::lround(
                                                     std::sqrt(scale) * image_size))));
  p.crop_x = rng.uniform_int(image_size - p.crop_size + 1);
  p.crop_y = rng.uniform_int(image_size - p.crop_size + 1);
  p.flip = rng.bernoulli(cfg.flip_prob);
  p.brightness_factor =
      static_cast<float>(rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness));
  p.contrast_factor =
      static_cast<float>(rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast));
  p.blur = rng.bernoulli(cfg.blur_prob);
  p.sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  return p;
}

/// Crop/resize -> flip -> brightness -> contrast (about the current frame
/// mean) -> blur -> clamp to [0,1].
inline Mat<float> apply_augmentation(const Mat<float>& frame, const AugParams& p) {
  Mat<float> img = resize_crop_bilinear(frame, p.crop_x, p.crop_y, p.crop_size,
                                        static_cast<int>(frame.rows()));
  if (p.flip) img = hflip(img);
  img *= p.brightness_factor;
  float mean = img.mean();
  img = ((img.array() - mean) * p.contrast_factor + mean).matrix();
  if (p.blur) img = gaussian_blur(img, p.sigma);
  return img.cwiseMax(0.0f).cwiseMin(1.0f);
}

/// Two independently augmented copies of the same source clip; the
/// contrastive positive pair. Timestamps are untouched.
struct ViewPair {
  Clip view_i;
  Clip view_j;
};

inline Clip augment_clip(const Clip& clip, const AugParams& p) {
  Clip out = clip;
  for (int f = 0; f < clip.valid_count(); ++f)
    out.frames[f] = apply_augmentation(clip.frames[f], p);
  return out;
}

inline ViewPair make_view_pair(const Clip& clip, const AugConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!cfg.enabled) return {clip, clip};
  const int size = static_cast<int>(clip.frames[0].rows());
  AugParams pi = sample_aug_params(cfg, size, rng);
  AugParams pj = sample_aug_params(cfg, size, rng);
  return {augment_clip(clip, pi), augment_clip(clip, pj)};
}

}  // namespace tvrl
