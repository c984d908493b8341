#include "patchguard/synthgen/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/io.hpp"

namespace patchguard::synthgen {

Background parse_background(const std::string& s) {
  if (s == "plain") return Background::Plain;
  if (s == "textured") return Background::Textured;
  throw InvalidConfig("unknown background '" + s + "' (expected plain or textured)");
}

std::string to_string(Background b) { return b == Background::Plain ? "plain" : "textured"; }

void SceneSpec::validate() const {
  if (image_size < 64) throw InvalidConfig("image_size must be >= 64");
  if (!(min_foreground > 0.0 && min_foreground < max_foreground && max_foreground <= 1.0)) {
    throw InvalidConfig("foreground bounds must satisfy 0 < min < max <= 1");
  }
  if (!(texture_scale > 0.0)) throw InvalidConfig("texture_scale must be positive");
  if (sensor_noise < 0.0) throw InvalidConfig("sensor_noise must be nonnegative");
  if (defect) defect->validate();
}

nlohmann::json SceneSpec::to_json() const {
  nlohmann::json j = {{"image_size", image_size},         {"background", to_string(background)},
                      {"texture_scale", texture_scale},   {"seed", seed.value},
                      {"min_foreground", min_foreground}, {"max_foreground", max_foreground},
                      {"sensor_noise", sensor_noise}};
  j["defect"] = defect ? defect->to_json() : nlohmann::json(nullptr);
  return j;
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.image_size = j.value("image_size", s.image_size);
  s.background = parse_background(j.value("background", std::string("textured")));
  s.texture_scale = j.value("texture_scale", s.texture_scale);
  s.seed.value = j.value("seed", s.seed.value);
  s.min_foreground = j.value("min_foreground", s.min_foreground);
  s.max_foreground = j.value("max_foreground", s.max_foreground);
  s.sensor_noise = j.value("sensor_noise", s.sensor_noise);
  if (j.contains("defect") && !j["defect"].is_null()) s.defect = detectors::SyntheticDefectSpec::from_json(j["defect"]);
  s.validate();
  return s;
}

detectors::SyntheticDefectSpec small_stains() {
  detectors::SyntheticDefectSpec s;
  s.count_min = 1;
  s.count_max = 3;
  s.radius_min = 4.0;
  s.radius_max = 10.0;
  return s;
}

namespace {

// Bicubic-smoothed lattice noise in [0,1].
class ValueNoise {
 public:
  ValueNoise(Rng& rng, std::size_t cells) : n_(cells + 2), v_(n_ * n_) {
    for (auto& x : v_) x = rng.uniform();
  }
  double at(double y, double x) const {
    const double fy = std::clamp(y, 0.0, static_cast<double>(n_ - 2) - 1e-9);
    const double fx = std::clamp(x, 0.0, static_cast<double>(n_ - 2) - 1e-9);
    const auto iy = static_cast<std::size_t>(fy), ix = static_cast<std::size_t>(fx);
    const double ty = smooth(fy - static_cast<double>(iy)), tx = smooth(fx - static_cast<double>(ix));
    const double a = v_[iy * n_ + ix], b = v_[iy * n_ + ix + 1];
    const double c = v_[(iy + 1) * n_ + ix], d = v_[(iy + 1) * n_ + ix + 1];
    return (a + (b - a) * tx) * (1 - ty) + (c + (d - c) * tx) * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  std::size_t n_;
  std::vector<double> v_;
};

struct Capsule {
  double ay, ax, by, bx, r;
};

struct Ring {
  double cy, cx, r_in, r_out;
};

struct Instrument {
  std::vector<Capsule> capsules;
  std::vector<Ring> rings;
};

// Signed position across a capsule: 0 on the axis, ±1 on the rim.
bool capsule_hit(const Capsule& c, double y, double x, double& t) {
  const double dy = c.by - c.ay, dx = c.bx - c.ax;
  const double len2 = dy * dy + dx * dx;
  double u = len2 > 0 ? ((y - c.ay) * dy + (x - c.ax) * dx) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  const double py = c.ay + u * dy, px = c.ax + u * dx;
  const double dist = std::hypot(y - py, x - px);
  if (dist > c.r) return false;
  // Sign from the side of the axis, so highlights sit off-centre.
  const double side = (x - c.ax) * dy - (y - c.ay) * dx;
  t = (side >= 0 ? 1.0 : -1.0) * dist / c.r;
  return true;
}

bool ring_hit(const Ring& r, double y, double x, double& t) {
  const double dist = std::hypot(y - r.cy, x - r.cx);
  if (dist < r.r_in || dist > r.r_out) return false;
  const double mid = 0.5 * (r.r_in + r.r_out), half = 0.5 * (r.r_out - r.r_in);
  t = (dist - mid) / half;
  return true;
}

Instrument make_instrument(Rng& rng, double size) {
  Instrument ins;
  const double cy = size * rng.uniform(0.4, 0.6), cx = size * rng.uniform(0.4, 0.6);
  const double theta = rng.uniform(0.0, 2.0 * M_PI);
  const double scale = size * rng.uniform(0.75, 1.05);
  auto dir = [](double a) { return std::array<double, 2>{std::sin(a), std::cos(a)}; };
  auto along = [&](double a, double len) {
    const auto d = dir(a);
    return std::array<double, 2>{cy + d[0] * len, cx + d[1] * len};
  };
  const int family = rng.uniform_int(0, 2);
  if (family == 0) {  // scissors: two blades forward, two ring handles back
    const double spread = rng.uniform(0.08, 0.2), blade = scale * rng.uniform(0.38, 0.5);
    const double rb = scale * rng.uniform(0.035, 0.05);
    for (double s : {-1.0, 1.0}) {
      const auto mid = along(theta + s * spread, blade * 0.6);
      const auto tip = along(theta + s * spread, blade);
      ins.capsules.push_back({cy, cx, mid[0], mid[1], rb});
      ins.capsules.push_back({mid[0], mid[1], tip[0], tip[1], rb * 0.6});
      const double back = theta + M_PI - s * rng.uniform(0.25, 0.4);
      const double shank = scale * rng.uniform(0.2, 0.28);
      const auto end = along(back, shank);
      ins.capsules.push_back({cy, cx, end[0], end[1], rb * 0.8});
      const double ro = scale * rng.uniform(0.08, 0.11);
      const auto rc = along(back, shank + ro * 0.8);
      ins.rings.push_back({rc[0], rc[1], ro * rng.uniform(0.5, 0.6), ro});
    }
  } else if (family == 1) {  // forceps: two arms joined at the back
    const double len = scale * rng.uniform(0.7, 0.9), spread = rng.uniform(0.05, 0.1);
    const double r = scale * rng.uniform(0.03, 0.045);
    const auto back = along(theta + M_PI, len * 0.5);
    for (double s : {-1.0, 1.0}) {
      const auto mid = along(theta + s * spread, len * 0.1);
      const auto tip = along(theta + s * spread * 0.5, len * 0.5);
      ins.capsules.push_back({back[0], back[1], mid[0], mid[1], r});
      ins.capsules.push_back({mid[0], mid[1], tip[0], tip[1], r * 0.6});
    }
    ins.capsules.push_back({back[0], back[1], back[0], back[1], r * 1.6});
  } else {  // scalpel: long handle, wider blade
    const double len = scale * rng.uniform(0.7, 0.95);
    const auto back = along(theta + M_PI, len * 0.55);
    const auto joint = along(theta, len * 0.15);
    const auto tip = along(theta, len * 0.45);
    ins.capsules.push_back({back[0], back[1], joint[0], joint[1], scale * rng.uniform(0.04, 0.055)});
    ins.capsules.push_back({joint[0], joint[1], tip[0], tip[1], scale * rng.uniform(0.055, 0.075)});
  }
  return ins;
}

// Cylindrical falloff plus an off-axis specular band.
double metal_shade(double t, double highlight) {
  const double body = 0.5 + 0.4 * std::sqrt(std::max(0.0, 1.0 - t * t));
  const double spec = 0.35 * std::exp(-std::pow((t - highlight) / 0.18, 2.0));
  return std::min(1.0, body + spec);
}

void render_background(ImageTensor& img, const SceneSpec& spec, Rng& rng) {
  const std::size_t n = img.height();
  if (spec.background == Background::Plain) {
    for (auto& v : img.data()) v = 0.32f;
    return;
  }
  static constexpr std::array<std::array<double, 3>, 3> kTowels{{{0.20, 0.42, 0.48}, {0.22, 0.45, 0.30}, {0.18, 0.30, 0.55}}};
  const auto base = kTowels[static_cast<std::size_t>(rng.uniform_int(0, 2))];
  const double gain = rng.uniform(0.8, 1.1);
  const double ts = spec.texture_scale;
  const auto coarse_cells = static_cast<std::size_t>(std::ceil(6 * ts));
  const auto fine_cells = static_cast<std::size_t>(std::ceil(48 * ts));
  ValueNoise coarse(rng, coarse_cells), fine(rng, fine_cells), folds(rng, 4);
  const double period = rng.uniform(6.0, 10.0) / ts;
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double u = static_cast<double>(y) / static_cast<double>(n), v = static_cast<double>(x) / static_cast<double>(n);
      const double weave = std::sin(2 * M_PI * static_cast<double>(x) / period + phase) *
                           std::sin(2 * M_PI * static_cast<double>(y) / period);
      const double tex = 0.14 * (coarse.at(u * coarse_cells, v * coarse_cells) - 0.5) +
                         0.12 * (fine.at(u * fine_cells, v * fine_cells) - 0.5) + 0.06 * weave;
      const double fold = 1.0 - 0.25 * folds.at(u * 4, v * 4);
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(y, x, c) = static_cast<float>(std::clamp((base[c] * gain + tex) * fold, 0.0, 1.0));
      }
    }
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const std::size_t n = spec.image_size;
  Rng rng(spec.seed, 0x5343454E45);
  Scene scene{ImageTensor(n, n, 3), BinaryMask(n, n), BinaryMask(n, n)};
  render_background(scene.image, spec, rng);

  const double size = static_cast<double>(n);
  std::vector<float> shade(n * n, -1.0f);
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    const Instrument ins = make_instrument(rng, size);
    const double highlight = rng.uniform(-0.5, 0.5);
    std::size_t count = 0;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
        double best = -1.0, t = 0.0;
        for (const auto& c : ins.capsules)
          if (capsule_hit(c, py, px, t)) best = std::max(best, metal_shade(t, highlight));
        for (const auto& r : ins.rings)
          if (ring_hit(r, py, px, t)) best = std::max(best, metal_shade(t, highlight));
        shade[y * n + x] = static_cast<float>(best);
        count += best >= 0.0 ? 1 : 0;
      }
    const double frac = static_cast<double>(count) / static_cast<double>(n * n);
    ok = frac >= spec.min_foreground && frac <= spec.max_foreground;
  }
  if (!ok) throw InvalidConfig("could not place an instrument within the foreground bounds in 100 attempts");

  const std::array<double, 3> tint{rng.uniform(0.78, 0.86), rng.uniform(0.8, 0.88), rng.uniform(0.84, 0.92)};
  const double light_dir = rng.uniform(0.0, 2.0 * M_PI);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const float s = shade[y * n + x];
      if (s < 0.0f) continue;
      scene.foreground.set(y, x, true);
      // Slow illumination gradient along the bench.
      const double g = 1.0 + 0.08 * (std::cos(light_dir) * (static_cast<double>(x) / size - 0.5) +
                                     std::sin(light_dir) * (static_cast<double>(y) / size - 0.5));
      for (std::size_t c = 0; c < 3; ++c) {
        scene.image.at(y, x, c) = static_cast<float>(std::clamp(s * tint[c] * g + (s > 0.95f ? 0.1 : 0.0), 0.0, 1.0));
      }
    }

  if (spec.defect) {
    detectors::SyntheticDefectSpec ds = *spec.defect;
    ds.seed.value = mix_seed(spec.seed.value, 0x53544149);
    auto sample = detectors::inject_defect(scene.image, ds, &scene.foreground);
    scene.image = std::move(sample.image);
    scene.defect = std::move(sample.mask);
  }

  if (spec.sensor_noise > 0.0) {
    for (auto& v : scene.image.data()) {
      v = std::clamp(v + static_cast<float>(rng.normal(0.0, spec.sensor_noise)), 0.0f, 1.0f);
    }
  }
  return scene;
}

std::filesystem::path foreground_mask_path(const DatasetManifest& manifest, const ManifestEntry& entry) {
  const auto stem = std::filesystem::path(entry.image_path).stem().string();
  return manifest.resolve("masks/" + stem + "_fg.png");
}

DatasetManifest generate_corpus(std::size_t n_normal, std::size_t n_defective, const SceneSpec& spec_template,
                                const std::filesystem::path& out_dir, RandomSeed seed) {
  spec_template.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create corpus directory " + out_dir.string() + ": " + ec.message());

  // Split assignment first, from its own stream, so it does not depend on
  // how much randomness rendering consumes.
  Rng split_rng(seed, 0x53504C4954);
  std::vector<std::size_t> order(n_normal);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  const auto n_train = static_cast<std::size_t>(std::lround(0.70 * static_cast<double>(n_normal)));
  const auto n_val = static_cast<std::size_t>(std::lround(0.15 * static_cast<double>(n_normal)));
  std::vector<Split> normal_split(n_normal, Split::Test);
  for (std::size_t i = 0; i < n_normal; ++i) {
    const std::size_t pos = order[i];
    normal_split[pos] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
  }

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  auto emit = [&](const std::string& id, Label label, Split split, bool defective, std::size_t index) {
    SceneSpec spec = spec_template;
    spec.seed.value = mix_seed(seed.value, (defective ? 0x100000 : 0) + index);
    if (defective) {
      if (!spec.defect) spec.defect = small_stains();
    } else {
      spec.defect.reset();
    }
    const Scene scene = generate_scene(spec);
    const std::string image = "images/" + id + ".png";
    save_image(scene.image, out_dir / image);
    save_mask(scene.foreground, out_dir / "masks" / (id + "_fg.png"));
    ManifestEntry e{image, label, split, std::nullopt};
    if (split != Split::Train) {
      e.gt_mask_path = "masks/" + id + "_defect.png";
      save_mask(scene.defect, out_dir / *e.gt_mask_path);
    }
    manifest.entries.push_back(std::move(e));
  };

  char id[32];
  for (std::size_t i = 0; i < n_normal; ++i) {
    std::snprintf(id, sizeof id, "normal_%03zu", i);
    emit(id, Label::Normal, normal_split[i], false, i);
  }
  for (std::size_t i = 0; i < n_defective; ++i) {
    std::snprintf(id, sizeof id, "defect_%03zu", i);
    emit(id, Label::Defective, i < n_defective / 2 ? Split::Val : Split::Test, true, i);
  }
  manifest.validate();
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace patchguard::synthgen
