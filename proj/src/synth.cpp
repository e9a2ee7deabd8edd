#include "tdrd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "tdrd/errors.hpp"
#include "tdrd/rng.hpp"

namespace tdrd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

void check_range(const char* name, const Range& r, double lo, double hi) {
  if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi)
    throw ConfigError(std::string("synth.") + name + " must satisfy " + std::to_string(lo) + " <= lo <= hi <= " +
                      std::to_string(hi));
}

std::string range_text(const Range& r) { return kv::from_double_list({r.lo, r.hi}); }

Range parse_range(const std::string& key, const std::string& value) {
  const auto v = kv::to_double_list(key, value);
  if (v.size() != 2) throw ValidationError(key + " expects 'lo,hi'");
  return Range{v[0], v[1]};
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Painted pixels of one instance, in image coordinates.
struct Stamp {
  std::vector<std::pair<int, int>> pixels;
  std::vector<double> values;
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // half-open extent

  void finish() {
    x1 = y1 = std::numeric_limits<int>::max();
    x2 = y2 = std::numeric_limits<int>::min();
    for (auto [x, y] : pixels) {
      x1 = std::min(x1, x);
      y1 = std::min(y1, y);
      x2 = std::max(x2, x + 1);
      y2 = std::max(y2, y + 1);
    }
  }
};

Stamp render_crack(const SynthConfig& cfg, Rng& rng, double cx, double cy) {
  const double s = cfg.image_size;
  const double length = rng.uniform(cfg.crack_length.lo, cfg.crack_length.hi) * s;
  const double radius = std::max(0.75, 0.5 * rng.uniform(cfg.crack_width.lo, cfg.crack_width.hi) * s);
  const double shade = rng.uniform(cfg.crack_intensity.lo, cfg.crack_intensity.hi);
  const int segments = rng.uniform_int(5, 9);
  double heading = rng.uniform(0.0, 2 * std::numbers::pi);
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (int i = 0; i < segments; ++i) {
    heading += rng.uniform(-0.6, 0.6);
    const double step = length / segments;
    pts.emplace_back(pts.back().first + step * std::cos(heading), pts.back().second + step * std::sin(heading));
  }
  // Center the polyline on (cx, cy).
  double mx = 0, my = 0;
  for (auto [x, y] : pts) mx += x, my += y;
  mx /= pts.size();
  my /= pts.size();
  for (auto& [x, y] : pts) x += cx - mx, y += cy - my;

  double lx = 1e300, ly = 1e300, hx = -1e300, hy = -1e300;
  for (auto [x, y] : pts) lx = std::min(lx, x), ly = std::min(ly, y), hx = std::max(hx, x), hy = std::max(hy, y);
  const int x0 = static_cast<int>(std::floor(lx - radius - 1)), y0 = static_cast<int>(std::floor(ly - radius - 1));
  const int x1 = static_cast<int>(std::ceil(hx + radius + 1)), y1 = static_cast<int>(std::ceil(hy + radius + 1));
  Stamp st;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double best = 1e300;
      for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const auto [ax, ay] = pts[i];
        const auto [bx, by] = pts[i + 1];
        const double dx = bx - ax, dy = by - ay;
        const double t = std::clamp(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
        const double ex = ax + t * dx - px, ey = ay + t * dy - py;
        best = std::min(best, ex * ex + ey * ey);
      }
      if (best <= radius * radius) {
        st.pixels.emplace_back(x, y);
        st.values.push_back(shade + rng.normal(0.0, 6.0));
      }
    }
  }
  return st;
}

Stamp render_pothole(const SynthConfig& cfg, Rng& rng, double cx, double cy) {
  const double s = cfg.image_size;
  const double a = 0.5 * rng.uniform(cfg.pothole_size.lo, cfg.pothole_size.hi) * s;
  const double b = a * rng.uniform(0.6, 1.0);
  const double shade = rng.uniform(cfg.pothole_intensity.lo, cfg.pothole_intensity.hi);
  const double tilt = rng.uniform(0.0, std::numbers::pi);
  std::array<double, 3> amp{}, phase{};
  for (int k = 0; k < 3; ++k) {
    amp[k] = rng.uniform(0.03, 0.09);
    phase[k] = rng.uniform(0.0, 2 * std::numbers::pi);
  }
  const double reach = a * 1.3 + 1;
  Stamp st;
  for (int y = static_cast<int>(std::floor(cy - reach)); y <= static_cast<int>(std::ceil(cy + reach)); ++y) {
    for (int x = static_cast<int>(std::floor(cx - reach)); x <= static_cast<int>(std::ceil(cx + reach)); ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = dx * std::cos(tilt) + dy * std::sin(tilt);
      const double v = -dx * std::sin(tilt) + dy * std::cos(tilt);
      const double theta = std::atan2(v, u);
      double edge = 1.0;
      for (int k = 0; k < 3; ++k) edge += amp[k] * std::sin((k + 3) * theta + phase[k]);
      const double d = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
      if (d <= edge) {
        st.pixels.emplace_back(x, y);
        // Darker toward the middle.
        st.values.push_back(shade + 25.0 * d / edge + rng.normal(0.0, 7.0));
      }
    }
  }
  return st;
}

Stamp render_patch(const SynthConfig& cfg, Rng& rng, double cx, double cy) {
  const double s = cfg.image_size;
  const double w = rng.uniform(cfg.patch_size.lo, cfg.patch_size.hi) * s;
  const double h = w * rng.uniform(0.6, 1.4);
  const double shade = rng.uniform(cfg.patch_intensity.lo, cfg.patch_intensity.hi);
  const int x0 = static_cast<int>(std::lround(cx - 0.5 * w)), x1 = static_cast<int>(std::lround(cx + 0.5 * w));
  const int y0 = static_cast<int>(std::lround(cy - 0.5 * h)), y1 = static_cast<int>(std::lround(cy + 0.5 * h));
  const double stripe = rng.uniform(3.0, 6.0);
  Stamp st;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const bool border = x == x0 || y == y0 || x == x1 - 1 || y == y1 - 1;
      double v = border ? shade - 70.0 : shade + 8.0 * std::sin((x + y) / stripe);
      st.pixels.emplace_back(x, y);
      st.values.push_back(v + rng.normal(0.0, 5.0));
    }
  }
  return st;
}

int sample_class(const SynthConfig& cfg, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last = 0;
  for (int c = 0; c < kNumDamageClasses; ++c) {
    if (cfg.class_mix[c] <= 0) continue;
    last = c;
    acc += cfg.class_mix[c];
    if (u < acc) return c;
  }
  return last;
}

bool overlaps(const Stamp& s, const std::vector<BBox>& placed) {
  constexpr int kGap = 2;
  for (const auto& b : placed) {
    if (s.x1 - kGap < b.x2 && b.x1 < s.x2 + kGap && s.y1 - kGap < b.y2 && b.y1 < s.y2 + kGap) return true;
  }
  return false;
}

struct Rendered {
  Image image;
  std::vector<LabelRecord> labels;
  int skipped = 0;
};

Rendered render_scene(const SynthConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const int size = cfg.image_size;
  Rendered out;
  out.image = Image(size, size);

  // Asphalt: per-image base level, coarse blotches and fine grain.
  const double base = rng.uniform(cfg.background.lo, cfg.background.hi);
  const int cells = 8;
  std::vector<double> coarse((cells + 1) * (cells + 1));
  for (auto& c : coarse) c = rng.normal(0.0, 6.0);
  std::array<double, 3> tint{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
  std::vector<double> gray(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const double gy = static_cast<double>(y) * cells / size;
    const int iy = std::min(static_cast<int>(gy), cells - 1);
    const double fy = gy - iy;
    for (int x = 0; x < size; ++x) {
      const double gx = static_cast<double>(x) * cells / size;
      const int ix = std::min(static_cast<int>(gx), cells - 1);
      const double fx = gx - ix;
      const auto c = [&](int a, int b) { return coarse[a * (cells + 1) + b]; };
      const double blotch = (1 - fy) * ((1 - fx) * c(iy, ix) + fx * c(iy, ix + 1)) +
                            fy * ((1 - fx) * c(iy + 1, ix) + fx * c(iy + 1, ix + 1));
      gray[static_cast<std::size_t>(y) * size + x] = base + blotch + rng.normal(0.0, cfg.background_noise);
    }
  }

  const int count = rng.uniform_int(cfg.min_instances, cfg.max_instances);
  std::vector<BBox> placed;
  for (int i = 0; i < count; ++i) {
    const int cls = sample_class(cfg, rng);
    bool done = false;
    for (int attempt = 0; attempt < 100 && !done; ++attempt) {
      const double cx = rng.uniform(0.0, size), cy = rng.uniform(0.0, size);
      Stamp st = cls == 0 ? render_crack(cfg, rng, cx, cy)
                 : cls == 1 ? render_pothole(cfg, rng, cx, cy)
                            : render_patch(cfg, rng, cx, cy);
      if (st.pixels.empty()) continue;
      st.finish();
      if (st.x1 < 1 || st.y1 < 1 || st.x2 > size - 1 || st.y2 > size - 1) continue;
      if (overlaps(st, placed)) continue;
      for (std::size_t p = 0; p < st.pixels.size(); ++p) {
        const auto [x, y] = st.pixels[p];
        gray[static_cast<std::size_t>(y) * size + x] = st.values[p];
      }
      const BBox box{static_cast<double>(st.x1), static_cast<double>(st.y1), static_cast<double>(st.x2),
                     static_cast<double>(st.y2)};
      placed.push_back(box);
      out.labels.push_back(LabelRecord::from_box(box, cls, size, size));
      done = true;
    }
    if (!done) ++out.skipped;
  }

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.image.at(x, y, ch) = to_byte(gray[static_cast<std::size_t>(y) * size + x] + tint[ch]);
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_images <= 0) throw ConfigError("synth.num_images must be positive");
  if (image_size < 16) throw ConfigError("synth.image_size must be at least 16");
  double sum = 0.0;
  for (double m : class_mix) {
    if (!(m >= 0.0)) throw ConfigError("synth.class_mix entries must be non-negative");
    sum += m;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("synth.class_mix must sum to 1");
  if (!(val_fraction >= 0 && test_fraction >= 0 && val_fraction + test_fraction <= 1))
    throw ConfigError("synth.val_fraction and synth.test_fraction must be non-negative and sum to at most 1");
  if (min_instances < 0 || max_instances < min_instances)
    throw ConfigError("synth.min_instances and synth.max_instances must satisfy 0 <= min <= max");
  check_range("background", background, 0, 255);
  if (background_noise < 0) throw ConfigError("synth.background_noise must be non-negative");
  check_range("crack_length", crack_length, 0, 1);
  check_range("crack_width", crack_width, 0, 1);
  check_range("crack_intensity", crack_intensity, 0, 255);
  check_range("pothole_size", pothole_size, 0, 1);
  check_range("pothole_intensity", pothole_intensity, 0, 255);
  check_range("patch_size", patch_size, 0, 1);
  check_range("patch_intensity", patch_intensity, 0, 255);
}

kv::Entries SynthConfig::to_entries() const {
  kv::Entries e;
  e["synth.num_images"] = std::to_string(num_images);
  e["synth.image_size"] = std::to_string(image_size);
  e["synth.class_mix"] = kv::from_double_list({class_mix.begin(), class_mix.end()});
  e["synth.seed"] = std::to_string(seed);
  e["synth.val_fraction"] = kv::from_double(val_fraction);
  e["synth.test_fraction"] = kv::from_double(test_fraction);
  e["synth.min_instances"] = std::to_string(min_instances);
  e["synth.max_instances"] = std::to_string(max_instances);
  e["synth.background"] = range_text(background);
  e["synth.background_noise"] = kv::from_double(background_noise);
  e["synth.crack_length"] = range_text(crack_length);
  e["synth.crack_width"] = range_text(crack_width);
  e["synth.crack_intensity"] = range_text(crack_intensity);
  e["synth.pothole_size"] = range_text(pothole_size);
  e["synth.pothole_intensity"] = range_text(pothole_intensity);
  e["synth.patch_size"] = range_text(patch_size);
  e["synth.patch_intensity"] = range_text(patch_intensity);
  return e;
}

void SynthConfig::apply(const std::string& key, const std::string& v) {
  if (key == "synth.num_images") num_images = kv::to_int(key, v);
  else if (key == "synth.image_size") image_size = kv::to_int(key, v);
  else if (key == "synth.class_mix") {
    const auto mix = kv::to_double_list(key, v);
    if (mix.size() != kNumDamageClasses) throw ValidationError(key + " expects three comma-separated weights");
    std::copy(mix.begin(), mix.end(), class_mix.begin());
  } else if (key == "synth.seed") seed = kv::to_u64(key, v);
  else if (key == "synth.val_fraction") val_fraction = kv::to_double(key, v);
  else if (key == "synth.test_fraction") test_fraction = kv::to_double(key, v);
  else if (key == "synth.min_instances") min_instances = kv::to_int(key, v);
  else if (key == "synth.max_instances") max_instances = kv::to_int(key, v);
  else if (key == "synth.background") background = parse_range(key, v);
  else if (key == "synth.background_noise") background_noise = kv::to_double(key, v);
  else if (key == "synth.crack_length") crack_length = parse_range(key, v);
  else if (key == "synth.crack_width") crack_width = parse_range(key, v);
  else if (key == "synth.crack_intensity") crack_intensity = parse_range(key, v);
  else if (key == "synth.pothole_size") pothole_size = parse_range(key, v);
  else if (key == "synth.pothole_intensity") pothole_intensity = parse_range(key, v);
  else if (key == "synth.patch_size") patch_size = parse_range(key, v);
  else if (key == "synth.patch_intensity") patch_intensity = parse_range(key, v);
  else throw ValidationError("unknown config key '" + key + "'");
}

SynthResult synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const int n = cfg.num_images;
  const int n_val = static_cast<int>(std::lround(n * cfg.val_fraction));
  const int n_test = static_cast<int>(std::lround(n * cfg.test_fraction));
  const int n_train = std::max(0, n - n_val - n_test);

  SynthResult out;
  out.manifest.generator = cfg.to_entries();
  for (int i = 0; i < n; ++i) {
    Rendered r = render_scene(cfg, splitmix64(cfg.seed * 0x100000001b3ull + static_cast<std::uint64_t>(i)));
    ImageEntry e;
    e.split = i < n_train ? Split::Train : i < n_train + n_val ? Split::Val : Split::Test;
    char name[32];
    std::snprintf(name, sizeof(name), "%06d", i);
    e.path = "images/" + std::string(split_name(e.split)) + "/" + name + ".png";
    e.width = e.height = cfg.image_size;
    e.labels = std::move(r.labels);
    out.manifest.skipped_instances += r.skipped;
    out.manifest.entries.push_back(std::move(e));
    out.images.push_back(std::move(r.image));
  }
  out.manifest.validate();
  return out;
}

void write_dataset(const std::filesystem::path& root, const SynthResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  for (std::size_t i = 0; i < result.images.size(); ++i) {
    const auto& e = result.manifest.entries[i];
    write_png(root / e.path, result.images[i]);
    const std::filesystem::path image_rel(e.path);
    const auto label_rel = std::filesystem::path("labels") / split_name(e.split) / image_rel.stem();
    write_yolo_labels(root / (label_rel.string() + ".txt"), e.labels);
  }
  write_manifest(root / "manifest.json", result.manifest);
}

}  // namespace tdrd
