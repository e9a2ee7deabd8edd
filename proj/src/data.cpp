#include "tdrd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tdrd/errors.hpp"

namespace tdrd {

namespace {

constexpr double kCoordSlack = 1e-9;

bool unit(double v) { return v >= -kCoordSlack && v <= 1.0 + kCoordSlack; }

}  // namespace

void LabelRecord::validate() const {
  if (class_id < 0 || class_id >= kNumDamageClasses)
    throw ValidationError("class id " + std::to_string(class_id) + " is not one of 0 (crack), 1 (pothole), 2 (patch)");
  if (!unit(cx) || !unit(cy) || !unit(w) || !unit(h)) throw ValidationError("label coordinates must lie in [0, 1]");
  if (w <= 0 || h <= 0) throw ValidationError("label width and height must be positive");
  if (!unit(cx - w / 2) || !unit(cx + w / 2) || !unit(cy - h / 2) || !unit(cy + h / 2))
    throw ValidationError("label box extends outside the image");
}

BBox LabelRecord::to_box(double width, double height) const {
  return BBox::from_center(cx * width, cy * height, w * width, h * height);
}

LabelRecord LabelRecord::from_box(const BBox& box, int class_id, double width, double height) {
  return LabelRecord{class_id, box.cx() / width, box.cy() / height, box.width() / width, box.height() / height};
}

std::vector<LabelRecord> parse_yolo_labels(const std::string& text) {
  std::vector<LabelRecord> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    double cls = 0;
    LabelRecord r;
    std::string extra;
    if (!(fields >> cls >> r.cx >> r.cy >> r.w >> r.h) || (fields >> extra))
      throw ParseError("expected 'class cx cy w h', got '" + line + "'", number);
    if (cls != std::floor(cls)) throw ParseError("class id must be an integer", number);
    r.class_id = static_cast<int>(cls);
    try {
      r.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(number) + ": " + e.what());
    }
    out.push_back(r);
  }
  return out;
}

std::vector<LabelRecord> load_yolo_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_yolo_labels(ss.str());
}

std::string format_yolo_labels(const std::vector<LabelRecord>& labels) {
  std::string out;
  char buf[160];
  for (const auto& r : labels) {
    std::snprintf(buf, sizeof(buf), "%d %.12f %.12f %.12f %.12f\n", r.class_id, r.cx, r.cy, r.w, r.h);
    out += buf;
  }
  return out;
}

void write_yolo_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& labels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write label file " + path.string());
  out << format_yolo_labels(labels);
}

ResizeResult resize_to_input(const Image& image, int size, ResizeMode mode) {
  if (size <= 0) throw ValidationError("resize target must be positive");
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw ValidationError("cannot resize a degenerate image");
  ResizeResult r;
  int out_w = size, out_h = size;
  if (mode == ResizeMode::Letterbox) {
    const double s = static_cast<double>(size) / std::max(image.width, image.height);
    out_w = std::max(1, static_cast<int>(std::lround(image.width * s)));
    out_h = std::max(1, static_cast<int>(std::lround(image.height * s)));
    r.pad_x = (size - out_w) / 2;
    r.pad_y = (size - out_h) / 2;
  }
  r.sx = static_cast<double>(out_w) / image.width;
  r.sy = static_cast<double>(out_h) / image.height;
  r.image = Image(size, size, 114);
  if (out_w == image.width && out_h == image.height) {
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        for (int c = 0; c < 3; ++c) r.image.at(x + r.pad_x, y + r.pad_y, c) = image.at(x, y, c);
    return r;
  }
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) / r.sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ly = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) / r.sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double lx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) * (1 - lx) + image.at(x1, y0, c) * lx;
        const double bot = image.at(x0, y1, c) * (1 - lx) + image.at(x1, y1, c) * lx;
        r.image.at(x + r.pad_x, y + r.pad_y, c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(top * (1 - ly) + bot * ly), 0L, 255L));
      }
    }
  }
  return r;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
}

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.path).second) throw ValidationError("duplicate image path " + e.path);
    if (e.width <= 0 || e.height <= 0) throw ValidationError("image " + e.path + " has no extent");
    for (const auto& l : e.labels) {
      try {
        l.validate();
      } catch (const ValidationError& err) {
        throw ValidationError(e.path + ": " + err.what());
      }
    }
  }
}

std::vector<const ImageEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ImageEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

std::string ManifestStats::report() const {
  char buf[128];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-10s %10s\n", "category", "instances");
  out += buf;
  for (int c = 0; c < kNumDamageClasses; ++c) {
    std::snprintf(buf, sizeof(buf), "%-10s %10lld\n", std::string(kClassNames[c]).c_str(),
                  static_cast<long long>(per_class[c]));
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-10s %10lld\n%-10s %10lld\n", "total", static_cast<long long>(instances), "images",
                static_cast<long long>(images));
  out += buf;
  return out;
}

ManifestStats manifest_stats(const DatasetManifest& manifest) {
  ManifestStats s;
  for (const auto& e : manifest.entries) {
    ++s.images;
    for (const auto& l : e.labels) {
      ++s.per_class.at(l.class_id);
      ++s.instances;
    }
  }
  return s;
}

ManifestStats published_benchmark_stats() {
  ManifestStats s;
  s.per_class = {10342, 8763, 10457};
  s.instances = 10342 + 8763 + 10457;
  s.images = 7088;
  return s;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  using nlohmann::ordered_json;
  ordered_json root;
  root["version"] = 1;
  ordered_json gen = ordered_json::object();
  for (const auto& [k, v] : manifest.generator) gen[k] = v;
  root["generator"] = gen;
  root["skipped_instances"] = manifest.skipped_instances;
  ordered_json splits = ordered_json::object();
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    ordered_json list = ordered_json::array();
    for (const auto* e : manifest.split(s)) {
      ordered_json labels = ordered_json::array();
      for (const auto& l : e->labels)
        labels.push_back({{"class_id", l.class_id}, {"cx", l.cx}, {"cy", l.cy}, {"w", l.w}, {"h", l.h}});
      list.push_back({{"path", e->path}, {"width", e->width}, {"height", e->height}, {"labels", labels}});
    }
    splits[std::string(split_name(s))] = list;
  }
  root["splits"] = splits;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << root.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const auto root = nlohmann::json::parse(in);
    if (root.at("version").get<int>() != 1) throw SchemaError("unsupported manifest version");
    for (const auto& [k, v] : root.at("generator").items()) m.generator[k] = v.get<std::string>();
    m.skipped_instances = root.value("skipped_instances", 0);
    for (const auto& [name, list] : root.at("splits").items()) {
      const Split s = parse_split(name);
      for (const auto& item : list) {
        ImageEntry e;
        e.path = item.at("path").get<std::string>();
        e.width = item.at("width").get<int>();
        e.height = item.at("height").get<int>();
        e.split = s;
        for (const auto& l : item.at("labels"))
          e.labels.push_back(LabelRecord{l.at("class_id").get<int>(), l.at("cx").get<double>(),
                                         l.at("cy").get<double>(), l.at("w").get<double>(), l.at("h").get<double>()});
        m.entries.push_back(std::move(e));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("manifest " + path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

Tensor image_to_tensor(const Image& image) {
  Tensor t(Shape{1, 3, image.height, image.width});
  auto v = t.mutable_values();
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) v[c * plane + p] = image.rgb[p * 3 + c] / 255.0;
  return t;
}

namespace {

Sample make_sample(const Image& image, const std::vector<LabelRecord>& labels, int input_size, ResizeMode mode) {
  const ResizeResult r = resize_to_input(image, input_size, mode);
  Sample s;
  s.image = image_to_tensor(r.image);
  for (const auto& l : labels) {
    BBox b = l.to_box(image.width, image.height);
    b = BBox{b.x1 * r.sx + r.pad_x, b.y1 * r.sy + r.pad_y, b.x2 * r.sx + r.pad_x, b.y2 * r.sy + r.pad_y};
    s.boxes.push_back(GroundTruth{b, l.class_id});
  }
  return s;
}

}  // namespace

std::uint64_t dataset_hash(const Dataset& dataset) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& s : dataset.samples) {
    auto v = s.image.values();
    mix(v.data(), v.size() * sizeof(double));
    for (const auto& b : s.boxes) {
      mix(&b.class_id, sizeof(b.class_id));
      const double coords[4] = {b.box.x1, b.box.y1, b.box.x2, b.box.y2};
      mix(coords, sizeof(coords));
    }
  }
  return h;
}

Dataset build_dataset(const DatasetManifest& manifest, const std::vector<Image>& images, Split split,
                      int input_size, ResizeMode mode) {
  if (images.size() != manifest.entries.size())
    throw ValidationError("image count does not match manifest entries");
  Dataset d;
  d.input_size = input_size;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (manifest.entries[i].split != split) continue;
    d.samples.push_back(make_sample(images[i], manifest.entries[i].labels, input_size, mode));
  }
  d.hash = dataset_hash(d);
  return d;
}

Dataset load_dataset(const std::filesystem::path& root, Split split, int input_size, ResizeMode mode) {
  const auto manifest_path = root / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw IoError("no dataset at " + root.string() +
                  ": expected manifest.json, images/{train,val,test}/*.png and labels/{train,val,test}/*.txt");
  const DatasetManifest m = read_manifest(manifest_path);
  Dataset d;
  d.input_size = input_size;
  for (const auto* e : m.split(split)) {
    const Image img = read_png(root / e->path);
    if (img.width != e->width || img.height != e->height)
      throw SchemaError(e->path + ": size differs from manifest entry");
    d.samples.push_back(make_sample(img, e->labels, input_size, mode));
  }
  d.hash = dataset_hash(d);
  return d;
}

}  // namespace tdrd
