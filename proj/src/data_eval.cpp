#include "getam/data_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "getam/fileio.hpp"
#include "getam/image_io.hpp"

namespace getam {

void DatasetConfig::validate() const {
  if (num_images < 1) throw ValidationError("dataset needs at least one image");
  if (num_classes < 1 || num_classes > 3) {
    throw ValidationError("synthetic shapes support 1..3 classes, got " +
                          std::to_string(num_classes));
  }
  if (image_size < 16) throw ValidationError("image size must be >= 16");
  if (!(nonsalient_fraction >= 0.0 && nonsalient_fraction <= 1.0)) {
    throw ValidationError("nonsalient_fraction must lie in [0, 1]");
  }
}

namespace {

constexpr std::array<std::array<double, 3>, 3> kBaseColor{{
    {0.85, 0.20, 0.20},
    {0.20, 0.80, 0.25},
    {0.20, 0.30, 0.85},
}};

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

bool inside(const ShapeInstance& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy, r = s.radius;
  switch (s.geometry) {
    case Geometry::kDisk: return dx * dx + dy * dy <= r * r;
    case Geometry::kSquare: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case Geometry::kTriangle: {
      // apex up, base on the bounding square's lower edge
      if (dy > r || dy < -r) return false;
      return std::abs(dx) <= 0.5 * (dy + r);
    }
  }
  return false;
}

std::string image_id(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return prefix + buf;
}

bool withholds(std::size_t i, double f) {
  return std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f);
}

}  // namespace

SceneSpec make_scene(Rng& rng, const DatasetConfig& cfg, std::size_t index, bool withhold) {
  SceneSpec scene;
  scene.size = cfg.image_size;
  scene.texture_seed = rng.next_u64();
  const std::size_t c = cfg.num_classes;
  if (c < 2) withhold = false;

  std::size_t count = 1 + rng.below(std::min<std::size_t>(c, 3));
  if (withhold) count = std::max<std::size_t>(count, 2);

  std::vector<int> classes{static_cast<int>(index % c) + 1};
  while (classes.size() < count) {
    const int k = static_cast<int>(rng.below(c)) + 1;
    if (std::find(classes.begin(), classes.end(), k) == classes.end()) classes.push_back(k);
  }

  const double size = static_cast<double>(cfg.image_size);
  for (std::size_t o = 0; o < classes.size(); ++o) {
    ShapeInstance s;
    s.class_id = classes[o];
    s.geometry = static_cast<Geometry>(s.class_id - 1);
    for (std::size_t ch = 0; ch < 3; ++ch)
      s.color[ch] = std::clamp(kBaseColor[s.class_id - 1][ch] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    double r = rng.uniform(cfg.min_radius, cfg.max_radius) * size;
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      if (attempt > 0 && attempt % 50 == 0) r *= 0.85;
      s.radius = r;
      s.cx = rng.uniform(r, size - r);
      s.cy = rng.uniform(r, size - r);
      placed = std::all_of(scene.shapes.begin(), scene.shapes.end(), [&](const ShapeInstance& o2) {
        return std::hypot(o2.cx - s.cx, o2.cy - s.cy) > o2.radius + s.radius + 1.0;
      });
    }
    if (!placed) break;  // canvas full
    scene.shapes.push_back(s);
  }
  for (auto& sh : scene.shapes) sh.salient = true;
  if (withhold && scene.shapes.size() >= 2) scene.shapes.back().salient = false;
  return scene;
}

Sample render_scene(const SceneSpec& scene, std::string id) {
  const std::size_t n = scene.size, hw = n * n;
  Sample s;
  s.id = std::move(id);
  s.image = Tensor({3, n, n});
  s.gt = LabelImage(n, n, 0);
  s.saliency = LabelImage(n, n, 0);
  Rng tex(scene.texture_seed);
  const double base = tex.uniform(0.35, 0.55);
  std::vector<int> owner(hw, -1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t k = 0; k < scene.shapes.size(); ++k)
        if (inside(scene.shapes[k], x + 0.5, y + 0.5)) owner[y * n + x] = static_cast<int>(k);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double noise = tex.uniform(-0.04, 0.04);
      const double v = owner[i] < 0 ? base : scene.shapes[owner[i]].color[ch];
      s.image[ch * hw + i] = quantize(v + noise);
    }
    if (owner[i] >= 0) {
      const auto& sh = scene.shapes[owner[i]];
      s.gt.data[i] = static_cast<std::uint8_t>(sh.class_id);
      s.saliency.data[i] = sh.salient ? 1 : 0;
    }
  }
  std::set<int> present;
  for (auto v : s.gt.data)
    if (v) present.insert(v);
  s.labels.assign(present.begin(), present.end());
  return s;
}

std::vector<Sample> generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<Sample> out;
  out.reserve(cfg.num_images);
  for (std::size_t i = 0; i < cfg.num_images; ++i) {
    const auto scene = make_scene(rng, cfg, i, withholds(i, cfg.nonsalient_fraction));
    out.push_back(render_scene(scene, image_id(cfg.id_prefix, i)));
  }
  return out;
}

int withheld_class(const Sample& s) {
  for (int label : s.labels) {
    bool any = false, salient = false;
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
      if (s.gt.data[i] != label) continue;
      any = true;
      salient = salient || s.saliency.data[i];
    }
    if (any && !salient) return label;
  }
  return 0;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::ostringstream csv;
  csv << "image_id,labels\n";
  for (const auto& s : samples) {
    write_png_rgb(dir / "images" / (s.id + ".png"), s.image);
    write_png_gray(dir / "masks" / (s.id + ".png"), s.gt);
    write_saliency_png(dir / "saliency" / (s.id + ".png"), s.saliency);
    csv << s.id << ",\"";
    for (std::size_t k = 0; k < s.labels.size(); ++k) csv << (k ? "," : "") << s.labels[k];
    csv << "\"\n";
  }
  write_text_atomic(dir / "labels.csv", csv.str());
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
  const auto csv_path = dir / "labels.csv";
  if (!std::filesystem::exists(csv_path)) {
    throw ValidationError("no labels.csv in dataset directory " + dir.string());
  }
  std::istringstream in(read_text_file(csv_path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("image_id,labels", 0) != 0) {
    throw ValidationError("labels.csv: unexpected header '" + line + "'");
  }
  std::vector<Sample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ValidationError("labels.csv:" + std::to_string(lineno) + ": missing label column");
    }
    Sample s;
    s.id = line.substr(0, comma);
    std::string labels = line.substr(comma + 1);
    labels.erase(std::remove(labels.begin(), labels.end(), '"'), labels.end());
    std::istringstream ls(labels);
    std::string tok;
    while (std::getline(ls, tok, ',')) {
      if (tok.empty()) continue;
      try {
        s.labels.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw ValidationError("labels.csv:" + std::to_string(lineno) + ": bad label '" + tok + "'");
      }
    }
    std::sort(s.labels.begin(), s.labels.end());
    s.image = read_png_rgb(dir / "images" / (s.id + ".png"));
    s.gt = read_png_gray(dir / "masks" / (s.id + ".png"));
    s.saliency = read_saliency_png(dir / "saliency" / (s.id + ".png"));
    if (s.gt.height != s.image.dim(1) || s.gt.width != s.image.dim(2) ||
        s.saliency.height != s.gt.height || s.saliency.width != s.gt.width) {
      throw ValidationError("image, mask and saliency sizes differ for " + s.id);
    }
    out.push_back(std::move(s));
  }
  return out;
}

ConfusionCounts::ConfusionCounts(std::size_t n_classes, bool count_unknown_as_error)
    : n_(n_classes), strict_(count_unknown_as_error), tp_(n_classes), pred_(n_classes),
      gt_(n_classes) {}

void ConfusionCounts::add(const LabelImage& pred, const LabelImage& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("confusion: prediction " + std::to_string(pred.height) + "x" +
                         std::to_string(pred.width) + " vs ground truth " +
                         std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t g = gt.data[i], p = pred.data[i];
    if (g == kIgnoreLabel) continue;
    if (g >= n_) throw ValidationError("ground-truth label " + std::to_string(g) + " out of range");
    ++pixels_;
    if (p == kIgnoreLabel) {
      ++unknown_;
      if (strict_) ++gt_[g];
      continue;
    }
    if (p >= n_) throw ValidationError("predicted label " + std::to_string(p) + " out of range");
    ++pred_[p];
    ++gt_[g];
    if (p == g) ++tp_[g];
  }
}

IoUReport iou_report(const ConfusionCounts& counts) {
  const std::size_t n = counts.num_classes();
  IoUReport r;
  r.iou.assign(n, std::numeric_limits<double>::quiet_NaN());
  r.included.assign(n, false);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto uni = counts.predicted(k) + counts.actual(k) - counts.intersection(k);
    if (uni == 0) continue;
    r.iou[k] = static_cast<double>(counts.intersection(k)) / static_cast<double>(uni);
    r.included[k] = true;
    sum += r.iou[k];
    ++used;
  }
  r.undefined = used == 0;
  r.mean = used ? sum / static_cast<double>(used) : 0.0;
  return r;
}

IoUReport miou(const LabelImage& pred, const LabelImage& gt, std::size_t n_classes,
               bool count_unknown_as_error) {
  ConfusionCounts c(n_classes, count_unknown_as_error);
  c.add(pred, gt);
  return iou_report(c);
}

QualityReport quality_report(const ConfusionCounts& counts) {
  const std::size_t n = counts.num_classes();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  QualityReport q;
  q.iou = iou_report(counts);
  q.precision.assign(n, nan);
  q.recall.assign(n, nan);
  for (std::size_t k = 0; k < n; ++k) {
    const double tp = static_cast<double>(counts.intersection(k));
    if (counts.predicted(k)) q.precision[k] = tp / static_cast<double>(counts.predicted(k));
    if (counts.actual(k)) q.recall[k] = tp / static_cast<double>(counts.actual(k));
  }
  q.unknown_fraction =
      counts.pixels() ? static_cast<double>(counts.unknown()) / static_cast<double>(counts.pixels())
                      : 0.0;
  return q;
}

QualityReport pseudo_quality_report(const LabelImage& pseudo, const LabelImage& gt,
                                    std::size_t n_classes, bool count_unknown_as_error) {
  ConfusionCounts c(n_classes, count_unknown_as_error);
  c.add(pseudo, gt);
  return quality_report(c);
}

std::vector<std::vector<ClassAttentionMap>> synthetic_block_ensemble(Rng& rng, std::size_t images,
                                                                     std::size_t blocks,
                                                                     std::size_t side) {
  // Block maps mimic ReLU(g a) ReLU(g): about half the entries are cut to zero
  // by the gradient sign, the survivors are heavy-tailed (squared gradients)
  // and larger on the object than on clutter. Each block peaks on a different
  // part of the object, offset by up to a fifth of the grid.
  std::vector<std::vector<ClassAttentionMap>> out(images);
  const double s = static_cast<double>(side);
  for (auto& per_image : out) {
    const double oy = rng.uniform(0.2, 0.8) * s, ox = rng.uniform(0.2, 0.8) * s;
    const double spread = rng.uniform(0.12, 0.25) * s;
    for (std::size_t b = 0; b < blocks; ++b) {
      const double jy = oy + rng.uniform(-0.2, 0.2) * s, jx = ox + rng.uniform(-0.2, 0.2) * s;
      const double clutter = rng.uniform(0.1, 0.4);
      Tensor m({side, side});
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double d2 = (y + 0.5 - jy) * (y + 0.5 - jy) + (x + 0.5 - jx) * (x + 0.5 - jx);
          const double level = std::exp(-d2 / (2.0 * spread * spread)) + clutter;
          const double g = rng.normal() + level;
          m.at(y, x) = g > 0.0 ? level * g * g : 0.0;
        }
      per_image.push_back({0, std::move(m), false});
    }
  }
  return out;
}

}  // namespace getam
