#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "getam/attribution.hpp"
#include "getam/label_image.hpp"
#include "getam/rng.hpp"
#include "getam/tensor.hpp"

namespace getam {

// Class k always draws the same geometry: 1 disk, 2 square, 3 triangle.
enum class Geometry { kDisk, kSquare, kTriangle };

struct ShapeInstance {
  int class_id = 1;
  Geometry geometry = Geometry::kDisk;
  std::array<double, 3> color{};
  double cx = 0.0, cy = 0.0, radius = 0.0;
  bool salient = true;
};

struct SceneSpec {
  std::size_t size = 32;
  std::vector<ShapeInstance> shapes;
  std::uint64_t texture_seed = 0;
};

struct Sample {
  std::string id;
  Tensor image;  // [3, H, W], values k/255
  std::vector<int> labels;
  LabelImage gt;
  LabelImage saliency;
};

struct DatasetConfig {
  std::size_t num_images = 200;
  std::size_t num_classes = 3;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
  double nonsalient_fraction = 0.2;
  std::string id_prefix = "img";
  // object radius range as a fraction of the image side
  double min_radius = 0.16;
  double max_radius = 0.26;

  void validate() const;
};

/// Scene for image `index`. The first object's class cycles through 1..C so
/// every class stays frequent; `withhold` adds a second object and marks the
/// last one non-salient.
SceneSpec make_scene(Rng& rng, const DatasetConfig& cfg, std::size_t index, bool withhold);

/// Rasterizes a scene at pixel centres. Later shapes occlude earlier ones;
/// labels are read back from the rendered mask.
Sample render_scene(const SceneSpec& scene, std::string id);

/// Deterministic in cfg. Exactly floor(n * nonsalient_fraction) images,
/// spread evenly, carry a withheld object.
std::vector<Sample> generate_dataset(const DatasetConfig& cfg);

/// Class whose ground-truth pixels are all outside the saliency map, or 0.
int withheld_class(const Sample& s);

/// images/, masks/, saliency/ PNGs plus labels.csv.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::filesystem::path& dir);

/// Accumulates per-class pixel counts over many label maps. Classes are
/// 0..n_classes-1 with 0 background; predictions of 255 are ignored unless
/// `count_unknown_as_error` is set, in which case they count against recall
/// and IoU of the ground-truth class.
class ConfusionCounts {
 public:
  explicit ConfusionCounts(std::size_t n_classes, bool count_unknown_as_error = false);
  void add(const LabelImage& pred, const LabelImage& gt);

  std::size_t num_classes() const { return n_; }
  std::uint64_t intersection(std::size_t k) const { return tp_[k]; }
  std::uint64_t predicted(std::size_t k) const { return pred_[k]; }
  std::uint64_t actual(std::size_t k) const { return gt_[k]; }
  std::uint64_t unknown() const { return unknown_; }
  std::uint64_t pixels() const { return pixels_; }

 private:
  std::size_t n_;
  bool strict_;
  std::vector<std::uint64_t> tp_, pred_, gt_;
  std::uint64_t unknown_ = 0, pixels_ = 0;
};

struct IoUReport {
  std::vector<double> iou;     // NaN for excluded classes
  std::vector<bool> included;  // class has a non-empty union
  double mean = 0.0;
  bool undefined = false;      // every class excluded; mean reported as 0
};

IoUReport iou_report(const ConfusionCounts& counts);
IoUReport miou(const LabelImage& pred, const LabelImage& gt, std::size_t n_classes,
               bool count_unknown_as_error = false);

struct QualityReport {
  IoUReport iou;
  std::vector<double> precision;  // NaN when nothing predicted
  std::vector<double> recall;     // NaN when the class is absent
  double unknown_fraction = 0.0;
};

QualityReport quality_report(const ConfusionCounts& counts);
QualityReport pseudo_quality_report(const LabelImage& pseudo, const LabelImage& gt,
                                    std::size_t n_classes, bool count_unknown_as_error = false);

/// Synthetic per-image block maps for the fusion analysis on a side x side
/// grid: sparse, heavy-tailed maps peaking on shifted parts of one object.
std::vector<std::vector<ClassAttentionMap>> synthetic_block_ensemble(Rng& rng, std::size_t images,
                                                                     std::size_t blocks,
                                                                     std::size_t side);

}  // namespace getam
