#include "getam/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>

#include "getam/config.hpp"
#include "getam/data_eval.hpp"
#include "getam/fileio.hpp"
#include "getam/image_io.hpp"
#include "getam/model_gradcheck.hpp"
#include "getam/resample.hpp"
#include "getam/training.hpp"
#include "getam/viz.hpp"

namespace fs = std::filesystem;

namespace getam {

namespace {

KeyValues defaults() {
  return {
      {"seed", "0"},
      {"out", ""},
      {"dataset", ""},
      {"checkpoint", ""},
      // data
      {"num_images", "200"},
      {"eval_images", "50"},
      {"num_classes", "3"},
      {"image_size", "32"},
      {"nonsalient_fraction", "0.2"},
      {"min_radius", "0.16"},
      {"max_radius", "0.26"},
      // model
      {"patch_size", "8"},
      {"dim", "32"},
      {"depth", "2"},
      {"heads", "2"},
      // training
      {"epochs", "10"},
      {"phase1_epochs", "6"},
      {"batch_size", "8"},
      {"lr", "0.02"},
      {"momentum", "0.9"},
      {"sal_weight", "0.1"},
      {"probe_epochs", "30"},
      {"probe_lr", "0.5"},
      // attribution and completion
      {"method", "getam"},
      {"fusion", "sum"},
      {"alpha", "0.9"},
      {"gamma", "4"},
      {"pamr", "true"},
      {"pamr_iters", "10"},
      {"count_unknown_as_error", "false"},
  };
}

struct Settings {
  KeyValues kv;

  const std::string& str(std::string_view key) const { return kv.find(key)->second; }
  std::uint64_t u64(std::string_view key) const { return parse_u64(key, str(key)); }
  std::size_t size(std::string_view key) const { return static_cast<std::size_t>(u64(key)); }
  double num(std::string_view key) const { return parse_double(key, str(key)); }
  bool flag(std::string_view key) const { return parse_bool(key, str(key)); }
  fs::path path(std::string_view key, std::string_view flag) const {
    const std::string& p = str(key);
    if (p.empty()) throw ValidationError("missing required --" + std::string(flag));
    return p;
  }
};

// Flag values arrive as text; the typed parsers of the settings validate them.
struct FlagValues {
  std::map<std::string, std::string> given;
  std::string config;
  bool no_pamr = false;
  bool count_unknown = false;
};

void add_value_flag(CLI::App* cmd, FlagValues& fv, const std::string& flag, const std::string& key,
                    const std::string& help) {
  cmd->add_option_function<std::string>(
      "--" + flag, [&fv, key](const std::string& v) { fv.given[key] = v; }, help);
}

void add_shared_flags(CLI::App* cmd, FlagValues& fv) {
  cmd->add_option("--config", fv.config, "key = value config file");
  add_value_flag(cmd, fv, "seed", "seed", "random seed");
  add_value_flag(cmd, fv, "out", "out", "output directory");
  add_value_flag(cmd, fv, "dataset", "dataset", "dataset directory");
  add_value_flag(cmd, fv, "checkpoint", "checkpoint", "checkpoint directory");
}

void add_attribution_flags(CLI::App* cmd, FlagValues& fv) {
  add_value_flag(cmd, fv, "method", "method", "getam | gradcam | cam-add | cam-ignore");
  add_value_flag(cmd, fv, "fusion", "fusion", "sum | ewmul | matmul");
}

void add_completion_flags(CLI::App* cmd, FlagValues& fv) {
  add_value_flag(cmd, fv, "alpha", "alpha", "mining quantile level in (0, 1]");
  add_value_flag(cmd, fv, "gamma", "gamma", "background exponent (> 1)");
  add_value_flag(cmd, fv, "pamr-iters", "pamr_iters", "PAMR iterations");
  cmd->add_flag("--no-pamr", fv.no_pamr, "skip PAMR refinement");
}

void add_training_flags(CLI::App* cmd, FlagValues& fv) {
  add_value_flag(cmd, fv, "epochs", "epochs", "total epochs");
  add_value_flag(cmd, fv, "phase1-epochs", "phase1_epochs", "classification-only epochs");
  add_value_flag(cmd, fv, "lr", "lr", "learning rate");
  add_value_flag(cmd, fv, "sal-weight", "sal_weight", "saliency loss weight");
}

Settings resolve(const FlagValues& fv) {
  Settings s{defaults()};
  if (!fv.config.empty()) {
    if (!fs::exists(fv.config)) throw ValidationError("config file not found: " + fv.config);
    for (const auto& [k, v] : read_key_values(fv.config)) {
      if (!s.kv.contains(k)) throw ValidationError("unknown config key '" + k + "' in " + fv.config);
      s.kv[k] = v;
    }
  }
  for (const auto& [k, v] : fv.given) s.kv[k] = v;
  if (fv.no_pamr) s.kv["pamr"] = "false";
  if (fv.count_unknown) s.kv["count_unknown_as_error"] = "true";
  return s;
}

DatasetConfig dataset_config(const Settings& s, bool eval_split) {
  DatasetConfig dc;
  dc.num_images = s.size(eval_split ? "eval_images" : "num_images");
  dc.num_classes = s.size("num_classes");
  dc.image_size = s.size("image_size");
  dc.seed = eval_split ? s.u64("seed") + 1 : s.u64("seed");
  dc.nonsalient_fraction = s.num("nonsalient_fraction");
  dc.min_radius = s.num("min_radius");
  dc.max_radius = s.num("max_radius");
  dc.id_prefix = eval_split ? "eval" : "train";
  dc.validate();
  return dc;
}

MiningConfig mining_config(const Settings& s) {
  MiningConfig m;
  m.alpha = s.num("alpha");
  m.gamma = s.num("gamma");
  m.pamr = s.flag("pamr");
  const double iters = s.num("pamr_iters");
  if (iters != std::floor(iters)) throw ValidationError("pamr_iters must be an integer");
  m.pamr_iterations = static_cast<int>(iters);
  m.validate();
  return m;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig t;
  t.total_epochs = s.size("epochs");
  t.phase1_epochs = s.size("phase1_epochs");
  t.batch_size = s.size("batch_size");
  t.lr = s.num("lr");
  t.momentum = s.num("momentum");
  t.sal_weight = s.num("sal_weight");
  t.seed = s.u64("seed");
  t.probe_epochs = s.size("probe_epochs");
  t.probe_lr = s.num("probe_lr");
  t.mining = mining_config(s);
  t.validate();
  return t;
}

// A dataset root holds train/ and eval/; a split directory holds labels.csv.
std::vector<Sample> load_split(const fs::path& dir, const char* split) {
  if (!fs::exists(dir)) throw ValidationError("dataset directory not found: " + dir.string());
  if (fs::exists(dir / "labels.csv")) return read_dataset(dir);
  return read_dataset(dir / split);
}

VisionTransformer load_model(const fs::path& dir) {
  if (!fs::exists(dir)) throw ValidationError("checkpoint directory not found: " + dir.string());
  return VisionTransformer::load(fs::exists(dir / "checkpoint") ? dir / "checkpoint" : dir);
}

void check_compatible(const VisionTransformer& m, const std::vector<Sample>& data) {
  const auto& cfg = m.config();
  for (const auto& s : data) {
    if (s.image.dim(1) != cfg.image_size || s.image.dim(2) != cfg.image_size) {
      throw ValidationError(s.id + ": image is " + std::to_string(s.image.dim(1)) + "x" +
                            std::to_string(s.image.dim(2)) + " but the model expects " +
                            std::to_string(cfg.image_size));
    }
    for (int l : s.labels)
      if (l < 1 || static_cast<std::size_t>(l) > cfg.num_classes)
        throw ValidationError(s.id + ": label " + std::to_string(l) + " outside the model's classes");
  }
}

std::vector<std::size_t> model_classes(const Sample& s) {
  std::vector<std::size_t> c;
  for (int l : s.labels) c.push_back(static_cast<std::size_t>(l - 1));
  return c;
}

LabelImage to_gray(const Tensor& map2d) {
  LabelImage g(map2d.dim(0), map2d.dim(1));
  for (std::size_t i = 0; i < map2d.size(); ++i)
    g.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map2d[i], 0.0, 1.0) * 255.0));
  return g;
}

Tensor resize_map(const Tensor& map2d, std::size_t h, std::size_t w) {
  return bilinear_resize(map2d.reshaped({1, map2d.dim(0), map2d.dim(1)}), h, w).reshaped({h, w});
}

// Outputs are built in `<out>.partial` and moved into place on success; a
// failed run leaves no partial files behind.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path final_dir) : final_(std::move(final_dir)) {
    tmp_ = final_;
    tmp_ += ".partial";
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;
  ~StagedOutput() {
    if (committed_) return;
    std::error_code ec;
    fs::remove_all(tmp_, ec);
  }

  const fs::path& dir() const { return tmp_; }

  void commit() {
    if (!fs::exists(final_)) {
      if (final_.has_parent_path()) fs::create_directories(final_.parent_path());
      fs::rename(tmp_, final_);
    } else {
      for (const auto& e : fs::directory_iterator(tmp_)) {
        const fs::path dst = final_ / e.path().filename();
        fs::remove_all(dst);
        fs::rename(e.path(), dst);
      }
      fs::remove_all(tmp_);
    }
    committed_ = true;
  }

 private:
  fs::path final_, tmp_;
  bool committed_ = false;
};

void print_config(std::ostream& out, const std::string& command, const Settings& s) {
  out << "# getam " << command << " resolved config\n" << format_key_values(s.kv) << std::flush;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Settings& s, std::ostream& out) {
  StagedOutput staged(s.path("out", "out"));
  for (bool eval_split : {false, true}) {
    const DatasetConfig dc = dataset_config(s, eval_split);
    const auto samples = generate_dataset(dc);
    write_dataset(staged.dir() / dc.id_prefix, samples);
    const auto withheld = std::count_if(samples.begin(), samples.end(),
                                        [](const Sample& x) { return withheld_class(x) != 0; });
    out << dc.id_prefix << ": " << samples.size() << " images, " << withheld
        << " with a non-salient object\n";
  }
  staged.commit();
  return kExitOk;
}

int cmd_train(const Settings& s, std::ostream& out) {
  const auto data = load_split(s.path("dataset", "dataset"), "train");
  if (data.empty()) throw ValidationError("training split is empty");
  ModelConfig mc;
  mc.image_size = data.front().image.dim(1);
  mc.patch_size = s.size("patch_size");
  mc.dim = s.size("dim");
  mc.depth = s.size("depth");
  mc.heads = s.size("heads");
  mc.num_classes = s.size("num_classes");
  mc.seed = s.u64("seed");
  const TrainConfig tc = train_config(s);
  VisionTransformer model(mc);
  check_compatible(model, data);

  StagedOutput staged(s.path("out", "out"));
  write_text_atomic(staged.dir() / "config.txt", format_key_values(s.kv));
  run_training(model, data, tc, staged.dir(), [&](std::size_t epoch, const TrainResult& r) {
    out << "epoch " << epoch << (epoch <= tc.phase1_epochs ? " [cls]" : " [cls+seg]")
        << " mean l_cls " << std::setprecision(6) << r.epoch_mean_l_cls.back() << '\n'
        << std::flush;
  });
  const auto acc = classification_accuracy(model, data);
  out << "train label accuracy " << acc.label_accuracy << ", exact match " << acc.exact_match
      << '\n';
  staged.commit();
  return kExitOk;
}

int cmd_attribute(const Settings& s, std::ostream& out, bool png, bool blocks) {
  const VisionTransformer model = load_model(s.path("checkpoint", "checkpoint"));
  const auto data = load_split(s.path("dataset", "dataset"), "eval");
  check_compatible(model, data);
  const AttributionMethod method = parse_method(s.str("method"));
  const Fusion fusion = parse_fusion(s.str("fusion"));
  if (blocks && method != AttributionMethod::kGetam)
    throw ValidationError("--blocks needs --method getam");

  StagedOutput staged(s.path("out", "out"));
  std::size_t written = 0;
  double peak = 0.0;
  for (const auto& smp : data) {
    const auto classes = model_classes(smp);
    if (classes.empty()) continue;
    const auto maps = attribute(model, smp.image, classes, method, fusion);
    for (const auto& m : maps) {
      const std::string stem =
          smp.id + "_" + std::to_string(m.class_id + 1) + "_" + std::string(method_name(method));
      write_gtt(staged.dir() / (stem + ".gtt"), m.map);
      if (png)
        write_png_gray(staged.dir() / (stem + ".png"),
                       to_gray(resize_map(m.map, smp.image.dim(1), smp.image.dim(2))));
      for (double v : m.map.data()) peak = std::max(peak, std::abs(v));
      ++written;
    }
    if (blocks) {
      Tape tape;
      ForwardPass pass = model.forward_with_taps(tape, smp.image);
      for (std::size_t c : classes) {
        backprop_class_score(tape, pass, c);
        const auto per_block = getam_block_maps(pass.taps, c);
        const std::size_t g = per_block.front().map.dim(0);
        Tensor stacked({per_block.size(), g, g});
        for (std::size_t b = 0; b < per_block.size(); ++b)
          std::copy(per_block[b].map.data().begin(), per_block[b].map.data().end(),
                    stacked.data().begin() + b * g * g);
        write_gtt(staged.dir() / (smp.id + "_" + std::to_string(c + 1) + "_getam_blocks.gtt"),
                  stacked);
      }
    }
  }
  out << written << " maps written, largest |value| " << peak << '\n';
  staged.commit();
  return kExitOk;
}

int cmd_pseudo_label(const Settings& s, std::ostream& out, bool dump_stages) {
  const VisionTransformer model = load_model(s.path("checkpoint", "checkpoint"));
  const auto data = load_split(s.path("dataset", "dataset"), "eval");
  check_compatible(model, data);
  const AttributionMethod method = parse_method(s.str("method"));
  const Fusion fusion = parse_fusion(s.str("fusion"));
  const MiningConfig mining = mining_config(s);
  const std::size_t c = model.config().num_classes, g = model.config().grid();

  StagedOutput staged(s.path("out", "out"));
  ConfusionCounts counts(c + 1, s.flag("count_unknown_as_error"));
  std::size_t mined = 0;
  for (const auto& smp : data) {
    const auto classes = model_classes(smp);
    Tensor stacked({c, g, g});
    if (!classes.empty()) {
      const auto maps = attribute(model, smp.image, classes, method, fusion);
      stacked = stack_class_maps(maps, c);
    }
    const auto st = complete_labels_staged(stacked, smp.labels, smp.saliency, smp.image, mining);
    write_png_gray(staged.dir() / (smp.id + ".png"), st.completed);
    if (dump_stages) {
      write_png_gray(staged.dir() / "pre_mining" / (smp.id + ".png"), st.masked);
      write_png_gray(staged.dir() / "post_mining" / (smp.id + ".png"), st.completed);
    }
    for (std::size_t i = 0; i < st.completed.size(); ++i)
      if (!smp.saliency.data[i] && st.completed.data[i] != 0 && st.completed.data[i] != kIgnoreLabel)
        ++mined;
    counts.add(st.completed, smp.gt);
  }
  const auto q = quality_report(counts);
  out << data.size() << " pseudo labels written; mined non-salient foreground pixels " << mined
      << "; mIoU vs ground truth " << std::setprecision(6) << q.iou.mean << '\n';
  staged.commit();
  return kExitOk;
}

std::string format_report_csv(const QualityReport& q) {
  std::ostringstream os;
  os << std::setprecision(17) << "class,iou,precision,recall\n";
  auto cell = [&](double v) {
    if (std::isfinite(v)) os << v;
  };
  for (std::size_t k = 0; k < q.iou.iou.size(); ++k) {
    os << k << ',';
    cell(q.iou.iou[k]);
    os << ',';
    cell(q.precision[k]);
    os << ',';
    cell(q.recall[k]);
    os << '\n';
  }
  os << "mean," << q.iou.mean << ",,\n";
  return os.str();
}

int cmd_eval(const Settings& s, std::ostream& out, const std::string& pred_dir) {
  const auto data = load_split(s.path("dataset", "dataset"), "eval");
  const bool strict = s.flag("count_unknown_as_error");
  std::optional<VisionTransformer> model;
  std::size_t classes = s.size("num_classes");
  if (pred_dir.empty()) {
    model.emplace(load_model(s.path("checkpoint", "checkpoint or --pred")));
    check_compatible(*model, data);
    classes = model->config().num_classes;
  } else if (!fs::exists(pred_dir)) {
    throw ValidationError("prediction directory not found: " + pred_dir);
  }
  ConfusionCounts counts(classes + 1, strict);
  for (const auto& smp : data) {
    LabelImage pred;
    if (model) {
      pred = predict_segmentation(*model, smp.image);
    } else {
      const fs::path p = fs::path(pred_dir) / (smp.id + ".png");
      if (!fs::exists(p)) throw ValidationError("missing prediction " + p.string());
      pred = read_png_gray(p);
    }
    for (auto v : pred.data)
      if (v > classes && v != kIgnoreLabel)
        throw ValidationError(smp.id + ": predicted label " + std::to_string(v) + " out of range");
    counts.add(pred, smp.gt);
  }
  const auto q = quality_report(counts);
  StagedOutput staged(s.path("out", "out"));
  write_text_atomic(staged.dir() / "report.csv", format_report_csv(q));
  out << (model ? "segmentation" : "predictions") << " mIoU " << std::setprecision(6) << q.iou.mean
      << (q.iou.undefined ? " (undefined: no class present)" : "") << ", unknown fraction "
      << q.unknown_fraction << '\n';
  if (model) {
    const auto acc = classification_accuracy(*model, data);
    out << "label accuracy " << acc.label_accuracy << ", exact match " << acc.exact_match << '\n';
  }
  staged.commit();
  return kExitOk;
}

struct MapFile {
  std::string image_id;
  std::string stem;
  bool blocks = false;
};

// "{image_id}_{class_id}_{method}.gtt" or "..._getam_blocks.gtt"; ids may
// themselves contain underscores.
std::optional<MapFile> parse_map_name(const fs::path& p) {
  if (p.extension() != ".gtt") return std::nullopt;
  std::string stem = p.stem().string();
  MapFile mf{"", stem, false};
  std::string core = stem;
  if (core.size() > 7 && core.ends_with("_blocks")) {
    mf.blocks = true;
    core.resize(core.size() - 7);
  }
  const auto m = core.rfind('_');
  if (m == std::string::npos || m == 0) return std::nullopt;
  const auto c = core.rfind('_', m - 1);
  if (c == std::string::npos || c == 0) return std::nullopt;
  mf.image_id = core.substr(0, c);
  return mf;
}

int cmd_viz(const Settings& s, std::ostream& out, const std::string& maps_dir, bool synthetic) {
  StagedOutput staged(s.path("out", "out"));
  std::vector<std::vector<ClassAttentionMap>> ensemble;
  std::size_t overlays = 0;
  if (!maps_dir.empty()) {
    if (!fs::exists(maps_dir)) throw ValidationError("maps directory not found: " + maps_dir);
    const auto data = load_split(s.path("dataset", "dataset"), "eval");
    std::map<std::string, const Sample*> by_id;
    for (const auto& smp : data) by_id[smp.id] = &smp;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(maps_dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto mf = parse_map_name(f);
      if (!mf) continue;
      const Tensor t = read_gtt(f);
      if (mf->blocks) {
        if (t.rank() != 3) throw DimensionError(f.string() + ": block maps must be [L, h, w]");
        std::vector<ClassAttentionMap> bl;
        const std::size_t hw = t.dim(1) * t.dim(2);
        for (std::size_t b = 0; b < t.dim(0); ++b) {
          Tensor m({t.dim(1), t.dim(2)});
          std::copy(t.data().begin() + b * hw, t.data().begin() + (b + 1) * hw, m.data().begin());
          bl.push_back({0, std::move(m), false});
        }
        ensemble.push_back(std::move(bl));
        continue;
      }
      if (t.rank() != 2) throw DimensionError(f.string() + ": map must be [h, w]");
      const auto it = by_id.find(mf->image_id);
      if (it == by_id.end())
        throw ValidationError(f.string() + ": image '" + mf->image_id + "' not in the dataset");
      const Tensor& img = it->second->image;
      write_png_rgb(staged.dir() / (mf->stem + "_heat.png"),
                    heatmap(resize_map(t, img.dim(1), img.dim(2))));
      write_png_rgb(staged.dir() / (mf->stem + "_overlay.png"), overlay(img, t));
      ++overlays;
    }
  }
  if (synthetic) {
    Rng rng(s.u64("seed"));
    for (auto& maps : synthetic_block_ensemble(rng, 20, 12, 14)) ensemble.push_back(std::move(maps));
  }
  out << overlays << " overlays written\n";
  if (!ensemble.empty()) {
    std::vector<FusionHistogram> panels;
    for (Fusion f : {Fusion::kSum, Fusion::kEwMul, Fusion::kMatMul})
      panels.push_back({f, fusion_distribution_stats(ensemble, f)});
    write_png_rgb(staged.dir() / "fusion_histogram.png", histogram_image(panels));
    write_text_atomic(staged.dir() / "fusion_histogram.csv", format_histogram_csv(panels));
    for (const auto& p : panels)
      out << "fusion " << fusion_name(p.fusion) << ": suppressed mass " << std::setprecision(4)
          << p.stats.suppressed_mass << ", std " << p.stats.stddev << '\n';
  }
  staged.commit();
  return kExitOk;
}

int cmd_gradcheck(const Settings& s, std::ostream& out) {
  const std::uint64_t seed = s.u64("seed");
  const auto rows = run_model_gradcheck(seed, gradcheck_toy_config(seed));
  const std::string table = format_gradcheck_table(rows);
  out << table;
  if (!s.str("out").empty()) {
    StagedOutput staged(s.str("out"));
    write_text_atomic(staged.dir() / "gradcheck.txt", table);
    staged.commit();
  }
  const bool ok = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.passed(); });
  out << (ok ? "all checks passed\n" : "gradient check FAILED\n");
  return ok ? kExitOk : kExitInvalid;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"getam: gradient-weighted attention maps for weakly supervised segmentation"};
  app.name("getam");
  app.require_subcommand(1);

  FlagValues fv;
  bool png = false, blocks = false, dump_stages = false, synthetic = false;
  std::string pred_dir, maps_dir;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/eval dataset");
  add_shared_flags(gen, fv);

  auto* train = app.add_subcommand("train", "two-phase training; writes checkpoint and metrics.csv");
  add_shared_flags(train, fv);
  add_training_flags(train, fv);
  add_completion_flags(train, fv);

  auto* attr = app.add_subcommand("attribute", "per-class attribution maps as GTT1 files");
  add_shared_flags(attr, fv);
  add_attribution_flags(attr, fv);
  attr->add_flag("--png", png, "also write 8-bit grayscale PNGs");
  attr->add_flag("--blocks", blocks, "also write per-block GETAM maps");

  auto* pseudo = app.add_subcommand("pseudo-label", "pseudo labels from attribution and completion");
  add_shared_flags(pseudo, fv);
  add_attribution_flags(pseudo, fv);
  add_completion_flags(pseudo, fv);
  pseudo->add_flag("--dump-stages", dump_stages, "write pre- and post-mining labels");
  pseudo->add_flag("--count-unknown-as-error", fv.count_unknown, "score 255 pixels as errors");

  auto* eval = app.add_subcommand("eval", "mIoU report for predictions or the segmentation branch");
  add_shared_flags(eval, fv);
  eval->add_option("--pred", pred_dir, "directory of predicted label PNGs");
  eval->add_flag("--count-unknown-as-error", fv.count_unknown, "score 255 pixels as errors");

  auto* viz = app.add_subcommand("viz", "heatmaps, overlays and the fusion histogram");
  add_shared_flags(viz, fv);
  viz->add_option("--maps", maps_dir, "directory of GTT1 maps written by attribute");
  viz->add_flag("--synthetic", synthetic, "add the seeded synthetic block ensemble");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of the toy model");
  add_shared_flags(grad, fv);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitInvalid;  // help exits 0
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    const Settings s = resolve(fv);
    print_config(out, cmd->get_name(), s);
    if (cmd == gen) return cmd_gen_data(s, out);
    if (cmd == train) return cmd_train(s, out);
    if (cmd == attr) return cmd_attribute(s, out, png, blocks);
    if (cmd == pseudo) return cmd_pseudo_label(s, out, dump_stages);
    if (cmd == eval) return cmd_eval(s, out, pred_dir);
    if (cmd == viz) {
      if (maps_dir.empty() && !synthetic) throw ValidationError("viz needs --maps or --synthetic");
      return cmd_viz(s, out, maps_dir, synthetic);
    }
    return cmd_gradcheck(s, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace getam
