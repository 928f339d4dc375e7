#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "getam/cli.hpp"
#include "getam/data_eval.hpp"
#include "getam/fileio.hpp"
#include "getam/image_io.hpp"
#include "getam/tensor.hpp"

using namespace getam;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path root() {
  static const fs::path r = [] {
    auto p = fs::temp_directory_path() / "getam_test_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    write_text_atomic(p / "small.cfg",
                      "# toy settings\nnum_images = 24\neval_images = 12\ndim = 16\n"
                      "nonsalient_fraction = 0.25\nprobe_epochs = 2\npamr_iters = 3\n");
    return p;
  }();
  return r;
}

std::string path(const std::string& name) { return (root() / name).string(); }

// dataset and a briefly trained checkpoint shared by several cases
void ensure_fixture() {
  if (fs::exists(root() / "run" / "checkpoint")) return;
  REQUIRE(cli({"gen-data", "--config", path("small.cfg"), "--out", path("ds"), "--seed", "5"}).code ==
          0);
  REQUIRE(cli({"train", "--config", path("small.cfg"), "--dataset", path("ds"), "--out",
               path("run"), "--epochs", "3", "--phase1-epochs", "2", "--seed", "1"})
              .code == 0);
}

}  // namespace

TEST_CASE("argument errors") {
  CHECK(cli({}).code == kExitInvalid);
  CHECK(cli({"train", "--bogus"}).code == kExitInvalid);
  CHECK(cli({"frobnicate"}).code == kExitInvalid);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"gen-data"}).err.find("--out") != std::string::npos);

  write_text_atomic(root() / "bad.cfg", "nonsense_key = 1\n");
  auto r = cli({"gen-data", "--config", path("bad.cfg"), "--out", path("x")});
  CHECK(r.code == kExitInvalid);
  CHECK(r.err.find("nonsense_key") != std::string::npos);
  CHECK(cli({"gen-data", "--out", path("x"), "--seed", "-3"}).code == kExitInvalid);
  CHECK_FALSE(fs::exists(root() / "x"));

  r = cli({"attribute", "--checkpoint", path("nowhere"), "--dataset", path("ds"), "--out",
           path("x")});
  CHECK(r.code == kExitInvalid);
  CHECK(r.err.find("nowhere") != std::string::npos);
}

TEST_CASE("resolved config: defaults, file, then flags") {
  auto r = cli({"gen-data", "--config", path("small.cfg"), "--out", path("cfgcheck"), "--seed",
                "9"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("num_images = 24") != std::string::npos);
  CHECK(r.out.find("seed = 9") != std::string::npos);
  CHECK(r.out.find("alpha = 0.9") != std::string::npos);
  CHECK(read_dataset(root() / "cfgcheck" / "train").size() == 24);
  CHECK(read_dataset(root() / "cfgcheck" / "eval").size() == 12);
}

TEST_CASE("gen-data and train are deterministic") {
  ensure_fixture();
  REQUIRE(cli({"gen-data", "--config", path("small.cfg"), "--out", path("ds2"), "--seed", "5"})
              .code == 0);
  for (const char* f : {"train/labels.csv", "train/images/train_0003.png", "eval/masks/eval_0007.png",
                        "eval/saliency/eval_0001.png"})
    CHECK(read_file_bytes(root() / "ds" / f) == read_file_bytes(root() / "ds2" / f));

  REQUIRE(cli({"train", "--config", path("small.cfg"), "--dataset", path("ds2"), "--out",
               path("run2"), "--epochs", "3", "--phase1-epochs", "2", "--seed", "1"})
              .code == 0);
  CHECK(read_text_file(root() / "run" / "metrics.csv") ==
        read_text_file(root() / "run2" / "metrics.csv"));
  CHECK(read_file_bytes(root() / "run" / "checkpoint" / "head.weight.gtt") ==
        read_file_bytes(root() / "run2" / "checkpoint" / "head.weight.gtt"));
}

TEST_CASE("attribute on an untrained head gives zero maps") {
  ensure_fixture();
  REQUIRE(cli({"train", "--config", path("small.cfg"), "--dataset", path("ds"), "--out",
               path("untrained"), "--epochs", "0", "--phase1-epochs", "0"})
              .code == 0);
  REQUIRE(cli({"attribute", "--checkpoint", path("untrained"), "--dataset", path("ds"), "--out",
               path("zmaps"), "--method", "getam", "--png"})
              .code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(root() / "zmaps")) {
    if (e.path().extension() != ".gtt") continue;
    ++files;
    const Tensor map = read_gtt(e.path());
    for (double v : map.data()) CHECK(v == 0.0);
  }
  CHECK(files > 0);
}

TEST_CASE("attribute writes every method") {
  ensure_fixture();
  for (const char* m : {"getam", "gradcam", "cam-add", "cam-ignore"}) {
    CAPTURE(m);
    REQUIRE(cli({"attribute", "--checkpoint", path("run"), "--dataset", path("ds"), "--out",
                 path(std::string("maps_") + m), "--method", m})
                .code == 0);
    const auto data = read_dataset(root() / "ds" / "eval");
    for (int l : data[0].labels) {
      const auto f = root() / (std::string("maps_") + m) /
                     (data[0].id + "_" + std::to_string(l) + "_" + m + ".gtt");
      REQUIRE(fs::exists(f));
      CHECK(read_gtt(f).shape() == Shape{4, 4});
    }
  }
  CHECK(cli({"attribute", "--checkpoint", path("run"), "--dataset", path("ds"), "--out",
             path("maps_bad"), "--method", "lrp"})
            .code == kExitInvalid);
  CHECK_FALSE(fs::exists(root() / "maps_bad"));
}

TEST_CASE("alpha 1 never mines non-salient foreground") {
  ensure_fixture();
  for (const char* a : {"1.0", "0.9"})
    REQUIRE(cli({"pseudo-label", "--checkpoint", path("run"), "--dataset", path("ds"), "--out",
                 path(std::string("pl_") + a), "--alpha", a, "--dump-stages"})
                .code == 0);
  const auto data = read_dataset(root() / "ds" / "eval");
  std::size_t mined_09 = 0;
  for (const auto& s : data) {
    const auto p10 = read_png_gray(root() / "pl_1.0" / (s.id + ".png"));
    const auto p09 = read_png_gray(root() / "pl_0.9" / (s.id + ".png"));
    const auto pre = read_png_gray(root() / "pl_0.9" / "pre_mining" / (s.id + ".png"));
    CHECK(p09 == read_png_gray(root() / "pl_0.9" / "post_mining" / (s.id + ".png")));
    CHECK(p10 == pre);
    for (std::size_t i = 0; i < p10.size(); ++i) {
      if (s.saliency.data[i]) continue;
      CHECK(p10.data[i] == 0);
      if (p09.data[i] != 0) ++mined_09;
    }
  }
  CHECK(mined_09 > 0);
}

TEST_CASE("eval reports") {
  ensure_fixture();
  REQUIRE(cli({"pseudo-label", "--checkpoint", path("run"), "--dataset", path("ds"), "--out",
               path("pl_eval")})
              .code == 0);
  auto r = cli({"eval", "--dataset", path("ds"), "--pred", path("pl_eval"), "--out",
                path("report")});
  REQUIRE(r.code == 0);
  const std::string csv = read_text_file(root() / "report" / "report.csv");
  CHECK(csv.rfind("class,iou,precision,recall\n0,", 0) == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);

  // ground truth scored against itself
  REQUIRE(cli({"eval", "--dataset", path("ds"), "--pred", path("ds/eval/masks"), "--out",
               path("report_gt")})
              .code == 0);
  CHECK(read_text_file(root() / "report_gt" / "report.csv").find("\nmean,1,") != std::string::npos);

  CHECK(cli({"eval", "--dataset", path("ds"), "--checkpoint", path("run"), "--out",
             path("report_seg")})
            .code == 0);
  CHECK(cli({"eval", "--dataset", path("ds"), "--pred", path("missing"), "--out",
             path("report_x")})
            .code == kExitInvalid);
}

TEST_CASE("viz renders overlays and histograms, cleans up on failure") {
  ensure_fixture();
  REQUIRE(cli({"attribute", "--checkpoint", path("run"), "--dataset", path("ds"), "--out",
               path("vmaps"), "--blocks"})
              .code == 0);
  auto r = cli({"viz", "--dataset", path("ds"), "--maps", path("vmaps"), "--out", path("viz")});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(root() / "viz" / "eval_0000_1_getam_overlay.png"));
  CHECK(fs::exists(root() / "viz" / "eval_0000_1_getam_heat.png"));
  CHECK(fs::exists(root() / "viz" / "fusion_histogram.png"));
  CHECK(read_text_file(root() / "viz" / "fusion_histogram.csv").find("matmul,") !=
        std::string::npos);

  // a second run over the same inputs gives the same bytes
  REQUIRE(cli({"viz", "--dataset", path("ds"), "--maps", path("vmaps"), "--out", path("viz2")})
              .code == 0);
  CHECK(read_file_bytes(root() / "viz" / "eval_0000_1_getam_overlay.png") ==
        read_file_bytes(root() / "viz2" / "eval_0000_1_getam_overlay.png"));

  REQUIRE(cli({"viz", "--synthetic", "--seed", "3", "--out", path("vsyn")}).code == 0);
  CHECK(fs::exists(root() / "vsyn" / "fusion_histogram.png"));

  // a map naming an image that is not in the dataset fails after staging began
  fs::copy_file(root() / "vmaps" / "eval_0000_1_getam.gtt", root() / "vmaps" / "ghost_1_getam.gtt");
  r = cli({"viz", "--dataset", path("ds"), "--maps", path("vmaps"), "--out", path("viz_fail")});
  CHECK(r.code == kExitInvalid);
  CHECK(r.err.find("ghost") != std::string::npos);
  CHECK_FALSE(fs::exists(root() / "viz_fail"));
  CHECK_FALSE(fs::exists(root() / "viz_fail.partial"));
}

TEST_CASE("gradcheck command") {
  auto r = cli({"gradcheck", "--seed", "7", "--out", path("gc")});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("all checks passed") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(fs::exists(root() / "gc" / "gradcheck.txt"));
}
