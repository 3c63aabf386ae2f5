#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <random>
#include <sstream>

#include "advpicker/error.hpp"
#include "advpicker/experiment.hpp"

using namespace advpicker;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const char* const tiny = R"(
synth.train_sentences = 120
synth.dev_sentences = 30
synth.test_sentences = 30
encoder.embed_dim = 8
discriminator.hidden_dim = 8
adv.epochs = 2
adv.lr_ner = 5e-3
adv.lr_adv = 1e-3
kd.epochs = 2
kd.lr = 1e-2
kd.batch_size = 8
probe.epochs = 1
run.seeds = 3, 4
selection.ensemble = 2
)";

struct Sandbox {
  fs::path root;
  Sandbox() {
    root = fs::temp_directory_path() / ("advpicker_pipeline_" + std::to_string(std::random_device{}()));
    fs::create_directories(root);
  }
  ~Sandbox() { fs::remove_all(root); }

  ExperimentConfig config(const std::string& name) const {
    auto cfg = parse_config(tiny);
    cfg.output_dir = root / name / "nested";
    return cfg;
  }
};

std::map<std::string, std::string> hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = sha256_file(e.path());
  }
  return out;
}

std::size_t line_count(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

void run_all(Pipeline& p) {
  p.generate({});
  p.train_teacher({});
  p.train_teacher({.adversarial = false});
  p.select({});
  p.distill({});
  p.distill({.all_data = true});
  p.eval({.split = true});
  p.eval({.all_data = true});
  p.eval({.no_kd = true});
}

}  // namespace

TEST_CASE("full pipeline writes every artifact") {
  Sandbox box;
  std::ostringstream log;
  Pipeline p(box.config("a"), log);
  run_all(p);
  const auto out = p.out();

  for (const char* split : {"train", "dev", "test"}) {
    CHECK(fs::exists(out / "data" / (std::string("source_") + split + ".conll")));
    CHECK(fs::exists(out / "data" / (std::string("target_") + split + ".conll")));
  }
  for (std::uint64_t seed : {3, 4}) {
    CHECK(fs::exists(p.teacher_path(seed, true)));
    CHECK(fs::exists(p.teacher_path(seed, false)));
    CHECK(fs::exists(p.student_path(seed, false)));
    CHECK(fs::exists(p.student_path(seed, true)));
    auto metrics = p.teacher_path(seed, true);
    metrics.replace_extension(".metrics.jsonl");
    CHECK(line_count(metrics) == 2);
    std::ifstream in(metrics);
    std::string first;
    std::getline(in, first);
    const auto record = json::parse(first);
    for (const char* key : {"epoch", "loss_ner", "loss_enc", "loss_dis", "dev_f1", "probe_accuracy"}) {
      CHECK(record.contains(key));
    }
  }
  auto base_metrics = p.teacher_path(3, false);
  base_metrics.replace_extension(".metrics.jsonl");
  std::ifstream base_in(base_metrics);
  std::string base_line;
  std::getline(base_in, base_line);
  CHECK(json::parse(base_line)["loss_enc"].is_null());

  CHECK(line_count(out / "selection" / "manifest.jsonl") == 120);
  const auto selected = json::parse(std::ifstream(out / "eval" / "student-selected-split.json"));
  CHECK(selected["runs"].size() == 2);
  CHECK(selected["runs"][0].contains("split"));
  CHECK(selected["runs"][0]["split"]["selected_sentences"].get<std::size_t>() == 24);
  CHECK(selected["mean_f1"].get<double>() >= 0.0);
  CHECK(fs::exists(out / "eval" / "student-all.json"));
  CHECK(fs::exists(out / "eval" / "ensemble-adv.json"));

  const auto manifest = json::parse(std::ifstream(out / "run_manifest.json"));
  CHECK(manifest["files"].contains("data/target_train.conll"));
  CHECK(manifest["files"]["selection/manifest.jsonl"] == sha256_file(out / "selection" / "manifest.jsonl"));
}

TEST_CASE("identical config reproduces identical bytes") {
  Sandbox box;
  std::ostringstream log;
  Pipeline a(box.config("a"), log);
  run_all(a);
  const auto first = box.root / "first";
  fs::rename(a.out(), first);
  run_all(a);
  const auto ha = hashes(first);
  const auto hb = hashes(a.out());
  CHECK(ha.size() > 20);
  CHECK(ha == hb);

  // a forced rerun of one command leaves its outputs unchanged
  const auto before = sha256_file(a.student_path(3, false));
  a.distill({.seed = 3, .force = true});
  CHECK(sha256_file(a.student_path(3, false)) == before);
}

TEST_CASE("existing artifacts need --force") {
  Sandbox box;
  std::ostringstream log;
  Pipeline p(box.config("a"), log);
  p.generate({});
  CHECK_THROWS_AS(p.generate({}), IOError);
  CHECK_NOTHROW(p.generate({.force = true}));
  p.train_teacher({.seed = 3});
  CHECK_THROWS_AS(p.train_teacher({.seed = 3}), IOError);
  CHECK_NOTHROW(p.train_teacher({.seed = 3, .force = true}));
}

TEST_CASE("commands check their prerequisites") {
  Sandbox box;
  std::ostringstream log;
  Pipeline p(box.config("a"), log);
  CHECK_THROWS_AS(p.train_teacher({}), IOError);
  p.generate({});
  CHECK_THROWS_AS(p.select({}), IOError);
  CHECK_THROWS_AS(p.distill({}), IOError);
  CHECK_THROWS_AS(p.eval({}), IOError);

  auto cfg = box.config("conll");
  cfg.data = DataSource::conll;
  cfg.conll.source_train = box.root / "missing.conll";
  CHECK_THROWS_AS(Pipeline(cfg, log).train_teacher({}), IOError);
}

TEST_CASE("single-teacher selection") {
  Sandbox box;
  std::ostringstream log;
  auto cfg = box.config("a");
  cfg.ensemble = 1;
  Pipeline p(cfg, log);
  p.generate({});
  p.train_teacher({.seed = 3});
  p.select({.rho = 0.5});
  const auto records = read_manifest(p.out() / "selection" / "manifest.jsonl");
  std::size_t chosen = 0;
  for (const auto& r : records) {
    chosen += r.selected;
    CHECK(r.seed == 3);
  }
  CHECK(chosen == 60);
}

TEST_CASE("environment overrides the output directory") {
  Sandbox box;
  const auto cfg = box.config("a");
  ::setenv("ADVPICKER_OUT", (box.root / "env").c_str(), 1);
  CHECK(output_dir(cfg) == box.root / "env");
  ::unsetenv("ADVPICKER_OUT");
  CHECK(output_dir(cfg) == cfg.output_dir);
}

TEST_CASE("prediction checks") {
  const auto ls = LabelSet::conll();
  std::vector<Matrix> good = {Matrix::Constant(2, 9, 1.0 / 9.0)};
  CHECK_NOTHROW(check_predictions(good, ls));
  std::vector<Matrix> bad = {Matrix::Constant(2, 9, 0.2)};
  CHECK_THROWS_AS(check_predictions(bad, ls), InvariantViolation);
}
