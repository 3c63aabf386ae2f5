#include "advpicker/experiment.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>

#include "advpicker/error.hpp"

namespace advpicker {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

EncoderConfig Dataset::encoder(const ExperimentConfig& cfg) const {
  EncoderConfig enc = cfg.encoder;
  enc.vocab_size = vocab.size();
  return enc;
}

void Dataset::build_vocab() {
  const std::array<const Corpus*, 2> train = {&source_train, &target_train};
  vocab = Vocabulary::build(train);
}

Dataset synthesize(const ExperimentConfig& cfg) {
  auto bench = generate_benchmark(cfg.synth, cfg.sizes);
  Dataset d;
  d.source_train = std::move(bench.train.source);
  d.target_train = std::move(bench.train.target);
  d.source_dev = std::move(bench.dev.source);
  d.target_dev = std::move(bench.dev.target);
  d.source_test = std::move(bench.test.source);
  d.target_test = std::move(bench.test.target);
  d.target_train_shared = std::move(bench.train.target_shared_fraction);
  d.target_test_shared = std::move(bench.test.target_shared_fraction);
  d.build_vocab();
  return d;
}

namespace {

struct SplitFile {
  const char* name;
  Corpus Dataset::*member;
  Language language;
  Split split;
};

constexpr std::array<SplitFile, 6> split_files = {{
    {"source_train.conll", &Dataset::source_train, Language::source, Split::train},
    {"source_dev.conll", &Dataset::source_dev, Language::source, Split::dev},
    {"source_test.conll", &Dataset::source_test, Language::source, Split::test},
    {"target_train.conll", &Dataset::target_train, Language::target, Split::train},
    {"target_dev.conll", &Dataset::target_dev, Language::target, Split::dev},
    {"target_test.conll", &Dataset::target_test, Language::target, Split::test},
}};

LabelSet configured_labels(const ExperimentConfig& cfg) {
  if (cfg.data == DataSource::conll) return LabelSet(cfg.conll.entity_types);
  return cfg.synth.label_set();
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& cfg) {
  const LabelSet labels = configured_labels(cfg);
  Dataset d;
  if (cfg.data == DataSource::conll) {
    const std::array<fs::path, 6> paths = {cfg.conll.source_train, cfg.conll.source_dev, cfg.conll.source_test,
                                           cfg.conll.target_train, cfg.conll.target_dev, cfg.conll.target_test};
    for (std::size_t i = 0; i < split_files.size(); ++i) {
      if (paths[i].empty()) throw ConfigError(std::string("data path for ") + split_files[i].name + " is not set");
      d.*split_files[i].member = read_conll(paths[i], labels, split_files[i].language, split_files[i].split);
    }
  } else {
    const fs::path dir = output_dir(cfg) / "data";
    for (const auto& f : split_files) {
      if (!fs::exists(dir / f.name)) throw IOError("missing " + (dir / f.name).string() + "; run `generate` first");
      d.*f.member = read_conll(dir / f.name, labels, f.language, f.split);
    }
  }
  d.build_vocab();
  return d;
}

void write_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& f : split_files) write_conll(data.*f.member, dir / f.name);
}

Teacher fit_teacher(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed, bool adversarial,
                    TeacherReport* report, const TeacherHooks& hooks) {
  AdvConfig adv = cfg.adv;
  adv.seed = seed;
  if (!adversarial) adv.lr_adv = 0.0;
  Teacher teacher = Teacher::create(data.encoder(cfg), cfg.discriminator, data.label_set().size(), seed);
  auto r = advpicker::train_teacher(teacher, data.source_train, data.target_train.unlabeled(), data.target_dev,
                                    data.vocab, adv, hooks);
  if (report) *report = std::move(r);
  return teacher;
}

std::vector<PseudoLabeledSentence> ensemble_labels(std::span<const Teacher> teachers, const Corpus& target,
                                                   const Vocabulary& vocab, Pooling pooling) {
  std::vector<std::vector<TeacherOutput>> per_seed;
  per_seed.reserve(teachers.size());
  for (const auto& t : teachers) per_seed.push_back(pseudo_label(t, target, vocab));
  return merge_seeds(per_seed, target, pooling);
}

std::vector<Matrix> soft_labels_of(std::span<const PseudoLabeledSentence> items) {
  std::vector<Matrix> out;
  out.reserve(items.size());
  for (const auto& p : items) out.push_back(p.soft_labels);
  return out;
}

void check_predictions(std::span<const Matrix> probs, const LabelSet& label_set) {
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    if (p.size() > 0 && ((p.rowwise().sum().array() - 1.0).abs().maxCoeff() > 1e-6 || p.minCoeff() < 0.0)) {
      throw InvariantViolation("prediction " + std::to_string(i) + " is not row-stochastic");
    }
    if (!validate_bio(viterbi_decode(p, label_set), label_set)) {
      throw InvariantViolation("decoded sequence " + std::to_string(i) + " is not valid BIO");
    }
  }
}

// --- pipeline ------------------------------------------------------------------------

fs::path output_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("ADVPICKER_OUT"); env && *env) return fs::path(env);
  return cfg.output_dir;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

namespace {

json report_json(const EvalReport& r) {
  json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["gold"] = r.counts.gold;
  j["predicted"] = r.counts.predicted;
  j["correct"] = r.counts.correct;
  json per = json::object();
  for (const auto& [type, s] : r.per_type) per[type] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  j["per_type"] = per;
  return j;
}

void check_report(const EvalReport& r) {
  for (double v : {r.precision, r.recall, r.f1}) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvariantViolation("score outside [0, 1]");
  }
}

json epoch_json(const EpochMetrics& m) {
  json j;
  j["epoch"] = m.epoch;
  j["loss_ner"] = m.loss_ner;
  j["loss_enc"] = m.loss_enc ? json(*m.loss_enc) : json(nullptr);
  j["loss_dis"] = m.loss_dis ? json(*m.loss_dis) : json(nullptr);
  j["dev_f1"] = m.dev_f1;
  j["probe_accuracy"] = m.probe_accuracy ? json(*m.probe_accuracy) : json(nullptr);
  return j;
}

std::vector<double> l_scores_of(std::span<const PseudoLabeledSentence> items) {
  std::vector<double> out;
  for (const auto& p : items) out.push_back(p.l_score);
  return out;
}

}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg, std::ostream& log) : cfg_(std::move(cfg)), log_(log) {
  cfg_.validate();
  out_ = output_dir(cfg_);
}

fs::path Pipeline::teacher_path(std::uint64_t seed, bool adversarial) const {
  return out_ / "teachers" / ((adversarial ? "adv-seed" : "base-seed") + std::to_string(seed) + ".ckpt");
}

fs::path Pipeline::student_path(std::uint64_t seed, bool all_data) const {
  return out_ / "students" / ((all_data ? "all-seed" : "selected-seed") + std::to_string(seed) + ".ckpt");
}

std::vector<std::uint64_t> Pipeline::seeds_for(const CommandOptions& opt) const {
  if (opt.seed) return {*opt.seed};
  return cfg_.seeds;
}

void Pipeline::refuse_existing(const fs::path& path, bool force) const {
  if (fs::exists(path) && !force) {
    throw IOError(path.string() + " already exists; pass --force to overwrite");
  }
}

std::vector<Teacher> Pipeline::load_ensemble(bool adversarial) const {
  if (cfg_.ensemble > cfg_.seeds.size()) {
    throw ConfigError("selection.ensemble exceeds the number of run.seeds");
  }
  std::vector<Teacher> teachers;
  for (std::size_t k = 0; k < cfg_.ensemble; ++k) {
    const auto path = teacher_path(cfg_.seeds[k], adversarial);
    if (!fs::exists(path)) throw IOError("missing teacher " + path.string() + "; run `train-teacher` first");
    teachers.push_back(Teacher::load(path));
  }
  return teachers;
}

void Pipeline::write_run_manifest() const {
  json files = json::object();
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(out_)) {
    if (entry.is_regular_file() && entry.path().filename() != "run_manifest.json") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) files[fs::relative(p, out_).generic_string()] = sha256_file(p);
  json j;
  j["config"] = to_text(cfg_);
  j["files"] = files;
  std::ofstream(out_ / "run_manifest.json") << j.dump(2) << "\n";
}

void Pipeline::generate(const CommandOptions& opt) {
  if (cfg_.data != DataSource::synthetic) throw ConfigError("generate needs data.format = synthetic");
  const fs::path dir = out_ / "data";
  refuse_existing(dir / "source_train.conll", opt.force);
  ExperimentConfig c = cfg_;
  if (opt.seed) c.synth.seed = *opt.seed;
  auto data = synthesize(c);
  write_dataset(data, dir);
  log_ << "wrote 6 splits to " << dir.string() << " (" << data.source_train.size() << "+" << data.target_train.size()
       << " train sentences, vocabulary " << data.vocab.size() << ")\n";
  write_run_manifest();
}

void Pipeline::train_teacher(const CommandOptions& opt) {
  const auto data = load_dataset(cfg_);
  for (auto seed : seeds_for(opt)) {
    const auto path = teacher_path(seed, opt.adversarial);
    refuse_existing(path, opt.force);
    fs::create_directories(path.parent_path());
    auto metrics_path = path;
    metrics_path.replace_extension(".metrics.jsonl");
    std::ofstream metrics(metrics_path);
    ProbeConfig probe = cfg_.probe;
    probe.seed = seed;
    TeacherHooks hooks;
    hooks.check_purity = true;
    hooks.probe = [&](const Teacher& t) -> std::optional<double> {
      return probe_discriminator(t, data.source_train, data.target_train, data.source_dev, data.target_dev,
                                 data.vocab, probe);
    };
    hooks.on_epoch = [&](const EpochMetrics& m) {
      metrics << epoch_json(m).dump() << "\n";
      log_ << "seed " << seed << " epoch " << m.epoch << " loss_ner " << m.loss_ner << " dev_f1 " << m.dev_f1 << "\n";
    };
    TeacherReport report;
    Teacher teacher = fit_teacher(cfg_, data, seed, opt.adversarial, &report, hooks);
    if (report.purity_violations > 0) {
      throw InvariantViolation(std::to_string(report.purity_violations) + " sub-steps updated undeclared components");
    }
    teacher.save(path, {{"seed", std::to_string(seed)},
                        {"adversarial", opt.adversarial ? "on" : "off"},
                        {"best_epoch", std::to_string(report.best_epoch)}});
    log_ << "saved " << path.string() << " (best epoch " << report.best_epoch << ")\n";
  }
  write_run_manifest();
}

void Pipeline::select(const CommandOptions& opt) {
  const auto data = load_dataset(cfg_);
  const double rho = opt.rho.value_or(cfg_.rho);
  const fs::path dir = out_ / "selection";
  refuse_existing(dir / "manifest.jsonl", opt.force);
  const auto teachers = load_ensemble(opt.adversarial);
  auto merged = ensemble_labels(teachers, data.target_train, data.vocab, cfg_.pooling);
  check_predictions(soft_labels_of(merged), data.label_set());
  auto result = select_top_rho(std::move(merged), rho);
  fs::create_directories(dir);
  const std::vector<std::uint64_t> seeds(cfg_.seeds.begin(), cfg_.seeds.begin() + static_cast<std::ptrdiff_t>(cfg_.ensemble));
  write_manifest(manifest_records(result, seeds), dir / "manifest.jsonl");
  std::vector<PseudoLabeledSentence> all = result.selected;
  all.insert(all.end(), result.rejected.begin(), result.rejected.end());
  write_soft_labels(all, dir / "soft_labels.bin");
  log_ << "selected " << result.selected.size() << " of " << all.size() << " target sentences (rho " << rho << ")\n";
  write_run_manifest();
}

void Pipeline::distill(const CommandOptions& opt) {
  const auto data = load_dataset(cfg_);
  const fs::path dir = out_ / "selection";
  if (!fs::exists(dir / "manifest.jsonl")) throw IOError("missing selection manifest; run `select` first");
  const auto records = read_manifest(dir / "manifest.jsonl");
  const auto soft = read_soft_labels(dir / "soft_labels.bin");
  const double rho = opt.rho.value_or(cfg_.rho);
  auto selection = load_selection(records, soft, data.target_train, rho);
  std::vector<PseudoLabeledSentence> subset = selection.selected;
  if (opt.all_data) subset.insert(subset.end(), selection.rejected.begin(), selection.rejected.end());

  for (auto seed : seeds_for(opt)) {
    const auto path = student_path(seed, opt.all_data);
    refuse_existing(path, opt.force);
    fs::create_directories(path.parent_path());
    auto metrics_path = path;
    metrics_path.replace_extension(".metrics.jsonl");
    std::ofstream metrics(metrics_path);
    KDConfig kd = cfg_.kd;
    kd.seed = seed;
    StudentReport report;
    Student student = train_student(subset, kd, data.target_dev, data.vocab, data.encoder(cfg_),
                                    data.label_set().size(), &report, [&](const StudentEpoch& e) {
                                      metrics << json{{"epoch", e.epoch}, {"loss_kd", e.loss_kd}, {"dev_f1", e.dev_f1}}.dump()
                                              << "\n";
                                    });
    student.save(path, {{"seed", std::to_string(seed)},
                        {"training_set", opt.all_data ? "all" : "selected"},
                        {"sentences", std::to_string(subset.size())}});
    log_ << "saved " << path.string() << " (" << subset.size() << " sentences, best epoch " << report.best_epoch
         << ")\n";
  }
  write_run_manifest();
}

std::string Pipeline::eval(const CommandOptions& opt) {
  const auto data = load_dataset(cfg_);
  const auto& test = data.target_test;
  const double rho = opt.rho.value_or(cfg_.rho);
  json out;
  std::vector<Teacher> teachers;
  if (opt.no_kd || opt.split) teachers = load_ensemble(opt.adversarial);

  auto score = [&](const std::vector<Matrix>& probs) {
    check_predictions(probs, data.label_set());
    json j;
    const auto report = evaluate_probs(test, probs);
    check_report(report);
    j["test"] = report_json(report);
    if (opt.split) {
      const auto merged = ensemble_labels(teachers, test.unlabeled(), data.vocab, cfg_.pooling);
      const auto split = split_eval(test, l_scores_of(merged), probs, rho);
      j["split"] = {{"rho", rho},
                    {"selected", report_json(split.selected)},
                    {"other", report_json(split.other)},
                    {"selected_sentences", split.selected_ids.size()},
                    {"other_sentences", split.other_ids.size()}};
    }
    return j;
  };

  std::string name;
  if (opt.no_kd) {
    name = std::string(opt.adversarial ? "ensemble-adv" : "ensemble-base");
    out["model"] = name;
    const auto merged = ensemble_labels(teachers, test.unlabeled(), data.vocab, cfg_.pooling);
    out["result"] = score(soft_labels_of(merged));
  } else {
    name = std::string(opt.all_data ? "student-all" : "student-selected");
    out["model"] = name;
    json runs = json::array();
    double sum = 0.0;
    const auto seeds = seeds_for(opt);
    for (auto seed : seeds) {
      const auto path = student_path(seed, opt.all_data);
      if (!fs::exists(path)) throw IOError("missing student " + path.string() + "; run `distill` first");
      const Student student = Student::load(path);
      json r = score(predict_proba(student, test.sentences, data.vocab));
      sum += r["test"]["f1"].get<double>();
      r["seed"] = seed;
      runs.push_back(std::move(r));
    }
    out["runs"] = runs;
    out["mean_f1"] = sum / static_cast<double>(seeds.size());
    if (opt.seed) name += "-seed" + std::to_string(*opt.seed);
  }
  if (opt.split) name += "-split";
  fs::create_directories(out_ / "eval");
  const std::string text = out.dump(2);
  std::ofstream(out_ / "eval" / (name + ".json")) << text << "\n";
  write_run_manifest();
  return text;
}

// --- benchmark -----------------------------------------------------------------------

double BenchmarkOutcome::mean(double SeedOutcome::*field) const {
  if (runs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : runs) s += r.*field;
  return s / static_cast<double>(runs.size());
}

namespace {

/// F1 of the decoded soft labels against gold, restricted to the given ids.
double pseudo_f1(const Corpus& gold, std::span<const PseudoLabeledSentence> items) {
  std::unordered_map<std::int64_t, const Sentence*> by_id;
  for (const auto& s : gold.sentences) by_id[s.id] = &s;
  Corpus sub{.sentences = {}, .label_set = gold.label_set, .split = gold.split};
  std::vector<Matrix> probs;
  for (const auto& p : items) {
    sub.sentences.push_back(*by_id.at(p.sentence.id));
    probs.push_back(p.soft_labels);
  }
  if (sub.sentences.empty()) return 0.0;
  return evaluate_probs(sub, probs).f1;
}

}  // namespace

BenchmarkOutcome run_benchmark(const ExperimentConfig& cfg, const Dataset& data, std::span<const std::uint64_t> seeds,
                               const std::function<void(const std::string&)>& log) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };
  if (seeds.empty()) throw ConfigError("run_benchmark: no seeds");
  const std::size_t n = seeds.size();
  const std::size_t k = std::min(cfg.ensemble, n);

  BenchmarkOutcome outcome;
  outcome.runs.resize(n);
  std::vector<Teacher> adv, base;
  for (std::size_t i = 0; i < n; ++i) {
    auto& run = outcome.runs[i];
    run.seed = seeds[i];
    ProbeConfig probe = cfg.probe;
    probe.seed = seeds[i];

    // the probe reads the encoder as it stands after the last epoch, not the
    // best-dev checkpoint that fit_teacher hands back
    auto final_probe = [&](double& out) {
      TeacherHooks hooks;
      hooks.probe = [&, epoch = std::size_t{0}](const Teacher& t) mutable -> std::optional<double> {
        if (++epoch < cfg.adv.epochs) return std::nullopt;
        out = probe_discriminator(t, data.source_train, data.target_train, data.source_test, data.target_test,
                                  data.vocab, probe);
        return out;
      };
      return hooks;
    };

    TeacherReport report;
    TeacherHooks hooks = final_probe(run.probe_adversarial);
    hooks.check_purity = true;
    adv.push_back(fit_teacher(cfg, data, seeds[i], true, &report, hooks));
    run.purity_violations = report.purity_violations;
    run.substeps_checked = report.substeps_checked;
    base.push_back(fit_teacher(cfg, data, seeds[i], false, nullptr, final_probe(run.probe_baseline)));
    run.teacher_f1 = evaluate_probs(data.target_test, predict_proba(adv.back(), data.target_test.sentences, data.vocab)).f1;
    run.baseline_f1 =
        evaluate_probs(data.target_test, predict_proba(base.back(), data.target_test.sentences, data.vocab)).f1;
    std::ostringstream os;
    os << "seed " << seeds[i] << ": teacher F1 " << run.teacher_f1 << " (baseline " << run.baseline_f1 << "), probe "
       << run.probe_adversarial << " (baseline " << run.probe_baseline << ")";
    say(os.str());
  }
  outcome.teacher_seconds = std::chrono::duration<double>(clock::now() - start).count();

  const Corpus target_train = data.target_train.unlabeled();
  const Corpus target_test = data.target_test.unlabeled();
  for (std::size_t i = 0; i < n; ++i) {
    auto& run = outcome.runs[i];
    std::vector<Teacher> ensemble;
    for (std::size_t j = 0; j < k; ++j) ensemble.push_back(adv[(i + j) % n]);

    auto merged = ensemble_labels(ensemble, target_train, data.vocab, cfg.pooling);
    if (!data.target_train_shared.empty()) {
      run.shared_l_score_correlation = rank_correlation(data.target_train_shared, l_scores_of(merged));
    }
    auto selection = select_top_rho(std::move(merged), cfg.rho);
    run.pseudo_f1_selected = pseudo_f1(data.target_train, selection.selected);
    run.pseudo_f1_other = pseudo_f1(data.target_train, selection.rejected);

    KDConfig kd = cfg.kd;
    kd.seed = seeds[i];
    const auto enc = data.encoder(cfg);
    const auto tags = data.label_set().size();
    const Student selected = train_student(selection.selected, kd, data.target_dev, data.vocab, enc, tags);
    std::vector<PseudoLabeledSentence> all = selection.selected;
    all.insert(all.end(), selection.rejected.begin(), selection.rejected.end());
    const Student everything = train_student(all, kd, data.target_dev, data.vocab, enc, tags);

    const auto sel_probs = predict_proba(selected, data.target_test.sentences, data.vocab);
    run.student_selected_f1 = evaluate_probs(data.target_test, sel_probs).f1;
    run.student_all_f1 =
        evaluate_probs(data.target_test, predict_proba(everything, data.target_test.sentences, data.vocab)).f1;

    const auto test_merged = ensemble_labels(ensemble, target_test, data.vocab, cfg.pooling);
    run.ensemble_f1 = evaluate_probs(data.target_test, soft_labels_of(test_merged)).f1;
    const auto split = split_eval(data.target_test, l_scores_of(test_merged), sel_probs, cfg.rho);
    run.split_selected_f1 = split.selected.f1;
    run.split_other_f1 = split.other.f1;

    std::ostringstream os;
    os << "seed " << seeds[i] << ": student selected " << run.student_selected_f1 << ", all " << run.student_all_f1
       << ", ensemble " << run.ensemble_f1 << ", pseudo F1 selected/other " << run.pseudo_f1_selected << "/"
       << run.pseudo_f1_other << ", split " << run.split_selected_f1 << "/" << run.split_other_f1 << ", spearman "
       << run.shared_l_score_correlation;
    say(os.str());
  }
  outcome.total_seconds = std::chrono::duration<double>(clock::now() - start).count();
  return outcome;
}

}  // namespace advpicker
