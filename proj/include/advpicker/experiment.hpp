#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "advpicker/config.hpp"

namespace advpicker {

/// The six splits plus the vocabulary built over the two training splits.
struct Dataset {
  Corpus source_train, source_dev, source_test;
  Corpus target_train, target_dev, target_test;
  /// Realized shared-vocabulary fraction per target sentence; empty for CoNLL input.
  std::vector<double> target_train_shared;
  std::vector<double> target_test_shared;
  Vocabulary vocab;

  const LabelSet& label_set() const { return source_train.label_set; }
  EncoderConfig encoder(const ExperimentConfig& cfg) const;
  void build_vocab();
};

/// In-memory synthetic benchmark described by cfg.synth / cfg.sizes.
Dataset synthesize(const ExperimentConfig& cfg);
/// The data a pipeline command works on: the configured CoNLL files, or the
/// output of `generate` under the output directory.
Dataset load_dataset(const ExperimentConfig& cfg);
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Trains one teacher; `adversarial = false` runs the source-only baseline.
Teacher fit_teacher(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed, bool adversarial,
                    TeacherReport* report = nullptr, const TeacherHooks& hooks = {});

/// Pseudo-labels `target` with every teacher and merges the outputs.
std::vector<PseudoLabeledSentence> ensemble_labels(std::span<const Teacher> teachers, const Corpus& target,
                                                   const Vocabulary& vocab, Pooling pooling);

/// Soft labels of merged outputs, in corpus order.
std::vector<Matrix> soft_labels_of(std::span<const PseudoLabeledSentence> items);

/// Throws InvariantViolation unless every row is a distribution and every
/// decoded sequence is BIO-valid.
void check_predictions(std::span<const Matrix> probs, const LabelSet& label_set);

// --- pipeline commands ------------------------------------------------------------

struct CommandOptions {
  std::optional<std::uint64_t> seed;
  bool adversarial = true;
  std::optional<double> rho;
  bool all_data = false;
  bool no_kd = false;
  bool split = false;
  bool force = false;
};

/// Resolves the output directory; ADVPICKER_OUT overrides the config.
std::filesystem::path output_dir(const ExperimentConfig& cfg);

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, std::ostream& log);

  void generate(const CommandOptions& opt);
  void train_teacher(const CommandOptions& opt);
  void select(const CommandOptions& opt);
  void distill(const CommandOptions& opt);
  /// Returns the JSON report text that was also written under eval/.
  std::string eval(const CommandOptions& opt);

  const std::filesystem::path& out() const { return out_; }
  std::filesystem::path teacher_path(std::uint64_t seed, bool adversarial) const;
  std::filesystem::path student_path(std::uint64_t seed, bool all_data) const;

 private:
  std::vector<std::uint64_t> seeds_for(const CommandOptions& opt) const;
  std::vector<Teacher> load_ensemble(bool adversarial) const;
  void refuse_existing(const std::filesystem::path& path, bool force) const;
  void write_run_manifest() const;

  ExperimentConfig cfg_;
  std::ostream& log_;
  std::filesystem::path out_;
};

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// --- multi-seed desk experiment ----------------------------------------------------

struct SeedOutcome {
  std::uint64_t seed = 0;
  double probe_adversarial = 0.0;
  double probe_baseline = 0.0;
  double teacher_f1 = 0.0;
  double baseline_f1 = 0.0;
  double ensemble_f1 = 0.0;  // teacher ensemble on target test, no distillation
  double student_selected_f1 = 0.0;
  double student_all_f1 = 0.0;
  double pseudo_f1_selected = 0.0;
  double pseudo_f1_other = 0.0;
  double shared_l_score_correlation = 0.0;
  double split_selected_f1 = 0.0;
  double split_other_f1 = 0.0;
  std::size_t purity_violations = 0;
  std::size_t substeps_checked = 0;
};

struct BenchmarkOutcome {
  std::vector<SeedOutcome> runs;
  double teacher_seconds = 0.0;
  double total_seconds = 0.0;

  double mean(double SeedOutcome::*field) const;
};

/// Trains an adversarial and a baseline teacher per seed, then for each seed
/// i selects with the ensemble of teachers i .. i+K-1 (cyclic), distils a
/// student on the selected and on all sentences, and scores everything on
/// the target test split.
BenchmarkOutcome run_benchmark(const ExperimentConfig& cfg, const Dataset& data,
                               std::span<const std::uint64_t> seeds,
                               const std::function<void(const std::string&)>& log = {});

}  // namespace advpicker
