#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "advpicker/adversarial.hpp"
#include "advpicker/corpus.hpp"
#include "advpicker/distillation.hpp"
#include "advpicker/evaluation.hpp"
#include "advpicker/models.hpp"
#include "advpicker/selection.hpp"

namespace advpicker {

enum class DataSource { synthetic, conll };

/// CoNLL inputs when data.format = conll.
struct ConllPaths {
  std::filesystem::path source_train, source_dev, source_test;
  std::filesystem::path target_train, target_dev, target_test;
  std::vector<std::string> entity_types = {"PER", "LOC", "ORG", "MISC"};
};

/// Every knob of a pipeline run. Defaults are the reference
/// hyperparameters (batch 32, max length 128, 10 epochs, learning rates
/// 6e-5 / 6e-7 / 6e-7, rho 0.8, student learning rate 6e-5).
struct ExperimentConfig {
  std::filesystem::path output_dir = "advpicker_out";
  DataSource data = DataSource::synthetic;
  SynthSpec synth;
  BenchmarkSizes sizes;
  ConllPaths conll;

  EncoderConfig encoder;  // vocab_size is filled from the data
  DiscriminatorConfig discriminator;
  AdvConfig adv;
  double rho = 0.8;
  Pooling pooling = Pooling::mean;
  /// Ensemble size K; the first K seeds of `seeds` feed the selection step.
  std::size_t ensemble = 3;
  KDConfig kd;
  ProbeConfig probe;
  std::vector<std::uint64_t> seeds = {13, 42, 87};

  void validate() const;
};

/// Flat "section.key = value" lines; '#' starts a comment. Unknown keys are
/// rejected with the offending line number.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& cfg);

}  // namespace advpicker
