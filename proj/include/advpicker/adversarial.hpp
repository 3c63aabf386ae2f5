#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "advpicker/corpus.hpp"
#include "advpicker/models.hpp"

namespace advpicker {

struct AdvConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double lr_ner = 6e-5;
  /// Shared by the encoder-adversarial and discriminator updates. Zero turns
  /// the adversarial sub-steps off (plain source fine-tuning baseline).
  double lr_adv = 6e-7;
  double weight_decay = 0.01;
  std::size_t max_len = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mean token negative log-likelihood of the gold tags.
Tensor loss_ner(const Tensor& probs, std::span<const int> tags);
/// Binary cross-entropy toward the true language labels (1 = source).
Tensor loss_dis(const Tensor& source_prob, std::span<const double> language);
/// Binary cross-entropy toward the flipped language labels.
Tensor loss_enc(const Tensor& source_prob, std::span<const double> flipped_language);

enum class SubStep { ner, encoder, discriminator };

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_ner = 0.0;
  std::optional<double> loss_enc;
  std::optional<double> loss_dis;
  double dev_f1 = 0.0;
  std::optional<double> probe_accuracy;
};

struct TeacherReport {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  double best_dev_f1 = -1.0;
  std::size_t substeps_checked = 0;
  /// Sub-steps that changed a component outside their declared set, or left a
  /// declared component untouched.
  std::size_t purity_violations = 0;
};

struct TeacherHooks {
  /// Snapshot parameters around every sub-step and count purity violations.
  bool check_purity = false;
  /// Called after each sub-step with the parameters before and after it.
  std::function<void(SubStep, const ParamStore& before, const ParamStore& after)> on_substep;
  /// Optional per-epoch probe accuracy for the metrics record.
  std::function<std::optional<double>(const Teacher&)> probe;
  /// Called with each finished epoch's record.
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Components each sub-step is allowed to update.
std::vector<std::string> updated_components(SubStep step);

/// Token-level adversarial training. Per batch, three sequential sub-steps:
/// L^NER updates encoder + NER head at lr_ner, L^E updates the encoder only
/// and L^DIS the discriminator only, both at lr_adv. The NER sub-step takes
/// the next source batch; the two adversarial sub-steps share one mixed batch
/// with equal numbers of source and target sentences. The teacher ends holding the epoch with the best
/// target-dev F1 (the last epoch when `target_dev` is empty).
TeacherReport train_teacher(Teacher& teacher, const Corpus& source, const Corpus& target_unlabeled,
                            const Corpus& target_dev, const Vocabulary& vocab, const AdvConfig& cfg,
                            const TeacherHooks& hooks = {});

}  // namespace advpicker
