#pragma once

#include <functional>
#include <span>
#include <vector>

#include "advpicker/corpus.hpp"
#include "advpicker/models.hpp"
#include "advpicker/selection.hpp"

namespace advpicker {

struct KDConfig {
  double lr = 6e-5;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double weight_decay = 0.01;
  std::size_t max_len = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

/// (1/N) sum_i ||P_student[i] - soft[i]||^2 over the N tokens.
Tensor loss_kd(const Tensor& student_probs, const Tensor& soft_labels);

struct StudentEpoch {
  std::size_t epoch = 0;
  double loss_kd = 0.0;
  double dev_f1 = 0.0;
};

struct StudentReport {
  std::vector<StudentEpoch> epochs;
  std::size_t best_epoch = 0;
  double best_dev_f1 = -1.0;
};

/// Fits a fresh student to the soft labels of `subset` with AdamW on loss_kd
/// and keeps the epoch with the best target-dev F1 (the last epoch when `dev`
/// is empty). Throws EmptyInput on an empty subset and LabelLeak if any
/// training sentence still carries gold tags.
Student train_student(std::span<const PseudoLabeledSentence> subset, const KDConfig& cfg, const Corpus& dev,
                      const Vocabulary& vocab, const EncoderConfig& encoder, std::size_t num_tags,
                      StudentReport* report = nullptr,
                      const std::function<void(const StudentEpoch&)>& on_epoch = {});

}  // namespace advpicker
