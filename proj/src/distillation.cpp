#include "advpicker/distillation.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "advpicker/error.hpp"
#include "advpicker/evaluation.hpp"

namespace advpicker {

void KDConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("kd.lr must be positive");
  if (batch_size < 1) throw ConfigError("kd.batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("kd.weight_decay must be non-negative");
}

Tensor loss_kd(const Tensor& student_probs, const Tensor& soft_labels) { return mse(student_probs, soft_labels); }

Student train_student(std::span<const PseudoLabeledSentence> subset, const KDConfig& cfg, const Corpus& dev,
                      const Vocabulary& vocab, const EncoderConfig& encoder, std::size_t num_tags,
                      StudentReport* report, const std::function<void(const StudentEpoch&)>& on_epoch) {
  cfg.validate();
  if (subset.empty()) throw EmptyInput("train_student: empty training subset");
  for (const auto& p : subset) {
    if (p.sentence.gold_tags) {
      throw LabelLeak("train_student: sentence " + std::to_string(p.sentence.id) + " carries gold tags");
    }
    if (static_cast<std::size_t>(p.soft_labels.rows()) != p.sentence.size() ||
        static_cast<std::size_t>(p.soft_labels.cols()) != num_tags) {
      throw ShapeError("train_student: soft labels of sentence " + std::to_string(p.sentence.id) +
                       " do not match its shape");
    }
  }

  Student student = Student::create(encoder, num_tags, cfg.seed);
  AdamW opt({components::student}, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed ^ 0x9fb21c651e98df25ULL);
  std::vector<std::size_t> order(subset.size());
  std::iota(order.begin(), order.end(), 0);

  StudentReport local;
  StudentReport& rep = report ? *report : local;
  rep = StudentReport{};
  ParamStore best = student.params;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Sentence*> sentences;
      for (std::size_t j = start; j < end; ++j) sentences.push_back(&subset[order[j]].sentence);
      auto batch = TokenBatch::build(sentences, vocab, cfg.max_len);
      Matrix soft(static_cast<Eigen::Index>(batch.rows()), static_cast<Eigen::Index>(num_tags));
      Eigen::Index row = 0;
      for (std::size_t j = start; j < end; ++j) {
        const auto n = static_cast<Eigen::Index>(batch.lengths[j - start]);
        soft.middleRows(row, n) = subset[order[j]].soft_labels.topRows(n);
        row += n;
      }
      student.params.zero_grad();
      Tensor loss = loss_kd(student_forward(student, batch), Tensor(std::move(soft)));
      backward(loss);
      opt.step(student.params);
      total += loss.item();
      ++batches;
    }
    StudentEpoch e{epoch, total / static_cast<double>(batches), 0.0};
    if (!dev.sentences.empty()) e.dev_f1 = evaluate_probs(dev, predict_proba(student, dev.sentences, vocab)).f1;
    if (dev.sentences.empty() || e.dev_f1 > rep.best_dev_f1) {
      rep.best_dev_f1 = e.dev_f1;
      rep.best_epoch = epoch;
      best = student.params;
    }
    rep.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  if (cfg.epochs > 0) student.params = std::move(best);
  return student;
}

}  // namespace advpicker
