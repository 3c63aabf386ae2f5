#include "advpicker/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "advpicker/selection.hpp"

namespace advpicker {

std::vector<EntitySpan> extract_spans(std::span<const TagId> tags, const LabelSet& label_set) {
  if (!validate_bio(tags, label_set)) throw InvalidBIO("extract_spans: tag sequence violates the BIO scheme");
  std::vector<EntitySpan> spans;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (!LabelSet::is_begin(tags[i])) continue;
    const int type = LabelSet::type_of(tags[i]);
    std::size_t end = i;
    while (end + 1 < tags.size() && tags[end + 1] == LabelSet::inside_tag(type)) ++end;
    spans.push_back({label_set.entity_types()[static_cast<std::size_t>(type)], i, end});
    i = end;
  }
  return spans;
}

Score Score::from(const Counts& c) {
  Score s;
  s.counts = c;
  s.precision = c.predicted > 0 ? static_cast<double>(c.correct) / static_cast<double>(c.predicted) : 0.0;
  s.recall = c.gold > 0 ? static_cast<double>(c.correct) / static_cast<double>(c.gold) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

EvalReport entity_f1(std::span<const std::vector<EntitySpan>> gold, std::span<const std::vector<EntitySpan>> pred) {
  if (gold.size() != pred.size()) {
    throw AlignmentError("entity_f1: " + std::to_string(gold.size()) + " gold vs " + std::to_string(pred.size()) +
                         " predicted sentences");
  }
  Counts total;
  std::map<std::string, Counts> by_type;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::set<EntitySpan> g(gold[i].begin(), gold[i].end());
    for (const auto& s : gold[i]) ++by_type[s.type].gold;
    for (const auto& s : pred[i]) {
      ++by_type[s.type].predicted;
      if (g.contains(s)) ++by_type[s.type].correct;
    }
  }
  EvalReport report;
  for (const auto& [type, c] : by_type) {
    total.gold += c.gold;
    total.predicted += c.predicted;
    total.correct += c.correct;
    report.per_type[type] = Score::from(c);
  }
  const auto s = Score::from(total);
  report.precision = s.precision;
  report.recall = s.recall;
  report.f1 = s.f1;
  report.counts = total;
  return report;
}

EvalReport evaluate_tags(const Corpus& gold, std::span<const std::vector<TagId>> predicted) {
  if (predicted.size() != gold.sentences.size()) {
    throw AlignmentError("evaluate_tags: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(gold.sentences.size()) + " sentences");
  }
  std::vector<std::vector<EntitySpan>> g, p;
  g.reserve(predicted.size());
  p.reserve(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& s = gold.sentences[i];
    if (!s.gold_tags) throw AlignmentError("sentence " + std::to_string(s.id) + " has no gold tags");
    if (predicted[i].size() != s.gold_tags->size()) {
      throw AlignmentError("sentence " + std::to_string(s.id) + ": prediction length differs");
    }
    g.push_back(extract_spans(*s.gold_tags, gold.label_set));
    p.push_back(extract_spans(predicted[i], gold.label_set));
  }
  return entity_f1(g, p);
}

std::vector<std::vector<TagId>> decode_all(std::span<const Matrix> probs, const LabelSet& label_set) {
  std::vector<std::vector<TagId>> out;
  out.reserve(probs.size());
  for (const auto& p : probs) out.push_back(viterbi_decode(p, label_set));
  return out;
}

EvalReport evaluate_probs(const Corpus& gold, std::span<const Matrix> probs) {
  const auto tags = decode_all(probs, gold.label_set);
  return evaluate_tags(gold, tags);
}

// --- probe ---------------------------------------------------------------------------

double probe_features(const Matrix& train_x, std::span<const double> train_y, const Matrix& test_x,
                      std::span<const double> test_y, const ProbeConfig& cfg) {
  if (static_cast<Eigen::Index>(train_y.size()) != train_x.rows() ||
      static_cast<Eigen::Index>(test_y.size()) != test_x.rows()) {
    throw AlignmentError("probe: labels do not align with feature rows");
  }
  if (train_x.cols() != test_x.cols()) throw ShapeError("probe: train/test feature widths differ");
  if (train_x.rows() == 0 || test_x.rows() == 0) throw EmptyInput("probe: empty train or test set");

  ParamStore store(cfg.seed);
  init_discriminator(store, "probe", static_cast<std::size_t>(train_x.cols()), {cfg.hidden_dim});
  AdamW opt({"probe"}, {.lr = cfg.lr});

  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_x.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_tokens);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      Matrix xb(static_cast<Eigen::Index>(end - start), train_x.cols());
      std::vector<double> yb;
      yb.reserve(end - start);
      for (std::size_t j = start; j < end; ++j) {
        xb.row(static_cast<Eigen::Index>(j - start)) = train_x.row(order[j]);
        yb.push_back(train_y[static_cast<std::size_t>(order[j])]);
      }
      Tensor loss = bce(discriminate(store, "probe", Tensor(std::move(xb))), yb);
      backward(loss);
      opt.step(store);
    }
  }
  const Matrix p = discriminate(store, "probe", Tensor(test_x)).value();
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const bool says_source = p(i, 0) >= 0.5;
    if (says_source == (test_y[static_cast<std::size_t>(i)] >= 0.5)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(p.rows());
}

namespace {

void append_features(const Teacher& teacher, const Corpus& corpus, const Vocabulary& vocab, double label,
                     std::vector<Matrix>& blocks, std::vector<double>& labels) {
  auto batch = TokenBatch::build(corpus.sentences, vocab);
  if (batch.rows() == 0) return;
  blocks.push_back(teacher.encode(batch).value());
  labels.insert(labels.end(), batch.rows(), label);
}

Matrix stack(const std::vector<Matrix>& blocks, Eigen::Index cols) {
  Eigen::Index rows = 0;
  for (const auto& b : blocks) rows += b.rows();
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return out;
}

}  // namespace

double probe_discriminator(const Teacher& teacher, const Corpus& source_train, const Corpus& target_train,
                           const Corpus& source_test, const Corpus& target_test, const Vocabulary& vocab,
                           const ProbeConfig& cfg) {
  const auto d = static_cast<Eigen::Index>(teacher.encoder.embed_dim);
  std::vector<Matrix> train_blocks, test_blocks;
  std::vector<double> train_y, test_y;
  append_features(teacher, source_train, vocab, 1.0, train_blocks, train_y);
  append_features(teacher, target_train, vocab, 0.0, train_blocks, train_y);
  append_features(teacher, source_test, vocab, 1.0, test_blocks, test_y);
  append_features(teacher, target_test, vocab, 0.0, test_blocks, test_y);
  return probe_features(stack(train_blocks, d), train_y, stack(test_blocks, d), test_y, cfg);
}

// --- split evaluation ------------------------------------------------------------------

SplitReport split_eval(const Corpus& test, std::span<const double> l_scores, std::span<const Matrix> probs,
                       double rho) {
  if (l_scores.size() != test.sentences.size() || probs.size() != test.sentences.size()) {
    throw AlignmentError("split_eval: scores/predictions do not align with the test corpus");
  }
  std::vector<ScoredSentence> items;
  items.reserve(l_scores.size());
  for (std::size_t i = 0; i < l_scores.size(); ++i) items.push_back({test.sentences[i].id, l_scores[i]});
  const auto chosen = select_top_rho_ids(items, rho);
  std::set<std::int64_t> selected(chosen.begin(), chosen.end());

  Corpus sel{.sentences = {}, .label_set = test.label_set, .split = test.split};
  Corpus oth = sel;
  std::vector<Matrix> sel_p, oth_p;
  SplitReport report;
  for (std::size_t i = 0; i < test.sentences.size(); ++i) {
    const auto& s = test.sentences[i];
    if (selected.contains(s.id)) {
      sel.sentences.push_back(s);
      sel_p.push_back(probs[i]);
      report.selected_ids.push_back(s.id);
    } else {
      oth.sentences.push_back(s);
      oth_p.push_back(probs[i]);
      report.other_ids.push_back(s.id);
    }
  }
  report.selected = evaluate_probs(sel, sel_p);
  report.other = evaluate_probs(oth, oth_p);
  return report;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double rank_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw AlignmentError("rank_correlation: length mismatch");
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const Eigen::Map<const Vector> a(rx.data(), static_cast<Eigen::Index>(rx.size()));
  const Eigen::Map<const Vector> b(ry.data(), static_cast<Eigen::Index>(ry.size()));
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  return denom > 0.0 ? da.dot(db) / denom : 0.0;
}

}  // namespace advpicker
