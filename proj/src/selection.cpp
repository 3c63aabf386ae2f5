#include "advpicker/selection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <unordered_map>

#include "advpicker/error.hpp"
#include "advpicker/kernels.hpp"

namespace advpicker {

Pooling parse_pooling(std::string_view name) {
  if (name == "mean") return Pooling::mean;
  if (name == "max") return Pooling::max;
  if (name == "first-token" || name == "first_token") return Pooling::first_token;
  throw ConfigError("unknown pooling '" + std::string(name) + "' (mean | max | first-token)");
}

std::string_view to_string(Pooling pooling) {
  switch (pooling) {
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
    case Pooling::first_token: return "first-token";
  }
  return "mean";
}

std::vector<TeacherOutput> pseudo_label(const Teacher& teacher, const Corpus& target, const Vocabulary& vocab) {
  auto batch = TokenBatch::build(target.sentences, vocab);
  std::vector<TeacherOutput> out;
  out.reserve(target.sentences.size());
  if (batch.rows() == 0) {
    for (const auto& s : target.sentences) out.push_back({s.id, Matrix(0, static_cast<Eigen::Index>(teacher.num_tags)), Vector()});
    return out;
  }
  Tensor h = teacher.encode(batch);
  const auto soft = split_rows(teacher.ner(h).value(), batch.lengths);
  const auto probs = split_rows(teacher.discriminate(h).value(), batch.lengths);
  for (std::size_t i = 0; i < target.sentences.size(); ++i) {
    out.push_back({target.sentences[i].id, soft[i], probs[i].col(0)});
  }
  return out;
}

double sentence_source_prob(std::span<const double> token_probs, Pooling pooling) {
  if (token_probs.empty()) throw EmptyInput("sentence_source_prob: sentence has no tokens");
  switch (pooling) {
    case Pooling::max: return *std::max_element(token_probs.begin(), token_probs.end());
    case Pooling::first_token: return token_probs.front();
    case Pooling::mean: break;
  }
  return std::accumulate(token_probs.begin(), token_probs.end(), 0.0) / static_cast<double>(token_probs.size());
}

double sentence_source_prob(const Vector& token_probs, Pooling pooling) {
  return sentence_source_prob(std::span<const double>(token_probs.data(), static_cast<std::size_t>(token_probs.size())),
                              pooling);
}

double l_score(double source_prob) { return 1.0 - std::abs(source_prob - 0.5); }

double confidence_sum(const Matrix& soft_labels) { return kernels::max_confidence_sum(soft_labels); }

std::vector<PseudoLabeledSentence> merge_seeds(std::span<const std::vector<TeacherOutput>> per_seed,
                                               const Corpus& target, Pooling pooling) {
  if (per_seed.empty()) throw EmptyInput("merge_seeds: no teacher outputs");
  const std::size_t n = target.sentences.size();
  for (std::size_t k = 0; k < per_seed.size(); ++k) {
    if (per_seed[k].size() != n) {
      throw AlignmentError("merge_seeds: seed " + std::to_string(k) + " has " + std::to_string(per_seed[k].size()) +
                           " outputs for " + std::to_string(n) + " sentences");
    }
  }
  std::vector<PseudoLabeledSentence> merged;
  merged.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sentence = target.sentences[i];
    std::size_t best = 0;
    double best_conf = -1.0;
    for (std::size_t k = 0; k < per_seed.size(); ++k) {
      const auto& o = per_seed[k][i];
      if (o.id != sentence.id || static_cast<std::size_t>(o.soft_labels.rows()) != sentence.size()) {
        throw AlignmentError("merge_seeds: seed " + std::to_string(k) + " misaligned at sentence " +
                             std::to_string(sentence.id));
      }
      const double c = confidence_sum(o.soft_labels);
      if (c > best_conf) {
        best_conf = c;
        best = k;
      }
    }
    const auto& win = per_seed[best][i];
    PseudoLabeledSentence p;
    p.sentence = sentence;
    p.sentence.gold_tags.reset();
    p.soft_labels = win.soft_labels;
    p.source_prob = sentence_source_prob(win.token_source_prob, pooling);
    p.l_score = l_score(p.source_prob);
    p.confidence_sum = best_conf;
    p.seed_index = best;
    merged.push_back(std::move(p));
  }
  return merged;
}

std::vector<std::int64_t> select_top_rho_ids(std::span<const ScoredSentence> items, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
  if (items.empty()) throw EmptyInput("select_top_rho: no items");
  std::vector<ScoredSentence> sorted(items.begin(), items.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ScoredSentence& a, const ScoredSentence& b) {
    if (a.l_score != b.l_score) return a.l_score > b.l_score;
    return a.id < b.id;
  });
  // rho * n can land a hair above an integer in floating point
  const double want = rho * static_cast<double>(sorted.size());
  auto k = static_cast<std::size_t>(std::ceil(want - 1e-9 * std::max(1.0, want)));
  k = std::clamp<std::size_t>(k, 1, sorted.size());
  std::vector<std::int64_t> ids;
  ids.reserve(k);
  for (std::size_t i = 0; i < k; ++i) ids.push_back(sorted[i].id);
  return ids;
}

SelectionResult select_top_rho(std::vector<PseudoLabeledSentence> items, double rho) {
  std::vector<ScoredSentence> scored;
  scored.reserve(items.size());
  for (const auto& p : items) scored.push_back({p.sentence.id, p.l_score});
  const auto ids = select_top_rho_ids(scored, rho);

  std::unordered_map<std::int64_t, std::size_t> rank;
  for (std::size_t i = 0; i < ids.size(); ++i) rank[ids[i]] = i;
  SelectionResult result;
  result.rho = rho;
  result.selected.resize(ids.size());
  for (auto& p : items) {
    auto it = rank.find(p.sentence.id);
    if (it != rank.end()) {
      result.selected[it->second] = std::move(p);
    } else {
      result.rejected.push_back(std::move(p));
    }
  }
  return result;
}

// --- manifest / soft labels ----------------------------------------------------------

void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["source_prob"] = r.source_prob;
    j["l_score"] = r.l_score;
    j["selected"] = r.selected;
    j["seed"] = r.seed;
    j["confidence_sum"] = r.confidence_sum;
    out << j.dump() << '\n';
  }
  if (!out) throw IOError("write failed: " + path.string());
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::int64_t>(), j.at("source_prob").get<double>(), j.at("l_score").get<double>(),
                     j.at("selected").get<bool>(), j.at("seed").get<std::uint64_t>(),
                     j.at("confidence_sum").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(lineno, std::string("bad manifest record: ") + e.what());
    }
  }
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little, "soft-label store assumes little-endian");
constexpr char kSoftMagic[4] = {'A', 'P', 'S', 'L'};
constexpr std::uint32_t kSoftVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IOError("truncated soft-label store " + path.string());
  return v;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

void write_soft_labels(std::span<const PseudoLabeledSentence> items, const std::filesystem::path& path) {
  std::vector<const PseudoLabeledSentence*> sorted;
  for (const auto& p : items) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->sentence.id < b->sentence.id; });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  out.write(kSoftMagic, sizeof(kSoftMagic));
  put<std::uint32_t>(out, kSoftVersion);
  put<std::uint64_t>(out, sorted.size());
  for (const auto* p : sorted) {
    const RowMajor rm = p->soft_labels;
    put<std::int64_t>(out, p->sentence.id);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(rm.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(rm.cols()));
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * 8));
  }
  if (!out) throw IOError("write failed: " + path.string());
}

std::map<std::int64_t, Matrix> read_soft_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kSoftMagic, 4) != 0) {
    throw IOError("not a soft-label store: " + path.string());
  }
  if (get<std::uint32_t>(in, path) != kSoftVersion) throw IOError("unsupported soft-label store version");
  const auto n = get<std::uint64_t>(in, path);
  std::map<std::int64_t, Matrix> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto id = get<std::int64_t>(in, path);
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in, path));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in, path));
    RowMajor rm(rows, cols);
    if (rm.size() > 0 && !in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * 8))) {
      throw IOError("truncated soft-label store " + path.string());
    }
    out.emplace(id, Matrix(rm));
  }
  return out;
}

std::vector<ManifestRecord> manifest_records(const SelectionResult& result, std::span<const std::uint64_t> seeds) {
  std::vector<ManifestRecord> out;
  auto add = [&](const PseudoLabeledSentence& p, bool selected) {
    const std::uint64_t seed = p.seed_index < seeds.size() ? seeds[p.seed_index] : p.seed_index;
    out.push_back({p.sentence.id, p.source_prob, p.l_score, selected, seed, p.confidence_sum});
  };
  for (const auto& p : result.selected) add(p, true);
  for (const auto& p : result.rejected) add(p, false);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

SelectionResult load_selection(std::span<const ManifestRecord> records, const std::map<std::int64_t, Matrix>& soft,
                               const Corpus& target, double rho) {
  std::unordered_map<std::int64_t, const Sentence*> by_id;
  for (const auto& s : target.sentences) by_id[s.id] = &s;
  std::vector<PseudoLabeledSentence> items;
  items.reserve(records.size());
  for (const auto& r : records) {
    auto s = by_id.find(r.id);
    auto m = soft.find(r.id);
    if (s == by_id.end() || m == soft.end()) {
      throw AlignmentError("selection manifest references unknown sentence " + std::to_string(r.id));
    }
    if (static_cast<std::size_t>(m->second.rows()) != s->second->size()) {
      throw AlignmentError("soft labels for sentence " + std::to_string(r.id) + " do not match its length");
    }
    PseudoLabeledSentence p;
    p.sentence = *s->second;
    p.sentence.gold_tags.reset();
    p.soft_labels = m->second;
    p.source_prob = r.source_prob;
    p.l_score = r.l_score;
    p.confidence_sum = r.confidence_sum;
    items.push_back(std::move(p));
  }
  return select_top_rho(std::move(items), rho);
}

}  // namespace advpicker
