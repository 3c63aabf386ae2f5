#include <doctest.h>

#include <cmath>
#include <numbers>

#include "advpicker/adversarial.hpp"
#include "advpicker/error.hpp"
#include "oracles.hpp"

using namespace advpicker;

namespace {

bool same_component(const ParamStore& a, const ParamStore& b, const std::string& component) {
  const auto& x = a.component(component);
  const auto& y = b.component(component);
  for (const auto& [name, t] : x) {
    if (t.value() != y.at(name).value()) return false;
  }
  return true;
}

bool same_store(const ParamStore& a, const ParamStore& b) {
  for (const auto& c : a.components()) {
    if (!same_component(a, b, c)) return false;
  }
  return true;
}

struct Toy {
  BilingualCorpus train;
  Corpus dev;
  Vocabulary vocab;
  EncoderConfig enc;

  Toy() {
    SynthSpec spec;
    spec.sentences = 60;
    train = generate_bilingual(spec);
    spec.seed = 9;
    spec.sentences = 20;
    dev = generate_bilingual(spec).target;
    const Corpus* corpora[] = {&train.source, &train.target};
    vocab = Vocabulary::build(corpora);
    enc = {.vocab_size = vocab.size(), .embed_dim = 8, .window = 2};
  }
  Teacher teacher(std::uint64_t seed = 1) const {
    return Teacher::create(enc, {.hidden_dim = 6}, train.source.label_set.size(), seed);
  }
  AdvConfig cfg() const { return {.batch_size = 8, .epochs = 2, .lr_ner = 5e-3, .lr_adv = 1e-3}; }
};

}  // namespace

TEST_CASE("NER loss") {
  std::vector<int> gold = {0, 3, 4};
  Matrix onehot = Matrix::Zero(3, 9);
  for (int i = 0; i < 3; ++i) onehot(i, gold[static_cast<std::size_t>(i)]) = 1.0;
  CHECK(loss_ner(Tensor(onehot), gold).item() == doctest::Approx(0.0));
  CHECK(loss_ner(Tensor(Matrix::Constant(3, 9, 1.0 / 9.0)), gold).item() == doctest::Approx(std::log(9.0)));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) CHECK(loss_ner(Tensor(oracle::random_distribution(rng, 3, 9)), gold).item() >= 0.0);
  const std::vector<int> short_gold = {0};
  CHECK_THROWS_AS(loss_ner(Tensor(onehot), short_gold), ShapeError);
}

TEST_CASE("language losses") {
  const std::vector<double> y = {1.0, 0.0, 1.0};
  const std::vector<double> flipped = {0.0, 1.0, 0.0};
  Matrix half = Matrix::Constant(3, 1, 0.5);
  CHECK(loss_dis(Tensor(half), y).item() == doctest::Approx(std::numbers::ln2));
  CHECK(loss_enc(Tensor(half), flipped).item() == doctest::Approx(std::numbers::ln2));

  Matrix near(3, 1);
  near << 1.0 - 1e-9, 1e-9, 1.0 - 1e-9;
  CHECK(loss_dis(Tensor(near), y).item() < 1e-6);
  Matrix near_flipped = Matrix::Ones(3, 1) - near;
  CHECK(loss_enc(Tensor(near_flipped), flipped).item() < 1e-6);

  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const Matrix p = oracle::random_matrix(rng, 3, 1, 0.01, 0.99);
    CHECK(loss_enc(Tensor(p), flipped).item() == loss_dis(Tensor(p), flipped).item());
  }

  Tensor p(Matrix::Constant(3, 1, 0.3), true);
  backward(loss_dis(p, y));
  const Matrix g = p.grad();
  CHECK(g(0, 0) < 0.0);
  CHECK(g(2, 0) < 0.0);
  CHECK(g(1, 0) > 0.0);
}

TEST_CASE("declared components per sub-step") {
  using V = std::vector<std::string>;
  CHECK(updated_components(SubStep::ner) == V{components::encoder, components::ner});
  CHECK(updated_components(SubStep::encoder) == V{components::encoder});
  CHECK(updated_components(SubStep::discriminator) == V{components::discriminator});
}

TEST_CASE("sub-steps touch only their own components") {
  Toy toy;
  auto teacher = toy.teacher();
  std::size_t seen[3] = {0, 0, 0};
  TeacherHooks hooks;
  hooks.check_purity = true;
  hooks.on_substep = [&](SubStep step, const ParamStore& before, const ParamStore& after) {
    ++seen[static_cast<int>(step)];
    switch (step) {
      case SubStep::ner:
        CHECK(same_component(before, after, components::discriminator));
        CHECK_FALSE(same_component(before, after, components::ner));
        break;
      case SubStep::encoder:
        CHECK(same_component(before, after, components::discriminator));
        CHECK(same_component(before, after, components::ner));
        CHECK_FALSE(same_component(before, after, components::encoder));
        break;
      case SubStep::discriminator:
        CHECK(same_component(before, after, components::encoder));
        CHECK(same_component(before, after, components::ner));
        CHECK_FALSE(same_component(before, after, components::discriminator));
        break;
    }
  };
  const auto report = train_teacher(teacher, toy.train.source, toy.train.target.unlabeled(), toy.dev, toy.vocab,
                                    toy.cfg(), hooks);
  CHECK(seen[0] > 0);
  CHECK(seen[0] == seen[1]);
  CHECK(seen[1] == seen[2]);
  CHECK(report.substeps_checked == seen[0] + seen[1] + seen[2]);
  CHECK(report.purity_violations == 0);
}

TEST_CASE("zero adversarial rate leaves the discriminator at its initial values") {
  Toy toy;
  auto teacher = toy.teacher();
  const ParamStore start = teacher.params;
  auto cfg = toy.cfg();
  cfg.lr_adv = 0.0;
  TeacherHooks hooks;
  hooks.check_purity = true;
  const auto report = train_teacher(teacher, toy.train.source, toy.train.target.unlabeled(), toy.dev, toy.vocab, cfg,
                                    hooks);
  CHECK(same_component(start, teacher.params, components::discriminator));
  CHECK_FALSE(same_component(start, teacher.params, components::encoder));
  CHECK(report.purity_violations == 0);
  for (const auto& e : report.epochs) {
    CHECK_FALSE(e.loss_enc.has_value());
    CHECK_FALSE(e.loss_dis.has_value());
  }
}

TEST_CASE("training is reproducible") {
  Toy toy;
  auto a = toy.teacher(3);
  auto b = toy.teacher(3);
  const auto ra = train_teacher(a, toy.train.source, toy.train.target.unlabeled(), toy.dev, toy.vocab, toy.cfg());
  const auto rb = train_teacher(b, toy.train.source, toy.train.target.unlabeled(), toy.dev, toy.vocab, toy.cfg());
  CHECK(same_store(a.params, b.params));
  REQUIRE(ra.epochs.size() == rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    CHECK(ra.epochs[i].loss_ner == rb.epochs[i].loss_ner);
    CHECK(ra.epochs[i].loss_dis == rb.epochs[i].loss_dis);
  }
}

TEST_CASE("report tracks the best dev epoch") {
  Toy toy;
  auto teacher = toy.teacher();
  auto cfg = toy.cfg();
  cfg.epochs = 4;
  std::vector<EpochMetrics> streamed;
  TeacherHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) { streamed.push_back(m); };
  const auto report =
      train_teacher(teacher, toy.train.source, toy.train.target.unlabeled(), toy.dev, toy.vocab, cfg, hooks);
  REQUIRE(report.epochs.size() == 4);
  CHECK(streamed.size() == 4);
  double best = -1.0;
  for (const auto& e : report.epochs) best = std::max(best, e.dev_f1);
  CHECK(report.best_dev_f1 == best);
  CHECK(report.epochs[report.best_epoch - 1].dev_f1 == best);
  CHECK(report.epochs.back().loss_ner < report.epochs.front().loss_ner);
}

TEST_CASE("config validation") {
  AdvConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AdvConfig{};
  cfg.lr_ner = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AdvConfig{};
  cfg.lr_adv = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
