#include "advpicker/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "advpicker/error.hpp"

namespace advpicker {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

double to_double(const std::string& v) {
  std::size_t pos = 0;
  const double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument(v);
  return d;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument(v);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <typename T>
Field size_field(T ExperimentConfig::*section, std::size_t T::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) { c.*section.*member = static_cast<std::size_t>(to_u64(v)); },
          [=](const ExperimentConfig& c) { return std::to_string(c.*section.*member); }};
}

template <typename T>
Field double_field(T ExperimentConfig::*section, double T::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) { c.*section.*member = to_double(v); },
          [=](const ExperimentConfig& c) { return fmt(c.*section.*member); }};
}

template <typename T>
Field path_field(T ExperimentConfig::*section, std::filesystem::path T::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) { c.*section.*member = v; },
          [=](const ExperimentConfig& c) { return (c.*section.*member).string(); }};
}

/// Entity templates are configured uniformly across types.
Field template_field(std::size_t EntityTemplate::*member) {
  return {[=](ExperimentConfig& c, const std::string& v) {
            for (auto& t : c.synth.entity_templates) t.*member = static_cast<std::size_t>(to_u64(v));
          },
          [=](const ExperimentConfig& c) { return std::to_string(c.synth.entity_templates.front().*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"output.dir", {[](C& c, const std::string& v) { c.output_dir = v; }, [](const C& c) { return c.output_dir.string(); }}},
      {"data.format",
       {[](C& c, const std::string& v) {
          if (v == "synthetic") c.data = DataSource::synthetic;
          else if (v == "conll") c.data = DataSource::conll;
          else throw std::invalid_argument(v);
        },
        [](const C& c) { return std::string(c.data == DataSource::synthetic ? "synthetic" : "conll"); }}},
      {"data.source_train", path_field(&C::conll, &ConllPaths::source_train)},
      {"data.source_dev", path_field(&C::conll, &ConllPaths::source_dev)},
      {"data.source_test", path_field(&C::conll, &ConllPaths::source_test)},
      {"data.target_train", path_field(&C::conll, &ConllPaths::target_train)},
      {"data.target_dev", path_field(&C::conll, &ConllPaths::target_dev)},
      {"data.target_test", path_field(&C::conll, &ConllPaths::target_test)},
      {"data.entity_types",
       {[](C& c, const std::string& v) { c.conll.entity_types = split_list(v); },
        [](const C& c) { return join(c.conll.entity_types); }}},
      {"synth.entity_types",
       {[](C& c, const std::string& v) {
          const auto proto = c.synth.entity_templates.front();
          c.synth.entity_templates.clear();
          for (auto& type : split_list(v)) {
            auto t = proto;
            t.type = type;
            c.synth.entity_templates.push_back(t);
          }
          if (c.synth.entity_templates.empty()) throw std::invalid_argument(v);
        },
        [](const C& c) {
          std::vector<std::string> types;
          for (const auto& t : c.synth.entity_templates) types.push_back(t.type);
          return join(types);
        }}},
      {"synth.names_per_type", template_field(&EntityTemplate::names)},
      {"synth.triggers_per_type", template_field(&EntityTemplate::triggers)},
      {"synth.min_entity_length", template_field(&EntityTemplate::min_length)},
      {"synth.max_entity_length", template_field(&EntityTemplate::max_length)},
      {"synth.shared_vocab_size", size_field(&C::synth, &SynthSpec::shared_vocab_size)},
      {"synth.private_vocab_size", size_field(&C::synth, &SynthSpec::private_vocab_size)},
      {"synth.ambiguous_name_fraction", double_field(&C::synth, &SynthSpec::ambiguous_name_fraction)},
      {"synth.trigger_rate", double_field(&C::synth, &SynthSpec::trigger_rate)},
      {"synth.kappa", double_field(&C::synth, &SynthSpec::kappa)},
      {"synth.kappa_concentration", double_field(&C::synth, &SynthSpec::kappa_concentration)},
      {"synth.min_length", size_field(&C::synth, &SynthSpec::min_length)},
      {"synth.max_length", size_field(&C::synth, &SynthSpec::max_length)},
      {"synth.max_entities", size_field(&C::synth, &SynthSpec::max_entities)},
      {"synth.seed",
       {[](C& c, const std::string& v) { c.synth.seed = to_u64(v); }, [](const C& c) { return std::to_string(c.synth.seed); }}},
      {"synth.train_sentences", size_field(&C::sizes, &BenchmarkSizes::train)},
      {"synth.dev_sentences", size_field(&C::sizes, &BenchmarkSizes::dev)},
      {"synth.test_sentences", size_field(&C::sizes, &BenchmarkSizes::test)},
      {"encoder.embed_dim", size_field(&C::encoder, &EncoderConfig::embed_dim)},
      {"encoder.window", size_field(&C::encoder, &EncoderConfig::window)},
      {"discriminator.hidden_dim", size_field(&C::discriminator, &DiscriminatorConfig::hidden_dim)},
      {"adv.batch_size", size_field(&C::adv, &AdvConfig::batch_size)},
      {"adv.epochs", size_field(&C::adv, &AdvConfig::epochs)},
      {"adv.lr_ner", double_field(&C::adv, &AdvConfig::lr_ner)},
      {"adv.lr_adv", double_field(&C::adv, &AdvConfig::lr_adv)},
      {"adv.weight_decay", double_field(&C::adv, &AdvConfig::weight_decay)},
      {"adv.max_len", size_field(&C::adv, &AdvConfig::max_len)},
      {"selection.rho", {[](C& c, const std::string& v) { c.rho = to_double(v); }, [](const C& c) { return fmt(c.rho); }}},
      {"selection.pooling",
       {[](C& c, const std::string& v) { c.pooling = parse_pooling(v); },
        [](const C& c) { return std::string(to_string(c.pooling)); }}},
      {"selection.ensemble",
       {[](C& c, const std::string& v) { c.ensemble = static_cast<std::size_t>(to_u64(v)); },
        [](const C& c) { return std::to_string(c.ensemble); }}},
      {"kd.lr", double_field(&C::kd, &KDConfig::lr)},
      {"kd.epochs", size_field(&C::kd, &KDConfig::epochs)},
      {"kd.batch_size", size_field(&C::kd, &KDConfig::batch_size)},
      {"kd.weight_decay", double_field(&C::kd, &KDConfig::weight_decay)},
      {"kd.max_len", size_field(&C::kd, &KDConfig::max_len)},
      {"probe.epochs", size_field(&C::probe, &ProbeConfig::epochs)},
      {"probe.lr", double_field(&C::probe, &ProbeConfig::lr)},
      {"probe.hidden_dim", size_field(&C::probe, &ProbeConfig::hidden_dim)},
      {"probe.batch_tokens", size_field(&C::probe, &ProbeConfig::batch_tokens)},
      {"run.seeds",
       {[](C& c, const std::string& v) {
          c.seeds.clear();
          for (const auto& s : split_list(v)) c.seeds.push_back(to_u64(s));
        },
        [](const C& c) {
          std::vector<std::string> s;
          for (auto seed : c.seeds) s.push_back(std::to_string(seed));
          return join(s);
        }}},
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("run.seeds must not be empty");
  if (ensemble < 1) throw ConfigError("selection.ensemble must be >= 1");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("selection.rho must lie in (0, 1]");
  if (encoder.embed_dim < 1) throw ConfigError("encoder.embed_dim must be >= 1");
  discriminator.validate();
  adv.validate();
  kd.validate();
  if (data == DataSource::synthetic) synth.validate();
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::map<std::string, const Field*> by_key;
  for (const auto& [k, f] : fields()) by_key[k] = &f;

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw FormatError(lineno, "expected 'key = value'");
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw FormatError(lineno, "unknown config key '" + key + "'");
    try {
      it->second->set(cfg, value);
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(lineno, e.what());
    } catch (const std::exception&) {
      throw FormatError(lineno, "bad value '" + value + "' for " + key);
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace advpicker
