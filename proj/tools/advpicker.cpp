// Command-line driver: generate | train-teacher | select | distill | eval.

#include <CLI11.hpp>
#include <iostream>

#include "advpicker/error.hpp"
#include "advpicker/experiment.hpp"

using namespace advpicker;

namespace {

enum ExitCode { ok = 0, usage = 2, failure = 1, invariant = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial teacher training, language-agnostic data selection and distillation for cross-lingual NER"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  CommandOptions opt;
  std::uint64_t seed = 0;
  std::string adversarial = "on";
  double rho = 0.0;

  app.add_option("--config", config_path, "Experiment config file (defaults apply when omitted)");
  auto add_seed = [&](CLI::App* cmd) { return cmd->add_option("--seed", seed, "Run a single seed"); };
  auto add_adv = [&](CLI::App* cmd) {
    cmd->add_option("--adversarial", adversarial, "Adversarial teachers (on) or the source-only baseline (off)")
        ->check(CLI::IsMember({"on", "off"}));
  };
  auto add_force = [&](CLI::App* cmd) { cmd->add_flag("--force", opt.force, "Overwrite existing artifacts"); };
  auto add_rho = [&](CLI::App* cmd) {
    return cmd->add_option("--rho", rho, "Fraction of target sentences kept")->check(CLI::Range(0.0, 1.0));
  };

  auto* generate = app.add_subcommand("generate", "Write the synthetic bilingual benchmark as CoNLL files");
  auto* gen_seed = add_seed(generate);
  add_force(generate);

  auto* teacher = app.add_subcommand("train-teacher", "Train teacher checkpoints, one per seed");
  auto* teacher_seed = add_seed(teacher);
  add_adv(teacher);
  add_force(teacher);

  auto* select = app.add_subcommand("select", "Pseudo-label target train with the teacher ensemble and keep the top rho");
  add_adv(select);
  auto* select_rho = add_rho(select);
  add_force(select);

  auto* distill = app.add_subcommand("distill", "Distil students from the selected soft labels");
  auto* distill_seed = add_seed(distill);
  distill->add_flag("--all-data", opt.all_data, "Distil on every pseudo-labeled sentence");
  auto* distill_rho = add_rho(distill);
  add_force(distill);

  auto* eval = app.add_subcommand("eval", "Score students or the teacher ensemble on target test");
  auto* eval_seed = add_seed(eval);
  add_adv(eval);
  eval->add_flag("--all-data", opt.all_data, "Evaluate the students distilled on all data");
  eval->add_flag("--no-kd", opt.no_kd, "Evaluate the teacher ensemble directly");
  eval->add_flag("--split", opt.split, "Also report the Selected/Other partition of the test set");
  auto* eval_rho = add_rho(eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }

  opt.adversarial = adversarial == "on";
  for (auto* o : {gen_seed, teacher_seed, distill_seed, eval_seed}) {
    if (o->count() > 0) opt.seed = seed;
  }
  for (auto* o : {select_rho, distill_rho, eval_rho}) {
    if (o->count() > 0) opt.rho = rho;
  }

  try {
    const ExperimentConfig cfg = config_path.empty() ? parse_config("") : load_config(config_path);
    Pipeline pipeline(cfg, std::cerr);
    if (*generate) pipeline.generate(opt);
    else if (*teacher) pipeline.train_teacher(opt);
    else if (*select) pipeline.select(opt);
    else if (*distill) pipeline.distill(opt);
    else if (*eval) std::cout << pipeline.eval(opt) << "\n";
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return invariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failure;
  }
  return ok;
}
