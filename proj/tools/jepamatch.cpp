// jepamatch: train, eval, gen-data, verify.
//
// Exit codes: 0 success, 1 failed verification or internal error,
// 2 invalid configuration / malformed file / bad arguments, 3 I/O failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "jepamatch/config.hpp"
#include "jepamatch/errors.hpp"
#include "jepamatch/trainer.hpp"
#include "jepamatch/verify/suites.hpp"

namespace jm = jepamatch;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

jm::RunConfig load_config(const std::string &path, std::optional<std::uint64_t> seed) {
  jm::RunConfig cfg = jm::load_run_config(path);
  if (seed)
    cfg.override_seed(*seed);
  return cfg;
}

int cmd_train(const std::string &config, const std::string &out,
              std::optional<std::uint64_t> seed) {
  jm::RunConfig cfg = load_config(config, seed);
  if (!out.empty())
    cfg.output_dir = out;
  const auto result = jm::run(cfg, cfg.output_dir);
  std::printf("test_acc=%.17g iterations=%zu out=%s\n", result.final_test_acc,
              cfg.train.total_iters, cfg.output_dir.c_str());
  return 0;
}

int cmd_eval(const std::string &checkpoint, const std::string &data) {
  const jm::ModelParams params = jm::load_checkpoint(checkpoint);
  const jm::Dataset split = jm::load_raw(data);
  const auto r = jm::evaluate(params, split);
  std::printf("accuracy=%.17g\n", r.accuracy);
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    std::printf("class %zu: accuracy=%.17g count=%zu\n", c, r.per_class[c],
                r.per_class_count[c]);
  return 0;
}

int cmd_gen_data(const std::string &config, const std::string &out, const std::string &split,
                 std::optional<std::uint64_t> seed) {
  const jm::RunConfig cfg = load_config(config, seed);
  const jm::Dataset ds =
      split == "test" ? jm::generate_test_split(cfg.dataset) : jm::generate(cfg.dataset);
  jm::save_raw(out, ds);
  std::printf("rows=%zu labeled=%zu dim=%zu classes=%zu imbalance=%.17g\n", ds.size(),
              ds.num_labeled(), ds.dim(), ds.num_classes,
              ds.num_unlabeled() ? ds.imbalance_factor() : 1.0);
  return 0;
}

int cmd_verify(const std::string &suite, const jm::verify::SuiteOptions &opts) {
  const auto checks = jm::verify::run_suite(suite, opts);
  for (const auto &c : checks)
    std::printf("%s\n", jm::verify::format_check(c).c_str());
  const bool ok = jm::verify::all_passed(checks);
  std::printf("suite %s %s\n", suite.c_str(), ok ? "PASS" : "FAIL");
  return ok ? 0 : kExitFailed;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"JEPAMatch semi-supervised training lab"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, data, split = "train", suite;
  std::optional<std::uint64_t> seed;
  jm::verify::SuiteOptions vopts;

  auto *train = app.add_subcommand("train", "Train a model and write a run directory");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--out", out, "Output directory (overrides output_dir)");
  train->add_option("--seed", seed, "Override dataset and training seed");

  auto *eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (.jmck)")->required();
  eval->add_option("--data", data, "Dataset (.jmds)")->required();

  auto *gen = app.add_subcommand("gen-data", "Generate a dataset file from a config");
  gen->add_option("--config", config, "Run config (JSON)")->required();
  gen->add_option("--out", out, "Output file (.jmds)")->required();
  gen->add_option("--split", split, "train or test")
      ->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--seed", seed, "Override dataset seed");

  auto *ver = app.add_subcommand("verify", "Run a verification suite");
  ver->add_option("--suite", suite, "gradcheck, sigreg-oracle, curriculum or e2e")
      ->required();
  ver->add_option("--seed", vopts.seed, "Suite seed");
  ver->add_option("--trials", vopts.trials, "Randomised trials per check");
  ver->add_flag("--corrupt-gradient", vopts.corrupt_gradients,
                "Negative control: perturb tape gradients before comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train)
      return cmd_train(config, out, seed);
    if (*eval)
      return cmd_eval(checkpoint, data);
    if (*gen)
      return cmd_gen_data(config, out, split, seed);
    return cmd_verify(suite, vopts);
  } catch (const jm::ConfigError &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const jm::FormatError &e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitConfig;
  } catch (const jm::IoError &e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const jm::DimensionError &e) {
    std::fprintf(stderr, "shape mismatch: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailed;
  }
}
