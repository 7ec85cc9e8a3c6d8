// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "msm/commands.hpp"

#ifndef MSM_GOLDEN_DIR
#define MSM_GOLDEN_DIR "tests/golden"
#endif

int main(int argc, char** argv) {
  using namespace msm::cli;
  CLI::App app{"msm: multi-shot attention layouts, masks, oracles and metrics"};
  app.require_subcommand(1);
  RunConfig cfg;
  cfg.golden_dir = MSM_GOLDEN_DIR;

  const std::map<std::string, msm::Precision> precisions{{"f32", msm::Precision::f32},
                                                         {"f64", msm::Precision::f64}};
  const std::map<std::string, FieldKind> fields{{"linear", FieldKind::linear},
                                                {"constant", FieldKind::constant}};

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", cfg.config, "shot-plan JSON")->required();
  };
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", cfg.out, "output directory"); };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", cfg.seed, "synthetic data seed"); };

  auto* compile = app.add_subcommand("compile", "write layout, RoPE table and mask artifacts");
  add_config(compile);
  add_out(compile);

  auto* forward = app.add_subcommand("demo-forward", "forward pass vs naive oracle on seeded data");
  add_config(forward);
  add_seed(forward);
  add_out(forward);
  forward->add_option("--precision", cfg.precision, "f32 or f64")
      ->transform(CLI::CheckedTransformer(precisions, CLI::ignore_case));

  auto* sample = app.add_subcommand("sample", "Euler sampler on a synthetic velocity field");
  add_config(sample);
  add_seed(sample);
  add_out(sample);
  sample->add_option("--steps", cfg.steps, "sampling steps");
  sample->add_option("--cfg-scale", cfg.cfg_scale, "guidance scale");
  sample->add_option("--field", cfg.field, "linear or constant")
      ->transform(CLI::CheckedTransformer(fields, CLI::ignore_case));

  auto* metrics = app.add_subcommand("metrics", "grounding mIoU and transition deviation");
  metrics->add_option("--pred", cfg.pred, "predicted records (JSONL)")->required();
  metrics->add_option("--gt", cfg.gt, "ground-truth records (JSONL)")->required();
  add_out(metrics);

  auto* selftest = app.add_subcommand("selftest", "run every property check");
  selftest->add_option("--golden-dir", cfg.golden_dir, "golden vector root");

  auto* golden = app.add_subcommand("golden", "verify golden vectors");
  golden->add_option("--golden-dir", cfg.golden_dir, "golden vector root");
  golden->add_flag("--regen-golden", cfg.regen_golden, "overwrite the stored vectors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalidInput;
  }

  return guarded([&] {
    if (*compile) return cmd_compile(cfg, std::cout);
    if (*forward) return cmd_demo_forward(cfg, std::cout);
    if (*sample) return cmd_sample(cfg, std::cout);
    if (*metrics) return cmd_metrics(cfg, std::cout);
    if (*selftest) return cmd_selftest(cfg, std::cout);
    return cmd_golden(cfg, std::cout);
  }, std::cerr);
}
