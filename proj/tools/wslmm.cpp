#include <CLI11.hpp>

#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "wslmm/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"wslmm: weakly supervised localization with min-max entropy"};
  app.require_subcommand(1);

  std::string config, ckpt, data, out, spec;
  bool log_erasing = false;
  std::vector<std::string> images;

  auto* train = app.add_subcommand("train", "train from a key=value config");
  train->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
  train->add_flag("--log-erasing", log_erasing, "write the per-step erasing log as CSV");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset folder");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "dataset root")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", out, "output directory")->required();

  auto* predict = app.add_subcommand("predict", "write masks and labels for images");
  predict->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out, "output directory")->required();
  predict->add_option("images", images, "input images")->required();

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  synth->add_option("--spec", spec, "spec file")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      wsl::cmd_train(config, log_erasing, std::cout);
    } else if (*eval) {
      wsl::cmd_eval(ckpt, data, out, std::cout);
    } else if (*predict) {
      std::vector<std::filesystem::path> paths(images.begin(), images.end());
      wsl::cmd_predict(ckpt, out, paths, std::cout);
    } else if (*synth) {
      wsl::cmd_synth(spec, out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
