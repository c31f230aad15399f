// ftattr: train, gold, attribute, report, all.
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ftattr/config.hpp"
#include "ftattr/error.hpp"
#include "ftattr/pipeline.hpp"

namespace {

int run(const std::string& command, ftattr::RunConfig cfg) {
  if (command == "train") return ftattr::cmd_train(cfg, std::cout);
  if (command == "gold") return ftattr::cmd_gold(cfg, std::cout);
  if (command == "attribute") return ftattr::cmd_attribute(cfg, std::cout);
  if (command == "report") return ftattr::cmd_report(cfg, std::cout);
  return ftattr::cmd_all(cfg, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Final-model-only training data attribution: gold standards and approximations"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::size_t workers = 0;
  std::size_t seed_count = 0;
  std::string output;
  for (const char* name : {"train", "gold", "attribute", "report", "all"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--workers", workers, "Worker threads (overrides the config)");
    sub->add_option("--seed-count", seed_count, "Number of further-training seeds r (overrides the config)");
    sub->add_option("--output", output, "Output directory (overrides the config)");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    ftattr::RunConfig cfg = ftattr::load_config(config_path);
    if (workers > 0) cfg.workers = workers;
    if (seed_count > 0) cfg.seeds = seed_count;
    if (!output.empty()) cfg.output = output;
    cfg.validate();
    return run(command, cfg);
  } catch (const ftattr::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 1;
  } catch (const ftattr::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
