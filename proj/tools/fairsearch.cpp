#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "fairsearch/commands.hpp"

using namespace fairsearch;

int main(int argc, char** argv) {
  CLI::App app{"Differentiable architecture search on long-tailed image data"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  CommandOptions opts;
  std::string config, out, data, genotype, checkpoint, mode, rule;
  std::uint64_t seed = 0;
  int epochs = 0, stop_after = 0;
  std::size_t retrain_cells = 0;
  bool print_config = false;

  const std::map<std::string, SearchMode> modes{
      {"darts", SearchMode::darts}, {"fairdarts", SearchMode::fairdarts}, {"ssf", SearchMode::ssf}};
  const std::map<std::string, DiscretizeRule> rules{{"argmax", DiscretizeRule::argmax},
                                                    {"threshold", DiscretizeRule::threshold},
                                                    {"darts-top2", DiscretizeRule::darts_top2}};

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--out", out, "Output directory");
    sub->add_flag("--print-config", print_config, "Print the effective configuration and exit");
  };
  auto add_data = [&](CLI::App* sub) { sub->add_option("--data", data, "Dataset directory from make-lt"); };
  auto add_training = [&](CLI::App* sub) {
    sub->add_option("--mode", mode, "Search mode")->check(CLI::IsMember({"darts", "fairdarts", "ssf"}));
    sub->add_option("--epochs", epochs, "Number of epochs")->check(CLI::NonNegativeNumber);
    sub->add_flag("--resume", opts.resume, "Continue from the checkpoint in the output directory");
    sub->add_option("--stop-after", stop_after, "Stop after this many epochs (resumable)")
        ->check(CLI::PositiveNumber);
  };

  auto* make_lt = app.add_subcommand("make-lt", "Write the long-tailed train and test splits");
  add_common(make_lt);

  auto* search = app.add_subcommand("search", "Run the bilevel architecture search");
  add_common(search);
  add_data(search);
  add_training(search);
  search->add_option("--discretize", rule, "Discretization rule for genotype.json")
      ->check(CLI::IsMember({"argmax", "threshold", "darts-top2"}));

  auto* retrain = app.add_subcommand("retrain", "Train the child network of a genotype");
  add_common(retrain);
  add_data(retrain);
  add_training(retrain);
  retrain->add_option("--genotype", genotype, "Genotype file (default: <out>/genotype.json)");
  retrain->add_option("--retrain-cells", retrain_cells, "Child network depth")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  add_common(eval);
  add_data(eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default: <out>/child.ckpt)");
  eval->add_option("--split", opts.split, "train, test_balance, test_lt or a .bin file path");
  eval->add_flag("--force", opts.force, "Evaluate even when the data hashes differ");

  auto* grad = app.add_subcommand("grad-check", "Compare analytic and numerical gradients");
  grad->add_option("--scope", opts.scope, "primitive, network or all")
      ->check(CLI::IsMember({"primitive", "network", "all"}));
  grad->add_option("--grad-seeds", opts.grad_seeds, "Random seeds per case")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  auto given = [&](const char* name) { return sub->get_option_no_throw(name) && sub->count(name) > 0; };
  if (given("--config")) opts.config_path = config;
  if (given("--seed")) opts.seed = seed;
  if (given("--out")) opts.out = out;
  if (given("--data")) opts.data = data;
  if (given("--mode")) opts.mode = modes.at(mode);
  if (given("--epochs")) opts.epochs = epochs;
  if (given("--stop-after")) opts.stop_after = stop_after;
  if (given("--discretize")) opts.discretize = rules.at(rule);
  if (given("--genotype")) opts.genotype = genotype;
  if (given("--retrain-cells")) opts.retrain_cells = retrain_cells;
  if (given("--checkpoint")) opts.checkpoint = checkpoint;

  if (print_config) {
    try {
      std::cout << config_to_json(resolve_config(command, opts)).dump(2) << "\n";
      return kExitOk;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitUsage;
    }
  }
  return run_command(command, opts, std::cout, std::cerr);
}
