#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "edg/error.hpp"
#include "edg/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitExternal = 4;

int run(int argc, char** argv) {
  CLI::App app{"Error-decay active learning for sequence tagging"};
  app.require_subcommand(1);
  app.set_version_flag("--version", edg::kVersion);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Generate the synthetic tagging corpus");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  edg::SynthSizes sizes;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--train-tokens", sizes.train);
  gen->add_option("--validation-tokens", sizes.validation);
  gen->add_option("--test-tokens", sizes.test);
  gen->add_flag("--force", gen_force, "Replace a non-empty output directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run an active learning simulation");
  std::string sim_config, sim_out, sim_strategy;
  std::vector<std::string> sim_sets;
  std::optional<std::uint64_t> sim_seed;
  bool sim_force = false, sim_resume = false, sim_quiet = false;
  sim->add_option("--config", sim_config, "Run configuration (JSON)")->required();
  sim->add_option("--out", sim_out, "Run directory")->required();
  sim->add_option("--strategy", sim_strategy, "Override the strategy");
  sim->add_option("--seed", sim_seed, "Override the seed");
  sim->add_option("--set", sim_sets, "Override a config value: dotted.key=value");
  sim->add_flag("--force", sim_force, "Replace a non-empty run directory");
  sim->add_flag("--resume", sim_resume, "Continue from the last completed checkpoint");
  sim->add_flag("--quiet", sim_quiet);

  // fit-decay
  auto* fit = app.add_subcommand("fit-decay", "Fit error decay curves to a run history");
  std::string fit_history, fit_out, fit_partitions;
  fit->add_option("--history", fit_history, "history.jsonl")->required();
  fit->add_option("--out", fit_out, "Output directory")->required();
  fit->add_option("--partitions", fit_partitions, "Directory of partition files (exemplars)");
  std::uint64_t fit_seed = 0;
  fit->add_option("--seed", fit_seed, "Run seed; reproduces the run's own final fit");

  // export-curves
  auto* exp = app.add_subcommand("export-curves", "Write the curve table from history and fits");
  std::string exp_history, exp_fits, exp_partitions, exp_out;
  exp->add_option("--history", exp_history)->required();
  exp->add_option("--fits", exp_fits, "Directory of fit files")->required();
  exp->add_option("--partitions", exp_partitions);
  exp->add_option("--out", exp_out, "Output file (default stdout)");

  // score
  auto* score = app.add_subcommand("score", "Phrase-level micro-F1");
  std::string score_gold, score_pred, score_weights;
  score->add_option("--gold", score_gold)->required();
  score->add_option("--predictions", score_pred, "CoNLL or .jsonl exchange file")->required();
  score->add_option("--weights", score_weights, "Class weights (JSON)");

  // select
  auto* sel = app.add_subcommand("select", "Choose one batch from a pool");
  edg::SelectRequest req;
  std::string sel_mode = "sentence", sel_out, sel_embeddings;
  std::optional<double> sel_eps;
  sel->add_option("--strategy", req.strategy)->required();
  sel->add_option("--pool", req.pool_path)->required();
  sel->add_option("--budget", req.budget, "Token budget")->required();
  sel->add_option("--train", req.train_path);
  sel->add_option("--validation", req.validation_path);
  sel->add_option("--history", req.history_path);
  sel->add_option("--partitions", req.partitions_dir);
  sel->add_option("--predictions", req.predictions_path);
  sel->add_option("--lagged-predictions", req.lagged_predictions_path);
  sel->add_option("--embeddings", sel_embeddings);
  sel->add_option("--batch-index", req.batch_index);
  sel->add_option("--t-factor", req.t_factor);
  sel->add_option("--epsilon", sel_eps);
  sel->add_option("--mode", sel_mode)->check(CLI::IsMember({"sentence", "document"}));
  sel->add_option("--seed", req.seed);
  sel->add_option("--out", sel_out, "Output file (default stdout)");

  // tag
  auto* tag = app.add_subcommand("tag", "Serve an external-predictor request with the built-in tagger");
  std::string tag_request;
  tag->add_option("--request", tag_request, "request.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (gen->parsed()) {
    edg::SynthSpec spec;
    spec.seed = gen_seed;
    edg::gen_synth_files(spec, sizes, gen_out, gen_force);
  } else if (sim->parsed()) {
    if (!sim_strategy.empty()) sim_sets.push_back("strategy=" + sim_strategy);
    if (sim_seed) sim_sets.push_back("seed=" + std::to_string(*sim_seed));
    const auto config = edg::load_run_config(sim_config, sim_sets);
    edg::SimulateOptions options;
    options.force = sim_force;
    options.resume = sim_resume;
    options.log = sim_quiet ? nullptr : &std::cerr;
    edg::simulate(config, sim_out, options);
  } else if (fit->parsed()) {
    const auto fits = edg::fit_history_files(fit_history, fit_out, fit_partitions, {}, fit_seed);
    for (const auto& f : fits)
      std::cout << "objective " << f.objective_value << (f.converged ? " converged" : "") << '\n';
  } else if (exp->parsed()) {
    if (exp_out.empty()) {
      edg::export_curves_files(exp_history, exp_fits, exp_partitions, std::cout);
    } else {
      std::ofstream out(exp_out);
      edg::export_curves_files(exp_history, exp_fits, exp_partitions, out);
    }
  } else if (score->parsed()) {
    edg::score_files(score_gold, score_pred, score_weights, std::cout);
  } else if (sel->parsed()) {
    req.mode = sel_mode == "document" ? edg::SelectionMode::kDocument
                                      : edg::SelectionMode::kSentence;
    req.epsilon = sel_eps;
    if (!sel_embeddings.empty()) req.embeddings_path = sel_embeddings;
    const auto ids = edg::select_once(req);
    std::ofstream file;
    if (!sel_out.empty()) file.open(sel_out);
    std::ostream& out = sel_out.empty() ? std::cout : file;
    for (auto id : ids) out << id << '\n';
  } else if (tag->parsed()) {
    edg::serve_request_with_builtin(tag_request);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const edg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const edg::CapabilityError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const edg::ExternalPredictorError& e) {
    std::cerr << "external predictor failed: " << e.what() << '\n';
    return kExitExternal;
  } catch (const edg::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
}
