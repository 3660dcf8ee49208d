// Command-line front end: train / prune / finetune / eval / sweep / report /
// inspect. Exit codes are documented in the README (0 ok, 2 usage, 3 unknown
// config key, 4 bad config value, 5 missing or malformed file, 6 contract
// refusal, 7 shape or index error, 1 anything else).

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "ght/train.hpp"

using namespace ght;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string output_dir;
};

void apply_sets(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError(strprintf("config: --set expects key=value, got '%s'", kv.c_str()));
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

RunConfig assemble_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? preset_config("tiny") : load_config_file(opts.config_path);
  if (const char* env = std::getenv("GHT_OUTPUT_DIR")) cfg.train.output_dir = env;
  apply_sets(cfg, opts.sets);
  if (!opts.output_dir.empty()) cfg.train.output_dir = opts.output_dir;
  cfg.validate();
  return cfg;
}

std::string resolved_output_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("GHT_OUTPUT_DIR")) return env;
  return "";
}

void print_eval(const metrics::EvalAccumulator& acc, const char* split) {
  std::cout << strprintf("%s: ppl %.4f token_acc %.4f exact_match %.4f (%lld tokens, %lld sequences)\n",
                         split, acc.perplexity(), acc.token_accuracy(), acc.exact_match(),
                         static_cast<long long>(acc.tokens), static_cast<long long>(acc.sequences));
}

int run_cli(int argc, char** argv) {
  CLI::App app{"ght: a grouped-head-attention training laboratory"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string checkpoint_path, split = "test", axis = "alpha-beta", grid_str = "0,0.5,1";
  std::string dump_path, structural_out, run_dir;
  bool force_rho = false, resume = false;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) cmd->add_option("--config", opts.config_path, "run configuration file");
    cmd->add_option("--set", opts.sets, "override a config key, e.g. --set group.alpha=0.5");
    cmd->add_option("--output-dir", opts.output_dir, "artifact directory (overrides config and env)");
  };

  auto* train_cmd = app.add_subcommand("train", "run the two-stage training loop");
  add_common(train_cmd, true);
  train_cmd->add_flag("--resume", resume, "continue from <output-dir>/last.ckpt");

  auto* prune_cmd = app.add_subcommand("prune", "run one voting epoch on a stage-1 checkpoint");
  prune_cmd->add_option("--checkpoint", checkpoint_path, "stage-1 checkpoint")->required();
  prune_cmd->add_flag("--force-rho", force_rho, "vote even when rho is unsatisfied (non-conforming)");
  prune_cmd->add_option("--structural", structural_out, "also write a structurally pruned checkpoint here");
  add_common(prune_cmd, false);

  auto* finetune_cmd = app.add_subcommand("finetune", "stage-2 training of a pruned checkpoint");
  finetune_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint with an installed head mask")->required();
  add_common(finetune_cmd, false);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", checkpoint_path)->required();
  eval_cmd->add_option("--split", split, "train | valid | test");
  add_common(eval_cmd, false);

  auto* sweep_cmd = app.add_subcommand("sweep", "run an alpha-beta grid or group-count sweep");
  add_common(sweep_cmd, true);
  sweep_cmd->add_option("--axis", axis, "alpha-beta | group-count");
  sweep_cmd->add_option("--grid", grid_str, "comma-separated values for the alpha-beta grid");

  auto* report_cmd = app.add_subcommand("report", "summarize a finished run's metrics log");
  report_cmd->add_option("--run", run_dir, "run directory containing metrics.csv")->required();

  auto* inspect_cmd = app.add_subcommand("inspect", "dump group structure from a checkpoint");
  inspect_cmd->add_option("--checkpoint", checkpoint_path)->required();
  inspect_cmd->add_option("--dump-fm", dump_path, "write pooled feature maps to this file");
  add_common(inspect_cmd, false);

  CLI11_PARSE(app, argc, argv);

  if (train_cmd->parsed()) {
    RunConfig cfg = assemble_config(opts);
    std::unique_ptr<train::Trainer> tr;
    if (resume) {
      tr = train::Trainer::from_checkpoint(cfg.train.output_dir + "/last.ckpt", cfg.train.output_dir);
    } else {
      tr = std::make_unique<train::Trainer>(cfg);
    }
    auto result = tr->run();
    print_eval(result.test, "test");
    std::cout << "artifacts in " << tr->config().train.output_dir << "\n";
    return 0;
  }

  if (prune_cmd->parsed()) {
    auto tr = train::Trainer::from_checkpoint(checkpoint_path, resolved_output_dir(opts.output_dir));
    apply_sets(const_cast<RunConfig&>(tr->config()), opts.sets);
    auto report = tr->prune_now(force_rho);
    std::cout << report.to_text();
    tr->save("pruned.ckpt");
    if (!structural_out.empty()) {
      auto pruned = tr->model().structural_prune(report.mask);
      CheckpointData ck = snapshot_model(pruned, config_to_text(tr->config(), false));
      write_checkpoint_file(structural_out, ck);
      std::cout << "structurally pruned checkpoint written to " << structural_out << "\n";
    }
    return 0;
  }

  if (finetune_cmd->parsed()) {
    auto tr = train::Trainer::from_checkpoint(checkpoint_path, resolved_output_dir(opts.output_dir));
    apply_sets(const_cast<RunConfig&>(tr->config()), opts.sets);
    tr->begin_finetune();
    auto result = tr->run();
    print_eval(result.test, "test");
    return 0;
  }

  if (eval_cmd->parsed()) {
    auto tr = train::Trainer::from_checkpoint(checkpoint_path, resolved_output_dir(opts.output_dir));
    const auto& ds = tr->dataset();
    const auto& samples = split == "train" ? ds.train : split == "valid" ? ds.valid : ds.test;
    print_eval(tr->evaluate(samples), split.c_str());
    if (tr->model().mask_installed()) {
      HeadMask mask = tr->model().current_mask();
      auto layers = tr->model().attention_layers();
      for (size_t l = 0; l < mask.layers.size(); ++l)
        std::cout << strprintf("layer %-12s surviving_heads %lld of %d\n", layers[l]->name().c_str(),
                               static_cast<long long>(mask.surviving(l)), layers[l]->n_heads());
    }
    return 0;
  }

  if (sweep_cmd->parsed()) {
    RunConfig cfg = assemble_config(opts);
    train::SweepAxis ax;
    if (axis == "alpha-beta")
      ax = train::SweepAxis::AlphaBetaGrid;
    else if (axis == "group-count")
      ax = train::SweepAxis::GroupCount;
    else
      throw ConfigError(strprintf("sweep: unknown axis '%s'", axis.c_str()));
    std::vector<double> grid;
    std::stringstream ss(grid_str);
    std::string tok;
    while (std::getline(ss, tok, ',')) grid.push_back(std::stod(tok));
    auto cells = train::run_sweep(cfg, ax, grid);
    std::string csv = train::sweep_report_csv(cells);
    report::ensure_dir(cfg.train.output_dir);
    report::write_text_atomic(cfg.train.output_dir + "/sweep_report.csv", csv);
    std::cout << csv;
    return 0;
  }

  if (report_cmd->parsed()) {
    std::string csv = run_dir + "/metrics.csv";
    std::cout << report::render_metrics_summary(csv);
    report::write_series_files(csv, run_dir);
    std::cout << "series files written to " << run_dir << "\n";
    return 0;
  }

  if (inspect_cmd->parsed()) {
    auto tr = train::Trainer::from_checkpoint(checkpoint_path, resolved_output_dir(opts.output_dir));
    auto probe = tr->probe_groups(!dump_path.empty());
    std::cout << "stage = " << train::stage_name(tr->stage()) << "\n";
    std::cout << strprintf("rho_satisfied = %s\n",
                           group::convergence_check(tr->grouping()) ? "true" : "false");
    for (size_t l = 0; l < probe.layer_names.size(); ++l) {
      std::cout << strprintf("[%s]\n  labels =", probe.layer_names[l].c_str());
      for (int v : probe.labels[l]) std::cout << " " << v;
      std::cout << "\n  eta =";
      for (double e : probe.eta[l]) std::cout << strprintf(" %.4f", e);
      std::cout << "\n";
    }
    if (probe.defined) {
      std::cout << strprintf("final_layer_sc = %s\n",
                             probe.sc_defined ? strprintf("%.4f", probe.sc).c_str() : "n/a");
      std::cout << strprintf("final_layer_di = %s\n",
                             probe.di_defined ? strprintf("%.4f", probe.di).c_str() : "n/a");
      std::cout << strprintf("homogeneity = %.4f\ndiversity = %.4f\n", probe.homogeneity,
                             probe.diversity);
    }
    if (!dump_path.empty()) {
      report::write_fm_dump(dump_path, probe.dump);
      std::cout << "pooled feature maps dumped to " << dump_path << "\n";
    }
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const UnknownKeyError& e) {
    std::cerr << "error: code=3 kind=unknown-key msg=\"" << e.what() << "\"\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: code=4 kind=config msg=\"" << e.what() << "\"\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "error: code=5 kind=io msg=\"" << e.what() << "\"\n";
    return 5;
  } catch (const ContractError& e) {
    std::cerr << "error: code=6 kind=contract msg=\"" << e.what() << "\"\n";
    return 6;
  } catch (const ShapeError& e) {
    std::cerr << "error: code=7 kind=shape msg=\"" << e.what() << "\"\n";
    return 7;
  } catch (const IndexError& e) {
    std::cerr << "error: code=7 kind=index msg=\"" << e.what() << "\"\n";
    return 7;
  } catch (const std::exception& e) {
    std::cerr << "error: code=1 kind=internal msg=\"" << e.what() << "\"\n";
    return 1;
  }
}
