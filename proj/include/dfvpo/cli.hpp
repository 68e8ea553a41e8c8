#pragma once

// Command-line front end. Every settings key is exposed as a --kebab-case
// flag; `--config FILE` loads a flat TOML file first and explicit flags are
// applied on top.

#include <csignal>
#include <deque>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfvpo/commands.hpp"

namespace dfvpo::cli {

namespace detail {

/// Raw flag values for one settings type, bound to a CLI11 subcommand.
template <class S>
struct Binding {
  const config::FieldSet<S>* fields = nullptr;
  std::string config_file;
  std::deque<std::string> raw;  // stable addresses for CLI11
  std::vector<CLI::Option*> options;

  void attach(CLI::App& app, const config::FieldSet<S>& f) {
    fields = &f;
    app.add_option("--config", config_file, "flat TOML config; explicit flags take precedence");
    for (const auto& field : f) {
      raw.emplace_back();
      options.push_back(app.add_option(config::flag_name(field.key), raw.back(), field.help));
    }
  }

  S resolve() const {
    S s;
    if (!config_file.empty()) config::apply_file(s, *fields, config_file);
    for (std::size_t i = 0; i < options.size(); ++i)
      if (options[i]->count() > 0) config::apply_flag(s, *fields, (*fields)[i].key, raw[i]);
    return s;
  }
};

inline void on_sigint(int) { cmd::stop_flag().store(true); }

}  // namespace detail

/// Parses argv and runs the selected command; returns the exit code.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"dfvpo: distortion-based video preference optimization laboratory"};
  app.require_subcommand(1);

  detail::Binding<cmd::SynthSettings> synth;
  detail::Binding<cmd::PairsSettings> pairs;
  detail::Binding<cmd::TrainSettings> train;
  detail::Binding<cmd::EvalSettings> eval;
  detail::Binding<cmd::TheorySettings> theory;

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic moving-sprite corpus");
  synth.attach(*synth_cmd, cmd::synth_fields());
  auto* pairs_cmd = app.add_subcommand("pairs", "manufacture win/lose pairs from a corpus");
  pairs.attach(*pairs_cmd, cmd::pairs_fields());
  auto* train_cmd = app.add_subcommand("train", "preference fine-tuning with the curriculum");
  train.attach(*train_cmd, cmd::train_fields());
  auto* eval_cmd = app.add_subcommand("eval", "held-out margins and ancestral samples");
  eval.attach(*eval_cmd, cmd::eval_fields());
  auto* theory_cmd = app.add_subcommand("theory", "exact checks on tabular MDPs");
  theory_cmd->require_subcommand(1);
  auto* verify_cmd = theory_cmd->add_subcommand("verify", "run a verification suite");
  theory.attach(*verify_cmd, cmd::theory_fields());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return cmd::kSuccess;
  } catch (const CLI::ParseError& e) {
    std::cerr << cmd::error_json("UsageError", e.what(), cmd::kUsageError) << "\n";
    return cmd::kUsageError;
  }

  try {
    if (*synth_cmd) return cmd::cmd_synth(synth.resolve());
    if (*pairs_cmd) return cmd::cmd_pairs(pairs.resolve());
    if (*train_cmd) {
      cmd::stop_flag().store(false);
      auto previous = std::signal(SIGINT, detail::on_sigint);
      const int rc = cmd::cmd_train(train.resolve());
      std::signal(SIGINT, previous);
      return rc;
    }
    if (*eval_cmd) return cmd::cmd_eval(eval.resolve());
    if (*verify_cmd) return cmd::cmd_theory(theory.resolve());
  } catch (const Error& e) {
    const int code = cmd::exit_code_for(e.code());
    std::cerr << cmd::error_json(std::string(errc_name(e.code())), e.what(), code) << "\n";
    return code;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << cmd::error_json("IoError", e.what(), cmd::kIoError) << "\n";
    return cmd::kIoError;
  } catch (const std::exception& e) {
    std::cerr << cmd::error_json("InternalError", e.what(), cmd::kAssertionFailed) << "\n";
    return cmd::kAssertionFailed;
  }
  return cmd::kUsageError;
}

inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"dfvpo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dfvpo::cli
