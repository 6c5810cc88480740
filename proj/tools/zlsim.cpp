// zlsim: command-line front end for the fill-buffer leakage simulator.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "zombieload/zombieload.hpp"

namespace fs = std::filesystem;
using namespace zl;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "json";
  std::optional<std::size_t> trials;
};

/// First argument that is neither an option nor an option's value.
std::optional<std::string> first_word(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.rfind("--", 0) == 0) {
      if (a.find('=') == std::string::npos && a != "--help" && a != "--dual-core") ++i;
      continue;
    }
    if (a.rfind("-", 0) == 0) continue;
    return a;
  }
  return std::nullopt;
}

int usage_error(const CLI::App& app, const std::string& msg) {
  std::cerr << "zlsim: " << msg << "\n\n" << app.help();
  return 2;
}

harness::ScenarioConfig load(const std::string& path, const Globals& g) {
  auto cfg = harness::load_config(path);
  if (const char* env = std::getenv("ZL_SEED")) {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 0);
    if (*env == '\0' || *end != '\0' || *env == '-')
      throw Error(ErrorCode::ConfigError, "ZL_SEED is not an unsigned integer: '" + std::string(env) + "'");
    cfg.seed = v;
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.trials) cfg.trials = *g.trials;
  return cfg;
}

int emit(const std::string& experiment, const harness::ScenarioConfig& cfg, const Globals& g) {
  const auto result = harness::run_experiment(experiment, cfg);
  const auto report = harness::make_report(experiment, cfg, result);
  const auto text = harness::report_text(report, g.format);
  if (g.out.empty()) {
    std::cout << text;
  } else {
    const fs::path dir(g.out);
    fs::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& content) {
      std::ofstream f(dir / name, std::ios::binary);
      if (!f) throw Error(ErrorCode::ConfigError, "cannot write '" + (dir / name).string() + "'");
      f << content;
    };
    write(g.format == "json" ? "report.json" : "report.csv", text);
    for (const auto& [name, content] : result.files) write(name, content);
  }
  if (result.failure) {
    std::cerr << "zlsim: " << experiment << " failed: " << *result.failure << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic ZombieLoad fill-buffer leakage simulator", "zlsim"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed; overrides the config and ZL_SEED");
  app.add_option("--out", g.out, "Directory for report.json and artifact files (default: report on stdout)");
  app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  app.add_option("--trials", g.trials, "Independent seeded trials")->check(CLI::PositiveNumber);

  std::string config;
  std::string experiment;
  auto with_config = [&](CLI::App* sub, const std::string& name, bool required = true) {
    auto* opt = sub->add_option("config", config, "Scenario file (JSON)");
    if (required) opt->required();
    sub->callback([&experiment, name] { experiment = name; });
  };

  auto* sim = app.add_subcommand("sim", "Run a scenario and export samples");
  sim->require_subcommand(1);
  with_config(sim->add_subcommand("run", "Sample a victim"), "sim run");

  auto* covert = app.add_subcommand("covert", "Covert channel");
  covert->require_subcommand(1);
  with_config(covert->add_subcommand("bench", "Loopback throughput benchmark"), "covert bench");

  auto* recover = app.add_subcommand("recover", "Secret recovery attacks");
  recover->require_subcommand(1);
  with_config(recover->add_subcommand("aes", "AES key via domino bytes"), "recover aes");
  with_config(recover->add_subcommand("url", "Visited URL and keywords"), "recover url");
  with_config(recover->add_subcommand("targeted", "Prefetch-gadget byte leak"), "recover targeted");

  std::string uarch_name;
  bool dual_core = false;
  auto* fb = app.add_subcommand("fb-size", "Fill-buffer size from store latency");
  with_config(fb, "fb-size", false);
  fb->add_option("--uarch", uarch_name, "Microarchitecture")->check(CLI::IsMember({"skylake", "pre-skylake"}));
  fb->add_flag("--dual-core", dual_core, "Split the stores over both logical cores");

  with_config(app.add_subcommand("calibrate", "Fit noise parameters"), "calibrate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (auto w = first_word(argc, argv); w && !app.get_subcommand_no_throw(*w))
      return usage_error(app, "unknown subcommand '" + *w + "'");
    return usage_error(app, e.what());
  }

  try {
    harness::ScenarioConfig cfg;
    if (!config.empty()) {
      cfg = load(config, g);
    } else {
      if (g.seed) cfg.seed = *g.seed;
      if (g.trials) cfg.trials = *g.trials;
    }
    if (experiment == "fb-size") {
      if (!uarch_name.empty())
        cfg.machine.uarch = uarch_name == "skylake" ? uarch::Uarch::Skylake : uarch::Uarch::PreSkylake;
      if (dual_core) cfg.fb_size.dual_core = true;
    }
    return emit(experiment, cfg, g);
  } catch (const Error& e) {
    std::cerr << "zlsim: " << e.what() << '\n';
    return e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::ParameterError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "zlsim: " << e.what() << '\n';
    return 1;
  }
}
