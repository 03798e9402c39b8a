// Copyright 2026 The bnlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bnlab/bnlab.h"

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<unsigned long long> seed;
  std::string out;
};

int report(const char* context) {
  std::fprintf(stderr, "bnlab: %s: %s\n", context, bnlab_last_error());
  return BNLAB_EXIT_CONFIG;
}

int run(const std::string& command, const Options& opt) {
  bnlab_config* config = nullptr;
  const bnlab_status st = opt.config_path.empty() ? bnlab_config_create(&config)
                                                  : bnlab_config_from_file(opt.config_path.c_str(), &config);
  if (st != BNLAB_OK) return report("config");
  struct Guard {
    bnlab_config* c;
    ~Guard() { bnlab_config_destroy(c); }
  } guard{config};

  for (const std::string& s : opt.sets)
    if (bnlab_config_set_assignment(config, s.c_str()) != BNLAB_OK) return report("--set");
  if (opt.seed && bnlab_config_set(config, "seed", std::to_string(*opt.seed).c_str()) != BNLAB_OK)
    return report("--seed");
  if (!opt.out.empty() && bnlab_config_set(config, "out", ("\"" + opt.out + "\"").c_str()) != BNLAB_OK)
    return report("--out");

  int exit_code = BNLAB_EXIT_OK;
  if (bnlab_run(command.c_str(), config, nullptr, &exit_code) != BNLAB_OK) return report(command.c_str());
  if (exit_code == BNLAB_EXIT_DIVERGED)
    std::fprintf(stderr, "bnlab: %s: training diverged (see manifest.json)\n", command.c_str());
  else if (exit_code == BNLAB_EXIT_VERIFY_FAILED)
    std::fprintf(stderr, "bnlab: verify: %s\n", bnlab_last_error());
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch normalization laboratory: seeded experiments on small networks."};
  app.set_version_flag("--version", std::string(bnlab_version()));
  app.require_subcommand(1, 1);

  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train a model; writes loss.csv and moments.csv"},
      {"ics", "train while measuring per-layer gradient shift; writes ics.csv"},
      {"probe", "train while probing the loss landscape; writes landscape.csv"},
      {"verify", "randomized numerical checks of the BN theory; writes verify.json"},
      {"compare", "matched-seed battery over variants; writes summary.csv"},
  };
  for (std::size_t i = 0; bnlab_command_name(i) != nullptr; ++i) {
    const std::string name = bnlab_command_name(i);
    std::string help;
    for (const auto& [n, h] : commands)
      if (n == name) help = h;
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "JSON config or a previous run's manifest.json")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", opt.sets, "override one key, e.g. --set model.norm=bn (repeatable)")
        ->allow_extra_args(false);
    sub->add_option("--seed", opt.seed, "master seed");
    sub->add_option("--out", opt.out, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? BNLAB_EXIT_OK : BNLAB_EXIT_CONFIG;
  }
  return run(app.get_subcommands().front()->get_name(), opt);
}
