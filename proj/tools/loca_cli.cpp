// Copyright 2026 The LOCA Authors
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

// loca: pretrain, evaluate, probe and inspect from the command line.
// Exit status: 0 success, 1 configuration error, 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "loca/loca.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config_path;
  std::optional<std::string> seed, preset, eta, epochs, structured, queries, k;
  std::vector<std::string> sets;
  std::string out, checkpoint, resume;
  std::size_t index = 0;
  bool force = false, random_init = false, quiet = false;
};

using ConfigPtr = std::unique_ptr<loca_config, decltype(&loca_config_free)>;

struct Failure {
  int code;
};

int report(loca_status s, const std::string& what) {
  std::cerr << "loca: " << what << ": " << loca_last_error() << " [" << loca_status_name(s)
            << "]\n";
  return s == LOCA_ERR_CONFIG ? kExitConfig : kExitRuntime;
}

// Config problems found while building the run exit with 1 whatever their kind.
void check_config(loca_status s, const std::string& what) {
  if (s != LOCA_OK) {
    report(s, what);
    throw Failure{kExitConfig};
  }
}

void check_run(loca_status s, const std::string& what) {
  if (s != LOCA_OK) throw Failure{report(s, what)};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  loca_string_free(s);
  return out;
}

ConfigPtr build_config(const Options& o) {
  loca_config* raw = nullptr;
  check_run(loca_config_new(&raw), "config");
  ConfigPtr cfg(raw, &loca_config_free);
  if (!o.config_path.empty()) check_config(loca_config_add_file(cfg.get(), o.config_path.c_str()), "config file");
  auto set = [&](const char* key, const std::optional<std::string>& v) {
    if (v) check_config(loca_config_set(cfg.get(), key, v->c_str()), std::string("--") + key);
  };
  set("preset", o.preset);
  set("seed", o.seed);
  set("eta", o.eta);
  set("total_epochs", o.epochs);
  set("structured_mask", o.structured);
  set("queries_per_reference", o.queries);
  set("num_prototypes", o.k);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "loca: --set expects KEY=VALUE, got '" << kv << "'\n";
      throw Failure{kExitConfig};
    }
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    check_config(loca_config_set(cfg.get(), key.c_str(), value.c_str()), "--set " + key);
  }
  check_config(loca_config_resolve(cfg.get()), "config");
  return cfg;
}

void write_or_print(const std::string& text, const std::string& path) {
  std::cout << text << "\n";
  if (path.empty()) return;
  std::ofstream out(path, std::ios::trunc);
  out << text << "\n";
  if (!out) {
    std::cerr << "loca: " << path << ": cannot write\n";
    throw Failure{kExitRuntime};
  }
}

void print_line(const char* line, void*) {
  std::fputs(line, stdout);
  std::fputc('\n', stdout);
  std::fflush(stdout);
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", o.preset, "desk or paper");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--eta", o.eta, "reference mask ratio in [0, 1]");
  cmd->add_option("--epochs", o.epochs, "total epochs");
  cmd->add_option("--structured-mask", o.structured, "true for block masks, false for random");
  cmd->add_option("--queries", o.queries, "queries per reference");
  cmd->add_option("--k", o.k, "number of prototypes");
  cmd->add_option("--set", o.sets, "any config key, KEY=VALUE (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LOCA self-supervised pretraining on CPU"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(loca_version()));
  Options o;

  auto* pretrain = app.add_subcommand("pretrain", "train an encoder and write checkpoints");
  add_common(pretrain, o);
  pretrain->add_option("--out", o.out, "output directory")->required();
  pretrain->add_option("--checkpoint", o.resume, "checkpoint to resume from");
  pretrain->add_flag("--force", o.force, "accept a checkpoint from a different geometry");
  pretrain->add_flag("--quiet", o.quiet, "do not echo metrics lines");

  auto* eval = app.add_subcommand("eval", "held-out position accuracy and prediction entropy");
  add_common(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--out", o.out, "also write the JSON report here");
  eval->add_flag("--force", o.force, "accept a checkpoint from a different geometry");

  auto* probe = app.add_subcommand("probe", "linear segmentation probe on frozen features");
  add_common(probe, o);
  auto* probe_ckpt = probe->add_option("--checkpoint", o.checkpoint, "checkpoint to probe");
  auto* probe_rand = probe->add_flag("--random-init", o.random_init, "probe an untrained encoder");
  probe_ckpt->excludes(probe_rand);
  probe->add_option("--out", o.out, "also write the JSON report here");
  probe->add_flag("--force", o.force, "accept a checkpoint from a different geometry");

  auto* inspect = app.add_subcommand("inspect", "PNG panel of masks, targets and predictions");
  add_common(inspect, o);
  inspect->add_option("--checkpoint", o.checkpoint, "checkpoint whose predictions to draw")
      ->required();
  inspect->add_option("--out", o.out, "PNG path")->required();
  inspect->add_option("--index", o.index, "held-out sample index");
  inspect->add_flag("--force", o.force, "accept a checkpoint from a different geometry");

  auto* dump = app.add_subcommand("dump-config", "print the resolved config with sources");
  add_common(dump, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (probe->parsed() && o.checkpoint.empty() && !o.random_init) {
      std::cerr << "loca: probe needs --checkpoint or --random-init\n";
      return kExitConfig;
    }
    ConfigPtr cfg = build_config(o);
    const int force = o.force ? 1 : 0;
    char* text = nullptr;
    if (dump->parsed()) {
      check_run(loca_config_dump(cfg.get(), &text), "dump-config");
      std::cout << take(text);
    } else if (pretrain->parsed()) {
      check_run(loca_pretrain(cfg.get(), o.out.c_str(), o.resume.empty() ? nullptr : o.resume.c_str(),
                              force, o.quiet ? nullptr : print_line, nullptr, &text),
                "pretrain");
      std::cout << take(text) << "\n";
    } else if (eval->parsed()) {
      check_run(loca_evaluate(cfg.get(), o.checkpoint.c_str(), force, &text), "eval");
      write_or_print(take(text), o.out);
    } else if (probe->parsed()) {
      check_run(loca_probe(cfg.get(), o.random_init ? nullptr : o.checkpoint.c_str(), force, &text),
                "probe");
      write_or_print(take(text), o.out);
    } else if (inspect->parsed()) {
      check_run(loca_inspect(cfg.get(), o.checkpoint.c_str(), o.index, o.out.c_str(), force),
                "inspect");
      std::cout << o.out << "\n";
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitOk;
}
