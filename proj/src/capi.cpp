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

#include "loca/loca.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "loca/config.hpp"
#include "loca/errors.hpp"
#include "loca/parallel.hpp"
#include "loca/run.hpp"

struct loca_config {
  std::vector<loca::ConfigEntry> file, flags;
  std::optional<loca::RunConfig> resolved;
};

namespace {

thread_local std::string last_error;

loca_status status_of(loca::ErrorKind k) {
  switch (k) {
    case loca::ErrorKind::kDimension: return LOCA_ERR_DIMENSION;
    case loca::ErrorKind::kParameter: return LOCA_ERR_PARAMETER;
    case loca::ErrorKind::kRange: return LOCA_ERR_RANGE;
    case loca::ErrorKind::kContract: return LOCA_ERR_CONTRACT;
    case loca::ErrorKind::kState: return LOCA_ERR_STATE;
    case loca::ErrorKind::kConfig: return LOCA_ERR_CONFIG;
    case loca::ErrorKind::kIo: return LOCA_ERR_IO;
    case loca::ErrorKind::kDegenerateInput: return LOCA_ERR_DEGENERATE_INPUT;
    case loca::ErrorKind::kNumeric: return LOCA_ERR_NUMERIC;
    case loca::ErrorKind::kUndefined: return LOCA_ERR_UNDEFINED;
  }
  return LOCA_ERR_INTERNAL;
}

loca_status fail_with(loca_status s, std::string msg) {
  last_error = std::move(msg);
  return s;
}

// Runs fn, translating every exception into a status. Nothing escapes the
// C boundary.
template <typename F>
loca_status guard(F&& fn) {
  try {
    fn();
    return LOCA_OK;
  } catch (const loca::Error& e) {
    return fail_with(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail_with(LOCA_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail_with(LOCA_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail_with(LOCA_ERR_INTERNAL, "unknown failure");
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

const loca::RunConfig& resolved(loca_config* cfg) {
  if (!cfg->resolved) cfg->resolved = loca::resolve_run_config(cfg->file, cfg->flags);
  return *cfg->resolved;
}

std::string str(const char* s) { return s ? s : ""; }

#define LOCA_NEED(cond, what) \
  if (!(cond)) return fail_with(LOCA_ERR_INVALID_ARGUMENT, what)

}  // namespace

extern "C" {

const char* loca_version(void) { return "0.1.0"; }

const char* loca_status_name(loca_status status) {
  switch (status) {
    case LOCA_OK: return "ok";
    case LOCA_ERR_DIMENSION: return "dimension";
    case LOCA_ERR_PARAMETER: return "parameter";
    case LOCA_ERR_RANGE: return "range";
    case LOCA_ERR_CONTRACT: return "contract";
    case LOCA_ERR_STATE: return "state";
    case LOCA_ERR_CONFIG: return "config";
    case LOCA_ERR_IO: return "io";
    case LOCA_ERR_DEGENERATE_INPUT: return "degenerate input";
    case LOCA_ERR_NUMERIC: return "numeric";
    case LOCA_ERR_UNDEFINED: return "undefined";
    case LOCA_ERR_INVALID_ARGUMENT: return "invalid argument";
    case LOCA_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* loca_last_error(void) { return last_error.c_str(); }

void loca_string_free(char* s) { std::free(s); }

loca_status loca_set_threads(size_t n) {
  LOCA_NEED(n >= 1, "thread count must be at least 1");
  return guard([&] { loca::set_thread_count(n); });
}

size_t loca_threads(void) { return loca::thread_count(); }

loca_status loca_config_new(loca_config** out) {
  LOCA_NEED(out, "null output pointer");
  *out = nullptr;
  return guard([&] { *out = new loca_config(); });
}

void loca_config_free(loca_config* cfg) { delete cfg; }

loca_status loca_config_add_file(loca_config* cfg, const char* path) {
  LOCA_NEED(cfg && path, "null config or path");
  return guard([&] {
    auto entries = loca::read_config_file(path);
    cfg->file.insert(cfg->file.end(), entries.begin(), entries.end());
    cfg->resolved.reset();
  });
}

loca_status loca_config_set(loca_config* cfg, const char* key, const char* value) {
  LOCA_NEED(cfg && key && value, "null config, key or value");
  return guard([&] {
    // Reject unknown keys and bad values right away, with the key named.
    loca::RunConfig probe;
    if (std::string(key) == "preset")
      loca::parse_preset(value);
    else
      loca::set_config_value(probe, key, value, "flag");
    cfg->flags.push_back({key, value, "flag"});
    cfg->resolved.reset();
  });
}

loca_status loca_config_resolve(loca_config* cfg) {
  LOCA_NEED(cfg, "null config");
  return guard([&] { resolved(cfg); });
}

loca_status loca_config_get(loca_config* cfg, const char* key, char** value) {
  LOCA_NEED(cfg && key && value, "null config, key or output");
  *value = nullptr;
  return guard([&] { *value = dup(loca::get_config_value(resolved(cfg), key)); });
}

loca_status loca_config_dump(loca_config* cfg, char** text) {
  LOCA_NEED(cfg && text, "null config or output");
  *text = nullptr;
  return guard([&] { *text = dup(loca::dump_config(resolved(cfg))); });
}

loca_status loca_pretrain(loca_config* cfg, const char* out_dir, const char* resume, int force,
                          loca_record_fn on_record, void* user, char** report) {
  LOCA_NEED(cfg && out_dir && *out_dir, "null config or empty output directory");
  if (report) *report = nullptr;
  return guard([&] {
    loca::PretrainOptions opt;
    opt.out_dir = out_dir;
    opt.resume = str(resume);
    opt.force = force != 0;
    if (on_record) opt.on_record = [&](const std::string& line) { on_record(line.c_str(), user); };
    const auto summary = loca::run_pretrain_job(resolved(cfg), opt);
    if (report) {
      nlohmann::ordered_json j;
      j["steps"] = summary.steps;
      j["checkpoint"] = summary.final_checkpoint.string();
      j["eval"] = nlohmann::ordered_json::parse(loca::to_json(summary.final_eval));
      *report = dup(j.dump());
    }
  });
}

loca_status loca_evaluate(loca_config* cfg, const char* checkpoint, int force, char** json) {
  LOCA_NEED(cfg && checkpoint && *checkpoint && json, "null config, checkpoint or output");
  *json = nullptr;
  return guard([&] {
    *json = dup(loca::to_json(loca::run_eval_job(resolved(cfg), checkpoint, force != 0)));
  });
}

loca_status loca_probe(loca_config* cfg, const char* checkpoint, int force, char** json) {
  LOCA_NEED(cfg && json, "null config or output");
  *json = nullptr;
  return guard([&] {
    *json = dup(loca::to_json(loca::run_probe_job(resolved(cfg), str(checkpoint), force != 0)));
  });
}

loca_status loca_inspect(loca_config* cfg, const char* checkpoint, size_t index,
                         const char* out_png, int force) {
  LOCA_NEED(cfg && out_png && *out_png, "null config or output path");
  return guard(
      [&] { loca::run_inspect_job(resolved(cfg), str(checkpoint), index, out_png, force != 0); });
}

}  // extern "C"
