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

#ifndef LOCA_CONFIG_HPP_
#define LOCA_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loca/datagen.hpp"
#include "loca/eval.hpp"
#include "loca/trainer.hpp"

namespace loca {

/// Everything a CLI run needs: the training config plus data, evaluation
/// and probe settings. Every field has a flat key; `source` records where
/// each key's value came from ("default", "preset", "file:<path>:<line>",
/// "flag").
struct RunConfig {
  TrainConfig train;
  SceneSpec scene;
  std::size_t corpus_size = 512;
  std::uint64_t corpus_seed = 1;
  std::string data_dir;  // PNG directory used instead of synthetic scenes
  std::size_t eval_images = 128;
  std::uint64_t eval_seed = 2;
  std::size_t eval_pairs = 500;
  std::size_t eval_interval = 0;
  std::size_t checkpoint_interval = 0;
  std::size_t probe_images = 128;
  std::uint64_t probe_seed = 3;
  ProbeConfig probe;

  std::map<std::string, std::string> source;
};

struct ConfigEntry {
  std::string key, value, source;
};

/// All recognised keys in dump order.
const std::vector<std::string>& config_keys();

/// Defaults of the preset, every key marked "default" (or "preset" for
/// keys the preset changes).
RunConfig make_run_config(GeometryPreset preset);

GeometryPreset parse_preset(const std::string& name);

/// Parses and stores one value. Unknown keys and malformed values raise a
/// config error naming the key and source.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& source);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& origin);
std::vector<ConfigEntry> read_config_file(const std::string& path);

/// Preset comes from the flags, else the file, else desk. File entries are
/// applied, then flag entries; the result is validated.
RunConfig resolve_run_config(const std::vector<ConfigEntry>& file_entries,
                             const std::vector<ConfigEntry>& flag_entries);

/// One `key = value  # source` line per key; parse_config_text reads it back.
std::string dump_config(const RunConfig& cfg);

void validate(const RunConfig& cfg);

}  // namespace loca

#endif  // LOCA_CONFIG_HPP_
