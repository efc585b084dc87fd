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

#include "loca/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "loca/errors.hpp"

namespace loca {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& source,
                      const std::string& why) {
  fail(ErrorKind::kConfig, key + " = '" + value + "' (" + source + "): " + why);
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename U>
U parse_uint(const std::string& key, const std::string& v, const std::string& src) {
  U out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    bad(key, v, src, "expected a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v, const std::string& src) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, src, "expected a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v, const std::string& src) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad(key, v, src, "expected true or false");
}

template <typename U, typename Acc>
Field uint_field(std::string key, Acc acc) {
  return {key, [acc](const RunConfig& c) { return std::to_string(acc(c)); },
          [acc, key](RunConfig& c, const std::string& v, const std::string& s) {
            acc(c) = parse_uint<U>(key, v, s);
          }};
}

template <typename Acc>
Field double_field(std::string key, Acc acc) {
  return {key, [acc](const RunConfig& c) { return fmt(acc(c)); },
          [acc, key](RunConfig& c, const std::string& v, const std::string& s) {
            acc(c) = parse_double(key, v, s);
          }};
}

template <typename Acc>
Field bool_field(std::string key, Acc acc) {
  return {key,
          [acc](const RunConfig& c) { return acc(c) ? "true" : "false"; },
          [acc, key](RunConfig& c, const std::string& v, const std::string& s) {
            acc(c) = parse_bool(key, v, s);
          }};
}

#define LOCA_SZ(key, expr) uint_field<std::size_t>(key, [](auto& c) -> auto& { return expr; })
#define LOCA_U64(key, expr) uint_field<std::uint64_t>(key, [](auto& c) -> auto& { return expr; })
#define LOCA_DBL(key, expr) double_field(key, [](auto& c) -> auto& { return expr; })
#define LOCA_BOOL(key, expr) bool_field(key, [](auto& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({"preset", [](const RunConfig& c) { return std::string(preset_name(c.train.preset)); },
                 [](RunConfig& c, const std::string& val, const std::string&) {
                   c.train.preset = parse_preset(val);
                 }});
    v.push_back(LOCA_U64("seed", c.train.seed));
    // Model and view geometry.
    v.push_back({"patch_size",
                 [](const RunConfig& c) { return std::to_string(c.train.model.patch_size); },
                 [](RunConfig& c, const std::string& val, const std::string& s) {
                   c.train.model.patch_size = c.train.augment.patch_size =
                       parse_uint<std::size_t>("patch_size", val, s);
                 }});
    v.push_back(LOCA_SZ("reference_size", c.train.augment.reference_size));
    v.push_back(LOCA_SZ("query_size", c.train.augment.query_size));
    v.push_back(LOCA_SZ("embed_dim", c.train.model.embed_dim));
    v.push_back(LOCA_SZ("depth", c.train.model.depth));
    v.push_back(LOCA_SZ("num_heads", c.train.model.num_heads));
    v.push_back(LOCA_SZ("mlp_ratio", c.train.model.mlp_ratio));
    v.push_back(LOCA_SZ("proj_dim", c.train.model.proj_dim));
    v.push_back(LOCA_SZ("num_prototypes", c.train.model.num_prototypes));
    v.push_back(LOCA_BOOL("sincos_pos_init", c.train.model.sincos_pos_init));
    // Optimisation.
    v.push_back(LOCA_DBL("base_lr", c.train.base_lr));
    v.push_back(LOCA_DBL("final_lr", c.train.final_lr));
    v.push_back(LOCA_SZ("warmup_epochs", c.train.warmup_epochs));
    v.push_back(LOCA_SZ("total_epochs", c.train.total_epochs));
    v.push_back(LOCA_SZ("max_steps", c.train.max_steps));
    v.push_back(LOCA_SZ("batch_size", c.train.batch_size));
    v.push_back(LOCA_DBL("weight_decay", c.train.weight_decay));
    v.push_back(LOCA_DBL("beta1", c.train.beta1));
    v.push_back(LOCA_DBL("beta2", c.train.beta2));
    v.push_back(LOCA_DBL("adam_eps", c.train.adam_eps));
    v.push_back(LOCA_DBL("ema_momentum_start", c.train.ema_momentum_start));
    v.push_back(LOCA_DBL("ema_momentum_end", c.train.ema_momentum_end));
    // Objective.
    v.push_back(LOCA_SZ("queries_per_reference", c.train.queries_per_reference));
    v.push_back(LOCA_DBL("query_keep_ratio", c.train.query_keep_ratio));
    v.push_back(LOCA_DBL("eta", c.train.eta));
    v.push_back(LOCA_BOOL("structured_mask", c.train.structured_mask));
    v.push_back(LOCA_DBL("tau_teacher", c.train.tau_teacher));
    v.push_back(LOCA_DBL("tau_student", c.train.tau_student));
    v.push_back(LOCA_BOOL("use_sinkhorn", c.train.use_sinkhorn));
    v.push_back(LOCA_SZ("sinkhorn_iters", c.train.sinkhorn_iters));
    v.push_back(LOCA_DBL("lambda_memax", c.train.lambda_memax));
    // Augmentation.
    v.push_back(LOCA_DBL("reference_scale_min", c.train.augment.reference_scale.lo));
    v.push_back(LOCA_DBL("reference_scale_max", c.train.augment.reference_scale.hi));
    v.push_back(LOCA_DBL("query_scale_min", c.train.augment.query_scale.lo));
    v.push_back(LOCA_DBL("query_scale_max", c.train.augment.query_scale.hi));
    v.push_back(LOCA_DBL("aspect_min", c.train.augment.aspect.lo));
    v.push_back(LOCA_DBL("aspect_max", c.train.augment.aspect.hi));
    v.push_back(LOCA_DBL("hflip_prob", c.train.augment.hflip_prob));
    v.push_back(LOCA_DBL("jitter_prob", c.train.augment.jitter_prob));
    v.push_back(LOCA_DBL("brightness", c.train.augment.brightness));
    v.push_back(LOCA_DBL("contrast", c.train.augment.contrast));
    v.push_back(LOCA_DBL("saturation", c.train.augment.saturation));
    v.push_back(LOCA_DBL("hue", c.train.augment.hue));
    // Synthetic scenes.
    v.push_back({"scene_size", [](const RunConfig& c) { return std::to_string(c.scene.height); },
                 [](RunConfig& c, const std::string& val, const std::string& s) {
                   c.scene.height = c.scene.width = parse_uint<std::size_t>("scene_size", val, s);
                 }});
    v.push_back(LOCA_SZ("scene_min_shapes", c.scene.min_shapes));
    v.push_back(LOCA_SZ("scene_max_shapes", c.scene.max_shapes));
    v.push_back(LOCA_SZ("scene_classes", c.scene.class_count));
    v.push_back(LOCA_DBL("scene_min_shape_size", c.scene.min_shape_size));
    v.push_back(LOCA_DBL("scene_max_shape_size", c.scene.max_shape_size));
    v.push_back(LOCA_DBL("scene_color_band", c.scene.color_band));
    v.push_back(LOCA_DBL("scene_pixel_noise", c.scene.pixel_noise));
    v.push_back(LOCA_DBL("scene_background_detail", c.scene.background_detail));
    // Run.
    v.push_back(LOCA_SZ("corpus_size", c.corpus_size));
    v.push_back(LOCA_U64("corpus_seed", c.corpus_seed));
    v.push_back({"data_dir", [](const RunConfig& c) { return c.data_dir; },
                 [](RunConfig& c, const std::string& val, const std::string&) { c.data_dir = val; }});
    v.push_back(LOCA_SZ("eval_images", c.eval_images));
    v.push_back(LOCA_U64("eval_seed", c.eval_seed));
    v.push_back(LOCA_SZ("eval_pairs", c.eval_pairs));
    v.push_back(LOCA_SZ("eval_interval", c.eval_interval));
    v.push_back(LOCA_SZ("checkpoint_interval", c.checkpoint_interval));
    v.push_back(LOCA_SZ("probe_images", c.probe_images));
    v.push_back(LOCA_U64("probe_seed", c.probe_seed));
    v.push_back(LOCA_SZ("probe_steps", c.probe.steps));
    v.push_back(LOCA_DBL("probe_lr", c.probe.lr));
    v.push_back(LOCA_DBL("probe_weight_decay", c.probe.weight_decay));
    return v;
  }();
  return f;
}

#undef LOCA_SZ
#undef LOCA_U64
#undef LOCA_DBL
#undef LOCA_BOOL

const Field& field(const std::string& key, const std::string& value, const std::string& source) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  bad(key, value, source, "unknown key");
}

// The positional grid follows the reference size and patch size.
void sync_geometry(RunConfig& c) {
  auto& m = c.train.model;
  if (m.patch_size > 0 && c.train.augment.reference_size % m.patch_size == 0) {
    const std::size_t cells = c.train.augment.reference_size / m.patch_size;
    m.ref_grid = {cells, cells};
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

GeometryPreset parse_preset(const std::string& name) {
  if (name == "desk") return GeometryPreset::kDesk;
  if (name == "paper") return GeometryPreset::kPaper;
  fail(ErrorKind::kConfig, "preset = '" + name + "': expected desk or paper");
}

RunConfig make_run_config(GeometryPreset preset) {
  RunConfig c;
  c.train = preset_config(preset);
  if (preset == GeometryPreset::kPaper) {
    c.scene.height = c.scene.width = 320;
    c.scene.min_shape_size = 48;
    c.scene.max_shape_size = 150;
  }
  const RunConfig base;
  for (const auto& f : fields())
    c.source[f.key] = f.get(c) == f.get(base) ? "default" : "preset";
  return c;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& source) {
  field(key, value, source).set(cfg, value, source);
  cfg.source[key] = source;
  sync_geometry(cfg);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return field(key, "", "query").get(cfg);
}

std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& origin) {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const std::string src = origin + ":" + std::to_string(n);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::kConfig, src + ": expected 'key = value', got '" + line + "'");
    ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), src};
    if (e.key.empty()) fail(ErrorKind::kConfig, src + ": missing key");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ConfigEntry> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), "file:" + path);
}

RunConfig resolve_run_config(const std::vector<ConfigEntry>& file_entries,
                             const std::vector<ConfigEntry>& flag_entries) {
  GeometryPreset preset = GeometryPreset::kDesk;
  std::string preset_source = "default";
  for (const auto* list : {&file_entries, &flag_entries})
    for (const auto& e : *list)
      if (e.key == "preset") {
        preset = parse_preset(e.value);
        preset_source = e.source;
      }
  RunConfig cfg = make_run_config(preset);
  cfg.source["preset"] = preset_source;
  for (const auto* list : {&file_entries, &flag_entries})
    for (const auto& e : *list)
      if (e.key != "preset") set_config_value(cfg, e.key, e.value, e.source);
  validate(cfg);
  return cfg;
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& f : fields()) {
    auto it = cfg.source.find(f.key);
    os << f.key << " = " << f.get(cfg) << "  # " << (it == cfg.source.end() ? "default" : it->second)
       << '\n';
  }
  return os.str();
}

void validate(const RunConfig& cfg) {
  cfg.train.validate();
  auto check = [](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) fail(ErrorKind::kConfig, key + ": " + msg);
  };
  check(cfg.corpus_size >= 1 || !cfg.data_dir.empty(), "corpus_size", "must be at least 1");
  check(cfg.eval_images >= 1, "eval_images", "must be at least 1");
  check(cfg.eval_pairs >= 1, "eval_pairs", "must be at least 1");
  check(cfg.probe_images >= 2, "probe_images", "needs at least 2 images for the parity split");
  check(cfg.probe.lr > 0, "probe_lr", "must be positive");
  check(cfg.scene.min_shapes <= cfg.scene.max_shapes, "scene_min_shapes",
        "must not exceed scene_max_shapes");
  check(cfg.scene.class_count >= 2 && cfg.scene.class_count <= 256, "scene_classes",
        "must lie in [2, 256]");
  check(cfg.scene.height % cfg.train.model.patch_size == 0, "scene_size",
        "must be divisible by patch_size for the segmentation probe");
  check(cfg.scene.background_detail >= 0, "scene_background_detail", "must be non-negative");
}

}  // namespace loca
