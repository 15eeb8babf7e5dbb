#pragma once

// Checksummed stage orchestration: data -> tune -> reservoir_k -> fit_<model>_k
// -> weight_<model> -> forecast_<model> -> score -> render. A stage is skipped
// when the previous manifest holds the same stage key and its outputs still
// match their recorded checksums.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "besn/ca_sim.hpp"
#include "besn/ensemble.hpp"
#include "besn/image.hpp"
#include "besn/io.hpp"
#include "besn/metrics.hpp"
#include "besn/parallel.hpp"
#include "besn/workflow.hpp"

namespace besn {

inline constexpr const char* kArtifactVersion = "besn-pipeline/1";

// ---------------------------------------------------------------- config

struct MaskSpec {
  std::string name;
  std::string kind = "left_half";  // left_half | quadrant
  int quadrant = 0;
};

struct DataSpec {
  std::string source = "simulate";  // simulate | file
  fs::path path;
  int rows = 10;
  int cols = 12;
  std::vector<std::uint8_t> active;
  int steps = 26;
  double per_neighbor_prob = 0.05;
  std::map<int, double> quadrant_boost{{2, 0.1}, {3, 0.25}};
  bool frozen = true;

  GridSpec grid() const { return active.empty() ? GridSpec(rows, cols) : GridSpec(rows, cols, active); }
};

struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  int workers = 1;
  fs::path output_dir;
  DataSpec data;
  std::vector<MaskSpec> masks{{"left", "left_half", 0}};
  int train_steps = 25;
  TuningGrid grid;
  std::size_t top_k = 100;
  int members = 20;
  HorseshoeConfig horseshoe;
  SamplerConfig sampler;
  std::vector<ModelKind> models{ModelKind::BesnPlus, ModelKind::Besn, ModelKind::Logistic};
  double gamma = 0.95;
  /// Field indices [first, last] whose in-sample fit drives the ensemble weights.
  std::optional<std::pair<int, int>> weight_holdout;
  bool render = true;

  void validate() const {
    if (!seed) throw ConfigError("config must set an explicit root 'seed'");
    if (data.source != "simulate" && data.source != "file") throw ConfigError("data.source must be simulate or file");
    if (data.source == "file" && !fs::exists(data.path))
      throw ConfigError("data file does not exist: " + data.path.string());
    if (data.rows < 1 || data.cols < 1) throw ConfigError("grid must have positive dimensions");
    if (data.source == "simulate" && data.steps < train_steps + 1)
      throw ConfigError("simulation must cover the training window plus the forecast step");
    if (train_steps < 3) throw ConfigError("train_steps must be at least 3");
    if (members < 1) throw ConfigError("members must be at least 1");
    if (models.empty()) throw ConfigError("no models requested");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (weight_holdout && (weight_holdout->first < 1 || weight_holdout->second >= train_steps ||
                           weight_holdout->first > weight_holdout->second))
      throw ConfigError("weight holdout must lie within fields 1..train_steps-1");
    for (const auto& m : masks)
      if (m.kind != "left_half" && m.kind != "quadrant") throw ConfigError("unknown mask kind '" + m.kind + "'");
    grid.validate();
    horseshoe.validate();
    sampler.validate();
  }
};

inline ModelKind parse_model(const std::string& s) {
  if (s == "besn_plus") return ModelKind::BesnPlus;
  if (s == "besn") return ModelKind::Besn;
  if (s == "logistic") return ModelKind::Logistic;
  throw ConfigError("unknown model '" + s + "'");
}

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Builds a config from JSON. Paths are resolved against `base_dir`.
inline PipelineConfig config_from_json(const Json& j, const fs::path& base_dir = {}) {
  using detail::read;
  detail::reject_unknown(j,
                         {"seed", "workers", "output_dir", "data", "masks", "train_steps", "tuning", "horseshoe",
                          "sampler", "members", "models", "gamma", "weight_holdout", "render"},
                         "config");
  PipelineConfig c;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    read(j, "workers", c.workers);
    if (j.contains("output_dir")) c.output_dir = base_dir / j.at("output_dir").get<std::string>();
    if (j.contains("data")) {
      const Json& d = j.at("data");
      detail::reject_unknown(d,
                             {"source", "path", "rows", "cols", "active", "steps", "per_neighbor_prob",
                              "quadrant_boost", "frozen"},
                             "data");
      read(d, "source", c.data.source);
      if (d.contains("path")) c.data.path = base_dir / d.at("path").get<std::string>();
      read(d, "rows", c.data.rows);
      read(d, "cols", c.data.cols);
      if (d.contains("active")) c.data.active = d.at("active").get<std::vector<std::uint8_t>>();
      read(d, "steps", c.data.steps);
      read(d, "per_neighbor_prob", c.data.per_neighbor_prob);
      if (d.contains("quadrant_boost")) {
        c.data.quadrant_boost.clear();
        for (const auto& [k, v] : d.at("quadrant_boost").items()) c.data.quadrant_boost[std::stoi(k)] = v.get<double>();
      }
      read(d, "frozen", c.data.frozen);
    }
    if (j.contains("masks")) {
      c.masks.clear();
      for (const auto& m : j.at("masks")) {
        detail::reject_unknown(m, {"name", "kind", "quadrant"}, "masks entry");
        MaskSpec s;
        read(m, "name", s.name);
        read(m, "kind", s.kind);
        read(m, "quadrant", s.quadrant);
        c.masks.push_back(s);
      }
    }
    read(j, "train_steps", c.train_steps);
    if (j.contains("tuning")) {
      const Json& t = j.at("tuning");
      detail::reject_unknown(t, {"nu", "pi_w", "pi_u", "a_w", "a_u", "n_h", "ridge", "top_k"}, "tuning");
      read(t, "nu", c.grid.nu);
      read(t, "pi_w", c.grid.pi_w);
      read(t, "pi_u", c.grid.pi_u);
      read(t, "a_w", c.grid.a_w);
      read(t, "a_u", c.grid.a_u);
      read(t, "n_h", c.grid.n_h);
      read(t, "ridge", c.grid.ridge);
      read(t, "top_k", c.top_k);
    }
    if (j.contains("horseshoe")) {
      const Json& h = j.at("horseshoe");
      detail::reject_unknown(h,
                             {"scale_global", "nu_global", "nu_local", "slab_scale", "slab_df", "scale_icept",
                              "scale_beta", "shared_intercept", "at_risk_only", "expected_nonzero_fraction"},
                             "horseshoe");
      read(h, "scale_global", c.horseshoe.scale_global);
      read(h, "nu_global", c.horseshoe.nu_global);
      read(h, "nu_local", c.horseshoe.nu_local);
      read(h, "slab_scale", c.horseshoe.slab_scale);
      read(h, "slab_df", c.horseshoe.slab_df);
      read(h, "scale_icept", c.horseshoe.scale_icept);
      read(h, "scale_beta", c.horseshoe.scale_beta);
      read(h, "shared_intercept", c.horseshoe.shared_intercept);
      read(h, "at_risk_only", c.horseshoe.at_risk_only);
      read(h, "expected_nonzero_fraction", c.horseshoe.expected_nonzero_fraction);
    }
    if (j.contains("sampler")) {
      const Json& s = j.at("sampler");
      detail::reject_unknown(s,
                             {"chains", "warmup", "samples", "thin", "max_depth", "adapt_delta", "init_radius",
                              "max_divergence_fraction", "max_rhat"},
                             "sampler");
      read(s, "chains", c.sampler.chains);
      read(s, "warmup", c.sampler.warmup);
      read(s, "samples", c.sampler.samples);
      read(s, "thin", c.sampler.thin);
      read(s, "max_depth", c.sampler.max_depth);
      read(s, "adapt_delta", c.sampler.adapt_delta);
      read(s, "init_radius", c.sampler.init_radius);
      read(s, "max_divergence_fraction", c.sampler.max_divergence_fraction);
      read(s, "max_rhat", c.sampler.max_rhat);
    }
    read(j, "members", c.members);
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& m : j.at("models")) c.models.push_back(parse_model(m.get<std::string>()));
    }
    read(j, "gamma", c.gamma);
    if (j.contains("weight_holdout") && !j.at("weight_holdout").is_null()) {
      const auto v = j.at("weight_holdout").get<std::vector<int>>();
      if (v.size() != 2) throw ConfigError("weight_holdout must be [first, last]");
      c.weight_holdout = std::pair{v[0], v[1]};
    }
    read(j, "render", c.render);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

inline Json to_json(const HorseshoeConfig& h) {
  return {{"scale_global", h.scale_global},
          {"nu_global", h.nu_global},
          {"nu_local", h.nu_local},
          {"slab_scale", h.slab_scale},
          {"slab_df", h.slab_df},
          {"scale_icept", h.scale_icept},
          {"scale_beta", h.scale_beta},
          {"shared_intercept", h.shared_intercept},
          {"at_risk_only", h.at_risk_only},
          {"expected_nonzero_fraction", h.expected_nonzero_fraction}};
}

inline Json to_json(const SamplerConfig& s) {
  return {{"chains", s.chains},
          {"warmup", s.warmup},
          {"samples", s.samples},
          {"thin", s.thin},
          {"max_depth", s.max_depth},
          {"adapt_delta", s.adapt_delta},
          {"init_radius", s.init_radius},
          {"max_divergence_fraction", s.max_divergence_fraction},
          {"max_rhat", s.max_rhat}};
}

inline Json to_json(const TuningGrid& g, std::size_t top_k) {
  return {{"nu", g.nu},   {"pi_w", g.pi_w},   {"pi_u", g.pi_u},  {"a_w", g.a_w},
          {"a_u", g.a_u}, {"n_h", g.n_h},     {"ridge", g.ridge}, {"top_k", top_k}};
}

inline Json data_json(const DataSpec& d) {
  Json j{{"source", d.source}, {"rows", d.rows}, {"cols", d.cols}, {"active", d.active}};
  if (d.source == "simulate") {
    Json boost = Json::object();
    for (const auto& [k, v] : d.quadrant_boost) boost[std::to_string(k)] = v;
    j["steps"] = d.steps;
    j["per_neighbor_prob"] = d.per_neighbor_prob;
    j["quadrant_boost"] = boost;
    j["frozen"] = d.frozen;
  } else {
    j["path"] = d.path.string();
  }
  return j;
}

inline Json masks_json(const std::vector<MaskSpec>& masks) {
  Json j = Json::array();
  for (const auto& m : masks) j.push_back({{"name", m.name}, {"kind", m.kind}, {"quadrant", m.quadrant}});
  return j;
}

/// Every field that influences results. Output location and worker count are excluded.
inline Json to_json(const PipelineConfig& c) {
  Json models = Json::array();
  for (auto m : c.models) models.push_back(model_name(m));
  Json j{{"seed", c.seed.value_or(0)},
         {"data", data_json(c.data)},
         {"masks", masks_json(c.masks)},
         {"train_steps", c.train_steps},
         {"tuning", to_json(c.grid, c.top_k)},
         {"horseshoe", to_json(c.horseshoe)},
         {"sampler", to_json(c.sampler)},
         {"members", c.members},
         {"models", models},
         {"gamma", c.gamma},
         {"render", c.render}};
  j["weight_holdout"] = c.weight_holdout ? Json{c.weight_holdout->first, c.weight_holdout->second} : Json(nullptr);
  return j;
}

inline std::string config_hash(const PipelineConfig& c) { return sha256_hex(canonical_json(to_json(c))); }

/// Output root: explicit value, else $BESN_OUTPUT_ROOT, else ./besn_out.
inline fs::path resolve_output_dir(const fs::path& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("BESN_OUTPUT_ROOT"); env != nullptr && *env != '\0') return fs::path(env);
  return fs::path("besn_out");
}

inline std::vector<RegionMask> build_masks(const std::vector<MaskSpec>& specs, const GridSpec& grid) {
  std::vector<RegionMask> out;
  const std::vector<int> quad = quadrant_regions(grid);
  for (const auto& s : specs) {
    if (s.kind == "left_half") {
      out.push_back(left_half_mask(grid, s.name));
    } else {
      Eigen::VectorXd v(grid.size());
      for (int i = 0; i < grid.size(); ++i) v(i) = quad[i] == s.quadrant ? 1.0 : 0.0;
      out.push_back({s.name, v});
    }
  }
  return out;
}

inline CaRules simulation_rules(const DataSpec& d) {
  const GridSpec grid = d.grid();
  CaRules r = quadrant_spread_rules(grid);
  r.per_neighbor_prob = d.per_neighbor_prob;
  r.region_boost = d.quadrant_boost;
  r.frozen = d.frozen;
  return r;
}

// ---------------------------------------------------------------- manifest

struct StageRecord {
  std::string name;
  std::string key;
  std::map<std::string, std::string> outputs;  // path relative to the output root -> sha256
};

struct RunManifest {
  std::string config_hash;
  std::string version = kArtifactVersion;
  std::vector<StageRecord> stages;

  Json to_json() const {
    Json st = Json::array();
    for (const auto& s : stages) st.push_back({{"name", s.name}, {"key", s.key}, {"outputs", s.outputs}});
    return {{"config_hash", config_hash}, {"version", version}, {"stages", st}};
  }

  static RunManifest from_json(const Json& j) {
    RunManifest m;
    m.config_hash = j.value("config_hash", "");
    m.version = j.value("version", "");
    for (const auto& s : j.value("stages", Json::array()))
      m.stages.push_back({s.at("name").get<std::string>(), s.at("key").get<std::string>(),
                          s.at("outputs").get<std::map<std::string, std::string>>()});
    return m;
  }

  const StageRecord* find(const std::string& name) const {
    for (const auto& s : stages)
      if (s.name == name) return &s;
    return nullptr;
  }
};

struct RunReport {
  RunManifest manifest;
  std::vector<std::string> ran;
  std::vector<std::string> skipped;
};

class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order{"data", "tune", "reservoir", "fit", "weight", "forecast", "score",
                                              "render"};
  return order;
}

// ---------------------------------------------------------------- pipeline

class Pipeline {
 public:
  Pipeline(PipelineConfig config, fs::path out, std::ostream* log = nullptr)
      : cfg_(std::move(config)), out_(std::move(out)), log_(log) {
    cfg_.validate();
    manifest_.config_hash = config_hash(cfg_);
    const fs::path mpath = out_ / "manifest.json";
    if (fs::exists(mpath)) {
      try {
        previous_ = RunManifest::from_json(Json::parse(read_file(mpath)));
      } catch (const std::exception&) {
        previous_ = RunManifest{};
      }
    }
  }

  /// Runs stages in order up to and including `until` (a stage family name).
  RunReport run(const std::string& until = "render") {
    const auto& order = stage_order();
    const auto stop = std::find(order.begin(), order.end(), until);
    if (stop == order.end()) throw ConfigError("unknown stage '" + until + "'");
    const auto upto = [&](const char* s) { return std::find(order.begin(), order.end(), s) <= stop; };

    const std::uint64_t seed = *cfg_.seed;
    stage_data(seed);
    if (upto("tune") && needs_reservoir()) stage_tune(seed);
    if (upto("reservoir") && needs_reservoir()) stage_reservoirs(seed);
    if (upto("fit")) stage_fits(seed);
    if (upto("weight")) stage_weights(seed);
    if (upto("forecast")) stage_forecasts();
    if (upto("score")) stage_score();
    if (upto("render") && cfg_.render) stage_render();
    return report_;
  }

  const fs::path& output_dir() const { return out_; }

 private:
  using Outputs = std::map<std::string, std::string>;  // relative path -> bytes

  struct Task {
    std::string name;
    Json material;
    std::function<Outputs(const std::string& key)> produce;
  };

  bool needs_reservoir() const {
    return std::any_of(cfg_.models.begin(), cfg_.models.end(), [](ModelKind k) { return uses_reservoir(k); });
  }

  static std::string stage_key(const std::string& name, const Json& material) {
    return sha256_hex(canonical_json(Json{{"stage", name}, {"version", kArtifactVersion}, {"inputs", material}}));
  }

  bool reusable(const std::string& name, const std::string& key) const {
    const StageRecord* prev = previous_.find(name);
    if (prev == nullptr || prev->key != key) return false;
    for (const auto& [rel, sum] : prev->outputs) {
      const fs::path p = out_ / rel;
      if (!fs::exists(p) || sha256_file(p) != sum) return false;
    }
    return true;
  }

  /// Runs independent tasks (in parallel up to the worker count), recording
  /// them in the manifest in task order.
  void run_tasks(std::vector<Task> tasks) {
    std::vector<std::string> keys(tasks.size());
    std::vector<bool> skip(tasks.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      keys[i] = stage_key(tasks[i].name, tasks[i].material);
      skip[i] = reusable(tasks[i].name, keys[i]);
      if (!skip[i]) todo.push_back(i);
    }
    std::vector<StageRecord> records(tasks.size());
    std::vector<std::string> errors(tasks.size());
    parallel_for(todo.size(), cfg_.workers, [&](std::size_t j) {
      const std::size_t i = todo[j];
      try {
        const Outputs outs = tasks[i].produce(keys[i]);
        StageRecord r{tasks[i].name, keys[i], {}};
        for (const auto& [rel, bytes] : outs) {
          write_file(out_ / rel, bytes);
          r.outputs[rel] = sha256_hex(bytes);
        }
        records[i] = std::move(r);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (skip[i]) {
        records[i] = *previous_.find(tasks[i].name);
        report_.skipped.push_back(tasks[i].name);
        if (log_) *log_ << "skip " << tasks[i].name << "\n";
      } else if (errors[i].empty()) {
        report_.ran.push_back(tasks[i].name);
        if (log_) *log_ << "ran  " << tasks[i].name << "\n";
      }
    }
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (errors[i].empty()) record(records[i]);
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (!errors[i].empty()) throw StageError(tasks[i].name, errors[i]);
  }

  void run_task(Task t) {
    std::vector<Task> v;
    v.push_back(std::move(t));
    run_tasks(std::move(v));
  }

  void record(const StageRecord& r) {
    auto it = std::find_if(manifest_.stages.begin(), manifest_.stages.end(),
                           [&](const StageRecord& s) { return s.name == r.name; });
    if (it == manifest_.stages.end())
      manifest_.stages.push_back(r);
    else
      *it = r;
    report_.manifest = manifest_;
    write_file(out_ / "manifest.json", canonical_json(manifest_.to_json()));
  }

  const StageRecord& current(const std::string& name) const {
    const StageRecord* r = manifest_.find(name);
    if (r == nullptr) throw StageError(name, "stage has not completed");
    return *r;
  }

  Json checksums(const std::string& name) const { return current(name).outputs; }

  // ----- stages

  void stage_data(std::uint64_t seed) {
    Json material{{"data", data_json(cfg_.data)}};
    if (cfg_.data.source == "simulate")
      material["seed"] = derive_seed(seed, tag("simulate"));
    else
      material["input_sha256"] = sha256_file(cfg_.data.path);
    run_task({"data", material, [this, seed](const std::string& key) {
                Outputs o;
                const GridSpec grid = cfg_.data.grid();
                if (cfg_.data.source == "simulate") {
                  const CaRules rules = simulation_rules(cfg_.data);
                  const BinarySeries s = simulate(grid, rules, cfg_.data.steps, derive_seed(seed, tag("simulate")));
                  o["data/series.csv"] = series_to_csv(s, "config_hash: " + key);
                  ColumnarFile truth;
                  truth.attributes["config_hash"] = key;
                  truth.attributes["description"] = "P(state 1 at t | field t-1); column 0 is the initial field";
                  truth.add("probability", true_state_probabilities(s, rules, s.steps()));
                  o["data/truth.col"] = encode_columnar(truth);
                } else {
                  const BinarySeries s = load_binary_series(cfg_.data.path, grid);
                  o["data/series.csv"] = series_to_csv(s, "config_hash: " + key);
                }
                return o;
              }});
  }

  BinarySeries series() const { return parse_series_csv(read_file(out_ / "data/series.csv"), cfg_.data.grid()); }

  PreparedData prepared() const {
    const BinarySeries s = series();
    return prepare_data(s, build_masks(cfg_.masks, s.grid()), cfg_.train_steps, cfg_.horseshoe.at_risk_only);
  }

  void stage_tune(std::uint64_t seed) {
    Json material{{"tuning", to_json(cfg_.grid, cfg_.top_k)},
                  {"train_steps", cfg_.train_steps},
                  {"data", checksums("data")},
                  {"seed", derive_seed(seed, tag("tune"))}};
    run_task({"tune", material, [this, seed](const std::string& key) {
                const PreparedData d = prepared();
                const TuningResult r =
                    search(cfg_.grid, d.tuning_data(), derive_seed(seed, tag("tune")), cfg_.top_k, cfg_.workers);
                Json ranges = Json::object();
                auto put = [&](const char* n, const ParamRange& p) { ranges[n] = {p.low, p.high}; };
                put("nu", r.ranges.nu);
                put("pi_w", r.ranges.pi_w);
                put("pi_u", r.ranges.pi_u);
                put("a_w", r.ranges.a_w);
                put("a_u", r.ranges.a_u);
                put("n_h", r.ranges.n_h);
                put("ridge", r.ranges.ridge);
                Json ranked = Json::array();
                for (std::size_t i = 0; i < r.top_k_used; ++i) {
                  const auto& c = r.ranked[i];
                  ranked.push_back({{"index", c.index},
                                    {"mse", c.mse},
                                    {"nu", c.candidate.nu},
                                    {"pi_w", c.candidate.pi_w},
                                    {"pi_u", c.candidate.pi_u},
                                    {"a_w", c.candidate.a_w},
                                    {"a_u", c.candidate.a_u},
                                    {"n_h", c.candidate.n_h},
                                    {"ridge", c.candidate.ridge}});
                }
                Json j{{"config_hash", key},
                       {"ranges", ranges},
                       {"candidates", cfg_.grid.size()},
                       {"top_k_used", r.top_k_used},
                       {"ranked", ranked},
                       {"failures", r.failures}};
                return Outputs{{"tune/result.json", canonical_json(j)}};
              }});
  }

  TuningRanges ranges() const {
    const Json j = Json::parse(read_file(out_ / "tune/result.json")).at("ranges");
    auto get = [&](const char* n) { return ParamRange{j.at(n)[0].get<double>(), j.at(n)[1].get<double>()}; };
    TuningRanges r;
    r.nu = get("nu");
    r.pi_w = get("pi_w");
    r.pi_u = get("pi_u");
    r.a_w = get("a_w");
    r.a_u = get("a_u");
    r.n_h = get("n_h");
    r.ridge = get("ridge");
    return r;
  }

  static std::string reservoir_name(int k) { return "reservoir_" + std::to_string(k); }
  static std::string reservoir_path(int k) { return "reservoirs/" + reservoir_name(k) + ".col"; }
  static std::string fit_name(ModelKind m, int k) {
    return m == ModelKind::Logistic ? "fit_logistic" : "fit_" + model_name(m) + "_" + std::to_string(k);
  }
  static std::string fit_path(ModelKind m, int k) { return "fits/" + fit_name(m, k) + ".col"; }
  int member_count(ModelKind m) const { return uses_reservoir(m) ? cfg_.members : 1; }

  void stage_reservoirs(std::uint64_t seed) {
    std::vector<Task> tasks;
    for (int k = 0; k < cfg_.members; ++k) {
      Json material{{"member", k},
                    {"tune", checksums("tune")},
                    {"data", checksums("data")},
                    {"train_steps", cfg_.train_steps},
                    {"seed", seed}};
      tasks.push_back({reservoir_name(k), material, [this, seed, k](const std::string& key) {
                         const PreparedData d = prepared();
                         const ReservoirParams p = draw_member(ranges(), seed, k);
                         ColumnarFile f;
                         f.attributes = {{"config_hash", key},
                                         {"member", k},
                                         {"n_h", p.n_h},
                                         {"nu", p.nu},
                                         {"pi_w", p.pi_w},
                                         {"pi_u", p.pi_u},
                                         {"a_w", p.a_w},
                                         {"a_u", p.a_u},
                                         {"seed", p.seed}};
                         f.add("states", member_states(p, d));
                         return Outputs{{reservoir_path(k), encode_columnar(f)}};
                       }});
    }
    run_tasks(std::move(tasks));
  }

  void stage_fits(std::uint64_t seed) {
    std::vector<Task> tasks;
    for (ModelKind m : cfg_.models)
      for (int k = 0; k < member_count(m); ++k) {
        Json material{{"model", model_name(m)},
                      {"member", k},
                      {"horseshoe", to_json(cfg_.horseshoe)},
                      {"sampler", to_json(cfg_.sampler)},
                      {"masks", masks_json(cfg_.masks)},
                      {"train_steps", cfg_.train_steps},
                      {"data", checksums("data")},
                      {"sampler_seed", member_sampler(cfg_.sampler, seed, m, k).seed}};
        if (uses_reservoir(m)) material["reservoir"] = checksums(reservoir_name(k));
        tasks.push_back({fit_name(m, k), material, [this, seed, m, k](const std::string& key) {
                           const PreparedData d = prepared();
                           Eigen::MatrixXd states;
                           if (uses_reservoir(m)) states = read_columnar(out_ / reservoir_path(k)).get("states");
                           const MemberFit fit =
                               fit_member(d, m, states, cfg_.horseshoe, member_sampler(cfg_.sampler, seed, m, k));
                           ColumnarFile f = draws_to_columnar(fit.draws);
                           f.attributes["config_hash"] = key;
                           f.attributes["model"] = model_name(m);
                           f.attributes["member"] = k;
                           f.add("in_sample_mean", fit.in_sample_mean);
                           f.add("forecast", fit.forecast);
                           return Outputs{{fit_path(m, k), encode_columnar(f)}};
                         }});
      }
    run_tasks(std::move(tasks));
  }

  Json fit_checksums(ModelKind m) const {
    Json j = Json::array();
    for (int k = 0; k < member_count(m); ++k) j.push_back(checksums(fit_name(m, k)));
    return j;
  }

  void stage_weights(std::uint64_t seed) {
    std::vector<Task> tasks;
    for (ModelKind m : cfg_.models) {
      Json material{{"fits", fit_checksums(m)}, {"seed", derive_seed(seed, tag("weights"))}};
      material["holdout"] =
          cfg_.weight_holdout ? Json{cfg_.weight_holdout->first, cfg_.weight_holdout->second} : Json(nullptr);
      tasks.push_back({"weight_" + model_name(m), material, [this, seed, m](const std::string& key) {
                         const PreparedData d = prepared();
                         int c0 = 0, c1 = d.steps() - 1;
                         if (cfg_.weight_holdout) {
                           c0 = cfg_.weight_holdout->first - 1;
                           c1 = cfg_.weight_holdout->second - 1;
                         }
                         std::vector<Eigen::MatrixXd> P;
                         for (int k = 0; k < member_count(m); ++k)
                           P.push_back(read_columnar(out_ / fit_path(m, k)).get("in_sample_mean").middleCols(c0, c1 - c0 + 1));
                         WeightOptions opt;
                         opt.seed = derive_seed(seed, tag("weights"));
                         const EnsembleWeights w =
                             optimize_weights(P, d.y.middleCols(c0, c1 - c0 + 1), d.mask.middleCols(c0, c1 - c0 + 1), opt);
                         const EnsembleLoss loss =
                             ensemble_loss(w.w, P, d.y.middleCols(c0, c1 - c0 + 1), d.mask.middleCols(c0, c1 - c0 + 1));
                         Json j{{"config_hash", key},
                                {"model", model_name(m)},
                                {"weights", std::vector<double>(w.w.data(), w.w.data() + w.w.size())},
                                {"loss", w.loss_at_optimum},
                                {"clamped_terms", loss.clamped},
                                {"iterations", w.iterations},
                                {"starts", w.starts},
                                {"converged", w.converged},
                                {"warning", w.warning},
                                {"fields", {c0 + 1, c1 + 1}}};
                         return Outputs{{"weights/" + model_name(m) + ".json", canonical_json(j)}};
                       }});
    }
    run_tasks(std::move(tasks));
  }

  Eigen::VectorXd weights(ModelKind m) const {
    const auto v =
        Json::parse(read_file(out_ / ("weights/" + model_name(m) + ".json"))).at("weights").get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  void stage_forecasts() {
    std::vector<Task> tasks;
    for (ModelKind m : cfg_.models) {
      Json material{{"fits", fit_checksums(m)}, {"weights", checksums("weight_" + model_name(m))}, {"gamma", cfg_.gamma}};
      tasks.push_back({"forecast_" + model_name(m), material, [this, m](const std::string& key) {
                         std::vector<Eigen::MatrixXd> draws, in_sample;
                         for (int k = 0; k < member_count(m); ++k) {
                           const ColumnarFile f = read_columnar(out_ / fit_path(m, k));
                           draws.push_back(f.get("forecast"));
                           in_sample.push_back(f.get("in_sample_mean"));
                         }
                         const Eigen::VectorXd w = weights(m);
                         const ForecastDistribution fd = weighted_predictive(draws, w, cfg_.gamma);
                         Eigen::MatrixXd in_mean = Eigen::MatrixXd::Zero(in_sample[0].rows(), in_sample[0].cols());
                         for (std::size_t k = 0; k < in_sample.size(); ++k) in_mean += w(static_cast<Eigen::Index>(k)) * in_sample[k];
                         ColumnarFile f;
                         f.attributes = {{"config_hash", key}, {"model", model_name(m)}, {"gamma", cfg_.gamma},
                                         {"forecast_field", cfg_.train_steps}};
                         f.add("draws", fd.draws);
                         f.add("mean", fd.mean);
                         f.add("low", fd.low);
                         f.add("high", fd.high);
                         f.add("in_sample_mean", in_mean);
                         std::ostringstream csv;
                         csv << "# config_hash: " << key << "\ncell,mean,low,high\n";
                         for (Eigen::Index i = 0; i < fd.mean.size(); ++i)
                           csv << i << "," << detail::format_double(fd.mean(i)) << "," << detail::format_double(fd.low(i))
                               << "," << detail::format_double(fd.high(i)) << "\n";
                         return Outputs{{"forecast/" + model_name(m) + ".col", encode_columnar(f)},
                                        {"forecast/" + model_name(m) + ".csv", csv.str()}};
                       }});
    }
    run_tasks(std::move(tasks));
  }

  void stage_score() {
    Json material{{"data", checksums("data")}, {"train_steps", cfg_.train_steps}};
    for (ModelKind m : cfg_.models) material["forecast_" + model_name(m)] = checksums("forecast_" + model_name(m));
    run_task({"score", material, [this](const std::string& key) {
                const BinarySeries s = series();
                const PreparedData d = prepared();
                const int target = cfg_.train_steps;
                const bool have_target = s.steps() > target;
                std::optional<Eigen::MatrixXd> truth;
                if (fs::exists(out_ / "data/truth.col"))
                  truth = read_columnar(out_ / "data/truth.col").get("probability");
                Eigen::VectorXd active_mask;
                if (s.grid().has_mask()) {
                  active_mask.resize(s.cells());
                  for (int i = 0; i < s.cells(); ++i) active_mask(i) = s.grid().is_active(i) ? 1.0 : 0.0;
                }
                Json models = Json::object();
                std::ostringstream table;
                table << "# config_hash: " << key << "\nmodel,brier_forecast,brier_in_sample,coverage,mean_width\n";
                for (ModelKind m : cfg_.models) {
                  const ColumnarFile f = read_columnar(out_ / ("forecast/" + model_name(m) + ".col"));
                  MetricReport rep;
                  std::vector<TimeBrier> per_time;
                  const double in_sample = brier_score(f.get("in_sample_mean"), s, 1, &per_time);
                  Json jm{{"brier_in_sample", in_sample}};
                  Json pt = Json::array();
                  for (const auto& r : per_time) pt.push_back({{"field", r.t}, {"cells", r.cells}, {"brier", r.brier}});
                  jm["per_time_in_sample"] = pt;
                  const Eigen::VectorXd low = f.get("low"), high = f.get("high"), mean = f.get("mean");
                  jm["mean_interval_width"] = (high - low).mean();
                  std::string cov = "n/a", bf = "n/a";
                  if (have_target) {
                    const Eigen::VectorXd o = s.as_double().col(target);
                    rep.brier = brier_score(Eigen::MatrixXd(mean), Eigen::MatrixXd(o), active_mask);
                    rep.coverage = empirical_coverage(low, high, o, active_mask);
                    jm["brier_forecast"] = rep.brier;
                    jm["coverage"] = rep.coverage;
                    jm["coverage_rule"] = rep.coverage_rule;
                    cov = detail::format_double(rep.coverage);
                    bf = detail::format_double(rep.brier);
                    if (truth && truth->cols() > target)
                      jm["truth_inside_interval"] = interval_contains(low, high, truth->col(target), active_mask);
                  }
                  models[model_name(m)] = jm;
                  table << model_name(m) << "," << bf << "," << detail::format_double(in_sample) << "," << cov << ","
                        << detail::format_double((high - low).mean()) << "\n";
                }
                Json j{{"config_hash", key}, {"forecast_field", target}, {"models", models}};
                return Outputs{{"score/report.json", canonical_json(j)}, {"score/brier_table.csv", table.str()}};
              }});
  }

  void stage_render() {
    Json material{{"data", checksums("data")}, {"train_steps", cfg_.train_steps}};
    for (ModelKind m : cfg_.models) material["forecast_" + model_name(m)] = checksums("forecast_" + model_name(m));
    run_task({"render", material, [this](const std::string& key) {
                const BinarySeries s = series();
                const GridSpec& g = s.grid();
                Outputs o;
                std::vector<Eigen::VectorXd> states;
                for (int t = 0; t < std::min(cfg_.train_steps, s.steps()); ++t) states.push_back(s.as_double().col(t));
                o["figures/states_train.png"] = encode_png(render_panels(states, g, FieldKind::State), {{"config_hash", key}});
                if (s.steps() > cfg_.train_steps)
                  o["figures/observed_forecast_field.png"] =
                      encode_png(render_field(s.as_double().col(cfg_.train_steps), g, FieldKind::State), {{"config_hash", key}});
                for (ModelKind m : cfg_.models) {
                  const ColumnarFile f = read_columnar(out_ / ("forecast/" + model_name(m) + ".col"));
                  const Eigen::MatrixXd& in = f.get("in_sample_mean");
                  std::vector<Eigen::VectorXd> panels;
                  for (Eigen::Index t = 0; t < in.cols(); ++t) panels.push_back(in.col(t));
                  o["figures/" + model_name(m) + "_in_sample.png"] =
                      encode_png(render_panels(panels, g, FieldKind::Probability), {{"config_hash", key}});
                  const std::vector<Eigen::VectorXd> triple{f.get("low"), f.get("mean"), f.get("high")};
                  o["figures/" + model_name(m) + "_forecast.png"] =
                      encode_png(render_panels(triple, g, FieldKind::Probability, 12, 3), {{"config_hash", key}});
                }
                return o;
              }});
  }

  PipelineConfig cfg_;
  fs::path out_;
  std::ostream* log_;
  RunManifest previous_;
  RunManifest manifest_;
  RunReport report_;
};

inline RunReport run_pipeline(const PipelineConfig& config, const fs::path& out, const std::string& until = "render",
                              std::ostream* log = nullptr) {
  Pipeline p(config, out, log);
  return p.run(until);
}

}  // namespace besn
