#include "pspo/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <initializer_list>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include <json.hpp>

namespace pspo {

using json = nlohmann::ordered_json;

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{})
    throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

// ===========================================================================
// Config parsing
// ===========================================================================

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw ConfigError("config field '" + field + "': " + why);
}

void check_keys(const json& obj, const std::string& scope,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end())
      bad_field(scope.empty() ? key : scope + "." + key, "unknown key");
  }
}

double as_double(const json& v, const std::string& field) {
  if (!v.is_number()) bad_field(field, "expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& field) {
  if (!v.is_number_integer()) bad_field(field, "expected an integer");
  return v.get<int>();
}

bool as_bool(const json& v, const std::string& field) {
  if (!v.is_boolean()) bad_field(field, "expected a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& field) {
  if (!v.is_string()) bad_field(field, "expected a string");
  return v.get<std::string>();
}

std::uint64_t as_uint64(const json& v, const std::string& field) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    bad_field(field, "expected a nonnegative integer");
  return v.get<std::uint64_t>();
}

TrainConfig parse_train_section(const json& t) {
  check_keys(t, "train",
             {"mode", "alpha", "epsilon", "beta", "iterations_mu", "token_agg",
              "learning_rate", "batch_prompts", "group_size", "total_steps",
              "eval_every", "optimizer", "temperature", "ratio_convention",
              "normalize_advantage", "grade_tolerance", "select_best"});
  TrainConfig cfg;
  try {
    if (t.contains("mode"))
      cfg.surrogate.mode = parse_mode(as_string(t["mode"], "train.mode"));
    if (t.contains("token_agg"))
      cfg.surrogate.token_agg =
          parse_token_agg(as_string(t["token_agg"], "train.token_agg"));
    if (t.contains("optimizer"))
      cfg.optimizer =
          parse_optimizer(as_string(t["optimizer"], "train.optimizer"));
    if (t.contains("ratio_convention")) {
      const auto s =
          as_string(t["ratio_convention"], "train.ratio_convention");
      if (s == "untempered") cfg.convention = RatioConvention::untempered;
      else if (s == "tempered") cfg.convention = RatioConvention::tempered;
      else bad_field("train.ratio_convention", "expected untempered|tempered");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config field in 'train': ") + e.what());
  }
  if (t.contains("alpha"))
    cfg.surrogate.alpha = as_double(t["alpha"], "train.alpha");
  if (t.contains("epsilon"))
    cfg.surrogate.epsilon = as_double(t["epsilon"], "train.epsilon");
  if (t.contains("beta")) cfg.surrogate.beta = as_double(t["beta"], "train.beta");
  if (t.contains("iterations_mu"))
    cfg.surrogate.iterations_mu =
        as_int(t["iterations_mu"], "train.iterations_mu");
  if (t.contains("learning_rate"))
    cfg.learning_rate = as_double(t["learning_rate"], "train.learning_rate");
  if (t.contains("batch_prompts"))
    cfg.batch_prompts = as_int(t["batch_prompts"], "train.batch_prompts");
  if (t.contains("group_size"))
    cfg.group_size = as_int(t["group_size"], "train.group_size");
  if (t.contains("total_steps"))
    cfg.total_steps = as_int(t["total_steps"], "train.total_steps");
  if (t.contains("eval_every"))
    cfg.eval_every = as_int(t["eval_every"], "train.eval_every");
  if (t.contains("temperature"))
    cfg.temperature = as_double(t["temperature"], "train.temperature");
  if (t.contains("normalize_advantage"))
    cfg.normalize_advantage =
        as_bool(t["normalize_advantage"], "train.normalize_advantage");
  if (t.contains("grade_tolerance"))
    cfg.grade_tolerance =
        as_double(t["grade_tolerance"], "train.grade_tolerance");
  if (t.contains("select_best"))
    cfg.select_best = as_bool(t["select_best"], "train.select_best");
  return cfg;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");
  check_keys(root, "",
             {"preset", "lr_scale", "taskset_path", "seeds", "output_dir",
              "train"});
  ExperimentConfig cfg;
  if (root.contains("preset"))
    cfg.preset = as_string(root["preset"], "preset");
  if (root.contains("lr_scale"))
    cfg.lr_scale = as_string(root["lr_scale"], "lr_scale");
  if (root.contains("taskset_path"))
    cfg.taskset_path = as_string(root["taskset_path"], "taskset_path");
  if (root.contains("output_dir"))
    cfg.output_dir = as_string(root["output_dir"], "output_dir");
  if (root.contains("seeds")) {
    if (!root["seeds"].is_array()) bad_field("seeds", "expected an array");
    for (const auto& s : root["seeds"])
      cfg.seeds.push_back(as_uint64(s, "seeds"));
  }
  if (root.contains("train")) {
    if (!root["train"].is_object()) bad_field("train", "expected an object");
    cfg.train = parse_train_section(root["train"]);
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

void ExperimentConfig::validate() const {
  if (preset) preset_cell(*preset, train.surrogate.mode);  // name check
  if (lr_scale != "tabular" && lr_scale != "reference")
    bad_field("lr_scale", "expected tabular|reference");
  if (taskset_path.empty()) bad_field("taskset_path", "required");
  if (output_dir.empty()) bad_field("output_dir", "required");
  if (seeds.empty()) bad_field("seeds", "need at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() !=
      seeds.size())
    bad_field("seeds", "seeds must be distinct");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config field 'train.': ") + e.what());
  }
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json root;
  if (cfg.preset) root["preset"] = *cfg.preset;
  root["lr_scale"] = cfg.lr_scale;
  root["taskset_path"] = cfg.taskset_path;
  root["seeds"] = cfg.seeds;
  root["output_dir"] = cfg.output_dir;
  json t;
  t["mode"] = to_string(cfg.train.surrogate.mode);
  t["alpha"] = cfg.train.surrogate.alpha;
  t["epsilon"] = cfg.train.surrogate.epsilon;
  t["beta"] = cfg.train.surrogate.beta;
  t["iterations_mu"] = cfg.train.surrogate.iterations_mu;
  t["token_agg"] = to_string(cfg.train.surrogate.token_agg);
  t["learning_rate"] = cfg.train.learning_rate;
  t["batch_prompts"] = cfg.train.batch_prompts;
  t["group_size"] = cfg.train.group_size;
  t["total_steps"] = cfg.train.total_steps;
  t["eval_every"] = cfg.train.eval_every;
  t["optimizer"] = to_string(cfg.train.optimizer);
  t["temperature"] = cfg.train.temperature;
  t["ratio_convention"] = cfg.train.convention == RatioConvention::untempered
                              ? "untempered"
                              : "tempered";
  t["normalize_advantage"] = cfg.train.normalize_advantage;
  t["grade_tolerance"] = cfg.train.grade_tolerance;
  t["select_best"] = cfg.train.select_best;
  root["train"] = std::move(t);
  return root.dump(2) + "\n";
}

// ===========================================================================
// Presets
// ===========================================================================

namespace {

const std::map<std::string, std::map<Mode, PresetCell>>& preset_table() {
  static const auto* table = new std::map<std::string, std::map<Mode, PresetCell>>{
      {"table1-0.5B",
       {
           {Mode::noclip, {1, 1e-6, 1e-3, std::nullopt, std::nullopt}},
           {Mode::clip, {2, 5e-6, 5e-3, 0.1, std::nullopt}},
           {Mode::pspo, {2, 5e-7, 5e-4, std::nullopt, 0.1}},
       }},
      {"table1-1.5B",
       {
           {Mode::noclip, {1, 1e-6, 1e-3, std::nullopt, std::nullopt}},
           {Mode::clip, {2, 5e-7, 5e-4, 0.2, std::nullopt}},
           {Mode::pspo, {2, 5e-7, 5e-4, std::nullopt, 0.1}},
       }},
  };
  return *table;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const auto* names = [] {
    auto* v = new std::vector<std::string>;
    for (const auto& [name, cells] : preset_table()) v->push_back(name);
    return v;
  }();
  return *names;
}

PresetCell preset_cell(const std::string& preset, Mode mode) {
  const auto it = preset_table().find(preset);
  if (it == preset_table().end()) {
    std::string known;
    for (const auto& name : preset_names())
      known += (known.empty() ? "" : ", ") + name;
    throw ConfigError("unknown preset '" + preset + "' (known: " + known + ")");
  }
  // raw mode borrows the pspo row's learning rate and iterations but keeps
  // its ratio untransformed, so no alpha is pinned.
  const Mode lookup = mode == Mode::raw ? Mode::pspo : mode;
  PresetCell cell = it->second.at(lookup);
  if (mode == Mode::raw) cell.alpha.reset();
  return cell;
}

void apply_preset(ExperimentConfig& cfg) {
  if (!cfg.preset) return;
  const PresetCell cell = preset_cell(*cfg.preset, cfg.train.surrogate.mode);
  cfg.train.learning_rate =
      cfg.lr_scale == "reference" ? cell.lr_reference : cell.lr_tabular;
  cfg.train.surrogate.iterations_mu = cell.iterations;
  if (cell.epsilon) cfg.train.surrogate.epsilon = *cell.epsilon;
  if (cell.alpha) cfg.train.surrogate.alpha = *cell.alpha;
}

// ===========================================================================
// Run records
// ===========================================================================

std::string run_records_to_jsonl(const std::vector<RunRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    json line;
    line["step"] = rec.step;
    line["pass"] = rec.pass;
    line["mean_reward"] = rec.mean_reward;
    line["objective"] = rec.objective;
    line["max_ratio_dev"] = rec.max_ratio_dev;
    line["max_transformed_dev"] = rec.max_transformed_dev;
    line["tv_mean"] = rec.tv_mean;
    line["kl_mean"] = rec.kl_mean;
    if (rec.greedy_accuracy)
      line["greedy_accuracy"] = *rec.greedy_accuracy;
    else
      line["greedy_accuracy"] = nullptr;
    line["nonfinite"] = rec.nonfinite_flag;
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::vector<RunRecord> parse_run_records(const std::string& jsonl) {
  std::vector<RunRecord> records;
  std::stringstream ss(jsonl);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    RunRecord rec;
    rec.step = j.at("step").get<int>();
    rec.pass = j.at("pass").get<int>();
    rec.mean_reward = j.at("mean_reward").get<double>();
    rec.objective = j.at("objective").get<double>();
    rec.max_ratio_dev = j.at("max_ratio_dev").get<double>();
    rec.max_transformed_dev = j.at("max_transformed_dev").get<double>();
    rec.tv_mean = j.at("tv_mean").get<double>();
    rec.kl_mean = j.at("kl_mean").get<double>();
    if (j.contains("greedy_accuracy") && !j["greedy_accuracy"].is_null())
      rec.greedy_accuracy = j["greedy_accuracy"].get<double>();
    rec.nonfinite_flag = j.at("nonfinite").get<bool>();
    records.push_back(rec);
  }
  return records;
}

// ===========================================================================
// Policy serialization
// ===========================================================================

void save_policy(const std::filesystem::path& path,
                 const TabularPolicy& policy) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << "vocab_size\t" << policy.vocab_size() << '\n';
  for (const auto& [state, logits] : policy.params()) {
    out << state.prompt_id << '|';
    for (std::size_t i = 0; i < state.prefix.size(); ++i) {
      if (i > 0) out << ',';
      out << state.prefix[i];
    }
    out << '\t';
    for (std::size_t k = 0; k < logits.size(); ++k) {
      if (k > 0) out << ' ';
      out << format_double(logits[k]);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string::size_type start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double_exact(const std::string& s, const std::string& context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw std::runtime_error("bad number '" + s + "' in " + context);
  return v;
}

}  // namespace

TabularPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open policy: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("vocab_size\t", 0) != 0)
    throw std::runtime_error("policy file missing vocab_size header: " +
                             path.string());
  const int vocab = static_cast<int>(
      parse_double_exact(line.substr(11), path.string() + " header"));
  TabularPolicy policy(vocab);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context = path.string() + ":" + std::to_string(line_no);
    const auto cols = split(line, '\t');
    if (cols.size() != 2)
      throw std::runtime_error("expected 2 tab-separated columns in " + context);
    const auto key_parts = split(cols[0], '|');
    if (key_parts.size() != 2)
      throw std::runtime_error("bad state key in " + context);
    StateKey state;
    state.prompt_id =
        static_cast<int>(parse_double_exact(key_parts[0], context));
    if (!key_parts[1].empty())
      for (const auto& tok : split(key_parts[1], ','))
        state.prefix.push_back(
            static_cast<int>(parse_double_exact(tok, context)));
    std::vector<double> logits;
    for (const auto& v : split(cols[1], ' '))
      logits.push_back(parse_double_exact(v, context));
    if (static_cast<int>(logits.size()) != vocab)
      throw std::runtime_error("logit count differs from vocab_size in " +
                               context);
    policy.mutable_logits(state) = std::move(logits);
  }
  return policy;
}

// ===========================================================================
// Experiment driver
// ===========================================================================

namespace {

TrainConfig resolved_train_config(const ExperimentConfig& cfg, Mode mode) {
  TrainConfig t = config_for_mode(cfg.train, mode);
  if (cfg.preset) {
    const PresetCell cell = preset_cell(*cfg.preset, mode);
    t.learning_rate =
        cfg.lr_scale == "reference" ? cell.lr_reference : cell.lr_tabular;
    t.surrogate.iterations_mu = cell.iterations;
    if (cell.epsilon) t.surrogate.epsilon = *cell.epsilon;
    if (cell.alpha) t.surrogate.alpha = *cell.alpha;
  }
  return t;
}

std::string yes_no(bool b) { return b ? "yes" : "no"; }

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::string summary_table(const ComparisonReport& report) {
  std::ostringstream out;
  out << "mode\tseed\tlearning_rate\titerations_mu\tfinal_accuracy\t"
         "best_accuracy\theldout_accuracy\tfinal_mean_reward\t"
         "mean_max_dev_first\tmean_max_dev_later\tmean_max_tdev_first\t"
         "mean_max_tdev_later\tdiverged\tsteps_completed\n";
  for (const auto& run : report.runs) {
    out << to_string(run.mode) << '\t' << run.seed << '\t'
        << format_double(run.learning_rate) << '\t' << run.iterations_mu
        << '\t' << format_double(run.final_accuracy) << '\t'
        << (run.best_accuracy ? format_double(*run.best_accuracy) : "-")
        << '\t'
        << (run.heldout_accuracy ? format_double(*run.heldout_accuracy) : "-")
        << '\t' << format_double(run.final_mean_reward) << '\t'
        << format_double(run.mean_max_dev_first) << '\t'
        << format_double(run.mean_max_dev_later) << '\t'
        << format_double(run.mean_max_transformed_first) << '\t'
        << format_double(run.mean_max_transformed_later) << '\t'
        << yes_no(run.diverged) << '\t' << run.steps_completed << '\n';
  }

  // Per-mode aggregates in first-appearance order.
  std::vector<Mode> order;
  for (const auto& run : report.runs)
    if (std::find(order.begin(), order.end(), run.mode) == order.end())
      order.push_back(run.mode);
  out << "\nmode\truns\taccuracy_mean\taccuracy_ci95\tdiverged_runs\n";
  for (Mode mode : order) {
    std::vector<double> accs;
    int diverged = 0;
    for (const auto& run : report.runs) {
      if (run.mode != mode) continue;
      accs.push_back(run.final_accuracy);
      diverged += run.diverged ? 1 : 0;
    }
    const MeanCI ci = mean_ci95(accs);
    out << to_string(mode) << '\t' << accs.size() << '\t'
        << format_double(ci.mean) << '\t' << format_double(ci.half_width)
        << '\t' << diverged << '\n';
  }
  return out.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::vector<Mode>& modes, int workers) {
  if (modes.empty()) throw ConfigError("no modes requested");
  cfg.validate();

  std::unique_ptr<ArithmeticTaskSet> tasks;
  try {
    tasks = load_arithmetic_taskset_dir(cfg.taskset_path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("taskset_path: ") + e.what());
  }

  const std::filesystem::path out_dir(cfg.output_dir);
  std::filesystem::create_directories(out_dir);

  struct Job {
    Mode mode;
    std::uint64_t seed;
    TrainConfig train;
  };
  std::vector<Job> jobs;
  for (Mode mode : modes) {
    TrainConfig t = resolved_train_config(cfg, mode);
    for (std::uint64_t seed : cfg.seeds) {
      t.seed = seed;
      jobs.push_back({mode, seed, t});
    }
  }

  std::vector<std::optional<ModeRunStats>> slots(jobs.size());
  auto run_job = [&](std::size_t j) {
    const Job& job = jobs[j];
    const TrainResult result = train(*tasks, job.train);
    ModeRunStats stats = summarize_run(job.mode, job.seed, result);
    stats.learning_rate = job.train.learning_rate;
    stats.iterations_mu = job.train.surrogate.iterations_mu;
    stats.heldout_accuracy = evaluate_greedy(tasks->eval_tasks(), result.policy,
                                             job.train.grade_tolerance);

    const auto run_dir =
        out_dir / (to_string(job.mode) + "-seed-" + std::to_string(job.seed));
    std::filesystem::create_directories(run_dir);
    write_text_file(run_dir / "records.jsonl",
                    run_records_to_jsonl(result.records));
    save_policy(run_dir / "policy.tsv", result.policy);
    if (result.best_policy)
      save_policy(run_dir / "best_policy.tsv", *result.best_policy);
    slots[j] = std::move(stats);
  };

  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    for (std::size_t base = 0; base < jobs.size();
         base += static_cast<std::size_t>(workers)) {
      std::vector<std::future<void>> wave;
      const std::size_t end =
          std::min(jobs.size(), base + static_cast<std::size_t>(workers));
      for (std::size_t j = base; j < end; ++j)
        wave.push_back(std::async(std::launch::async, run_job, j));
      for (auto& f : wave) f.get();
    }
  }

  ExperimentResult result;
  for (auto& slot : slots) {
    result.any_diverged = result.any_diverged || slot->diverged;
    result.report.runs.push_back(std::move(*slot));
  }
  write_text_file(out_dir / "config.json", experiment_config_to_json(cfg));
  write_text_file(out_dir / "summary.tsv", summary_table(result.report));
  return result;
}

// ===========================================================================
// Surrogate-shape dataset
// ===========================================================================

std::vector<SurrogateShapeRow> surrogate_shape_dataset(double epsilon,
                                                       double alpha,
                                                       double r_min,
                                                       double r_max,
                                                       double r_step) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("surrogate_shape_dataset: epsilon in (0, 1)");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("surrogate_shape_dataset: alpha in [0, 1]");
  if (!(r_min >= 0.0) || !(r_max > r_min) || !(r_step > 0.0))
    throw std::invalid_argument("surrogate_shape_dataset: bad ratio grid");
  const auto count =
      static_cast<std::size_t>(std::llround((r_max - r_min) / r_step)) + 1;
  std::vector<SurrogateShapeRow> rows;
  rows.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double r = r_min + static_cast<double>(i) * r_step;
    SurrogateShapeRow row;
    row.r = r;
    row.clip_pos = clipped_term(r, 1.0, epsilon);
    row.clip_neg = clipped_term(r, -1.0, epsilon);
    row.pspo_pos = pspo_term(r, 1.0, alpha);
    row.pspo_neg = pspo_term(r, -1.0, alpha);
    row.dclip_pos = clipped_term_slope(r, 1.0, epsilon);
    row.dclip_neg = clipped_term_slope(r, -1.0, epsilon);
    row.dpspo_pos = pspo_term_slope(1.0, alpha);
    row.dpspo_neg = pspo_term_slope(-1.0, alpha);
    rows.push_back(row);
  }
  return rows;
}

std::string surrogate_shape_csv(const std::vector<SurrogateShapeRow>& rows) {
  std::string out =
      "r,clip_term_adv_pos,clip_term_adv_neg,pspo_term_adv_pos,"
      "pspo_term_adv_neg,clip_slope_adv_pos,clip_slope_adv_neg,"
      "pspo_slope_adv_pos,pspo_slope_adv_neg\n";
  for (const auto& row : rows) {
    out += format_double(row.r);
    out += ',';
    out += format_double(row.clip_pos);
    out += ',';
    out += format_double(row.clip_neg);
    out += ',';
    out += format_double(row.pspo_pos);
    out += ',';
    out += format_double(row.pspo_neg);
    out += ',';
    out += format_double(row.dclip_pos);
    out += ',';
    out += format_double(row.dclip_neg);
    out += ',';
    out += format_double(row.dpspo_pos);
    out += ',';
    out += format_double(row.dpspo_neg);
    out += '\n';
  }
  return out;
}

}  // namespace pspo
