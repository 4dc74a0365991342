#include <doctest.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pspo/envs.hpp"
#include "pspo/experiment.hpp"

using namespace pspo;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path temp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() /
             (std::string("pspo_exp_") + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ExperimentConfig small_config(const std::filesystem::path& taskset,
                              const std::filesystem::path& out) {
  ExperimentConfig cfg;
  cfg.taskset_path = taskset.string();
  cfg.output_dir = out.string();
  cfg.seeds = {1, 2};
  cfg.train.surrogate.mode = Mode::pspo;
  cfg.train.surrogate.alpha = 0.1;
  cfg.train.surrogate.iterations_mu = 2;
  cfg.train.learning_rate = 0.1;
  cfg.train.batch_prompts = 2;
  cfg.train.group_size = 4;
  cfg.train.total_steps = 6;
  cfg.train.eval_every = 3;
  return cfg;
}

void write_small_taskset(const std::filesystem::path& dir) {
  save_taskset(dir / "train.csv", make_arithmetic_tasks(4, 11));
  save_taskset(dir / "eval.csv", make_arithmetic_tasks(3, 12, 4));
}

}  // namespace

TEST_CASE("format_double round trips exactly") {
  for (double v : {0.1, 1e-6, 1.0 / 3.0, 0.05, -0.0, 5e-7, 1234.5,
                   0.0822828785050517}) {
    std::string s = format_double(v);
    double back = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), back);
    REQUIRE(ec == std::errc{});
    CHECK(back == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e-6) == "1e-06");
  CHECK(format_double(2.0) == "2");
}

TEST_CASE("config json round trips and is canonical") {
  ExperimentConfig cfg;
  cfg.preset = "table1-0.5B";
  cfg.taskset_path = "data/tasks";
  cfg.output_dir = "out";
  cfg.seeds = {3, 1, 2};
  cfg.train.surrogate.mode = Mode::clip;
  cfg.train.surrogate.epsilon = 0.2;
  cfg.train.learning_rate = 0.005;
  cfg.train.total_steps = 123;

  std::string json = experiment_config_to_json(cfg);
  ExperimentConfig back = parse_experiment_config(json);
  CHECK(back.preset == cfg.preset);
  CHECK(back.taskset_path == cfg.taskset_path);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.train.surrogate.mode == Mode::clip);
  CHECK(back.train.surrogate.epsilon == 0.2);
  CHECK(back.train.learning_rate == 0.005);
  CHECK(back.train.total_steps == 123);
  // Serialization is a fixed point.
  CHECK(experiment_config_to_json(back) == json);
}

TEST_CASE("config parser rejects unknown and mistyped keys") {
  CHECK_THROWS_WITH_AS(
      (void)parse_experiment_config(R"({"sseds": [1]})"),
      doctest::Contains("sseds"), ConfigError);
  CHECK_THROWS_WITH_AS(
      (void)parse_experiment_config(R"({"train": {"momentum": 0.9}})"),
      doctest::Contains("momentum"), ConfigError);
  CHECK_THROWS_WITH_AS(
      (void)parse_experiment_config(R"({"seeds": "one"})"),
      doctest::Contains("seeds"), ConfigError);
  CHECK_THROWS_WITH_AS(
      (void)parse_experiment_config(R"({"train": {"mode": "ppo"}})"),
      doctest::Contains("mode"), ConfigError);
  CHECK_THROWS_AS((void)parse_experiment_config("not json"), ConfigError);
}

TEST_CASE("config validation requires coherent fields") {
  ExperimentConfig cfg;
  cfg.taskset_path = "tasks";
  cfg.output_dir = "out";
  cfg.seeds = {1, 1};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("seeds"),
                       ConfigError);
  cfg.seeds = {1};
  cfg.lr_scale = "huge";
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("lr_scale"),
                       ConfigError);
  cfg.lr_scale = "tabular";
  cfg.preset = "table9";
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("preset"),
                       ConfigError);
  cfg.preset = "table1-0.5B";
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("preset cells pin the hyperparameter grid") {
  PresetCell noclip_small = preset_cell("table1-0.5B", Mode::noclip);
  CHECK(noclip_small.iterations == 1);
  CHECK(noclip_small.lr_reference == 1e-6);
  CHECK(noclip_small.lr_tabular == 1e-3);
  CHECK_FALSE(noclip_small.epsilon.has_value());
  CHECK_FALSE(noclip_small.alpha.has_value());

  PresetCell clip_small = preset_cell("table1-0.5B", Mode::clip);
  CHECK(clip_small.iterations == 2);
  CHECK(clip_small.lr_reference == 5e-6);
  CHECK(clip_small.epsilon == 0.1);

  PresetCell pspo_small = preset_cell("table1-0.5B", Mode::pspo);
  CHECK(pspo_small.lr_reference == 5e-7);
  CHECK(pspo_small.alpha == 0.1);

  PresetCell clip_large = preset_cell("table1-1.5B", Mode::clip);
  CHECK(clip_large.lr_reference == 5e-7);
  CHECK(clip_large.epsilon == 0.2);

  PresetCell pspo_large = preset_cell("table1-1.5B", Mode::pspo);
  CHECK(pspo_large.lr_reference == 5e-7);
  CHECK(pspo_large.alpha == 0.1);

  // raw borrows the pspo row's learning rate and passes.
  PresetCell raw_small = preset_cell("table1-0.5B", Mode::raw);
  CHECK(raw_small.lr_reference == pspo_small.lr_reference);
  CHECK(raw_small.iterations == pspo_small.iterations);
  CHECK_FALSE(raw_small.alpha.has_value());

  CHECK_THROWS_AS((void)preset_cell("table1-7B", Mode::pspo), ConfigError);
}

TEST_CASE("apply_preset pins mode hyperparameters") {
  ExperimentConfig cfg;
  cfg.preset = "table1-0.5B";
  cfg.train.surrogate.mode = Mode::pspo;
  cfg.train.surrogate.alpha = 0.9;  // overwritten by the preset
  cfg.train.learning_rate = 123.0;
  apply_preset(cfg);
  CHECK(cfg.train.surrogate.alpha == 0.1);
  CHECK(cfg.train.surrogate.iterations_mu == 2);
  CHECK(cfg.train.learning_rate == 5e-4);  // tabular scale of 5e-7

  cfg.lr_scale = "reference";
  apply_preset(cfg);
  CHECK(cfg.train.learning_rate == 5e-7);

  // Without a preset nothing changes.
  ExperimentConfig plain;
  plain.train.learning_rate = 0.25;
  apply_preset(plain);
  CHECK(plain.train.learning_rate == 0.25);
}

TEST_CASE("run records serialize to jsonl and back") {
  std::vector<RunRecord> records(3);
  records[0].step = 0;
  records[0].pass = 1;
  records[0].mean_reward = 0.25;
  records[0].objective = 0.125;
  records[0].max_ratio_dev = 0.0;
  records[1].step = 0;
  records[1].pass = 2;
  records[1].max_ratio_dev = 0.5;
  records[1].max_transformed_dev = 0.45;
  records[1].tv_mean = 0.01;
  records[1].kl_mean = 0.002;
  records[1].greedy_accuracy = 0.75;
  records[2].step = 1;
  records[2].pass = 1;
  records[2].nonfinite_flag = true;

  std::string jsonl = run_records_to_jsonl(records);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 3);
  std::vector<RunRecord> back = parse_run_records(jsonl);
  REQUIRE(back.size() == 3);
  CHECK(back[0].step == 0);
  CHECK(back[0].pass == 1);
  CHECK(back[0].mean_reward == 0.25);
  CHECK_FALSE(back[0].greedy_accuracy.has_value());
  CHECK(back[1].max_transformed_dev == 0.45);
  REQUIRE(back[1].greedy_accuracy.has_value());
  CHECK(*back[1].greedy_accuracy == 0.75);
  CHECK(back[2].nonfinite_flag);
}

TEST_CASE("policy files round trip bit for bit") {
  TabularPolicy policy(4);
  policy.mutable_logits({0, {}}) = {0.1, -0.2, 1.0 / 3.0, 0.0};
  policy.mutable_logits({2, {1, 3}}) = {-0.0, 5e-7, -1e12, 0.25};
  auto dir = temp_dir("policy_io");
  save_policy(dir / "p.tsv", policy);
  TabularPolicy back = load_policy(dir / "p.tsv");
  CHECK(back.vocab_size() == 4);
  REQUIRE(back.params().size() == 2);
  for (const auto& [state, logits] : policy.params()) {
    const auto& loaded = back.params().at(state);
    for (std::size_t k = 0; k < logits.size(); ++k)
      CHECK(loaded[k] == logits[k]);
  }
  // Saving the loaded policy reproduces the bytes.
  save_policy(dir / "q.tsv", back);
  CHECK(read_file(dir / "p.tsv") == read_file(dir / "q.tsv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("surrogate shape dataset matches the scalar ops") {
  std::vector<SurrogateShapeRow> rows = surrogate_shape_dataset(0.2, 0.2);
  REQUIRE(rows.size() == 201);
  CHECK(rows.front().r == 0.0);
  CHECK(rows.back().r == doctest::Approx(2.0).epsilon(1e-15));
  for (const SurrogateShapeRow& row : rows) {
    CHECK(row.clip_pos == clipped_term(row.r, 1.0, 0.2));
    CHECK(row.pspo_neg == pspo_term(row.r, -1.0, 0.2));
    CHECK(row.dclip_pos == clipped_term_slope(row.r, 1.0, 0.2));
    CHECK(row.dpspo_pos == pspo_term_slope(1.0, 0.2));
  }
  CHECK_THROWS_AS((void)surrogate_shape_dataset(0.2, 0.2, 1.0, 0.0),
                  std::invalid_argument);
}

TEST_CASE("surrogate shape csv has the documented header") {
  std::vector<SurrogateShapeRow> rows = surrogate_shape_dataset(0.1, 0.1);
  std::string csv = surrogate_shape_csv(rows);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "r,clip_term_adv_pos,clip_term_adv_neg,pspo_term_adv_pos,"
        "pspo_term_adv_neg,clip_slope_adv_pos,clip_slope_adv_neg,"
        "pspo_slope_adv_pos,pspo_slope_adv_neg");
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == rows.size());
}

TEST_CASE("run_experiment writes the documented artifact tree") {
  auto tasks_dir = temp_dir("exp_tasks");
  write_small_taskset(tasks_dir);
  auto out = temp_dir("exp_out");
  ExperimentConfig cfg = small_config(tasks_dir, out);

  ExperimentResult result =
      run_experiment(cfg, {Mode::clip, Mode::pspo}, 2);
  CHECK_FALSE(result.any_diverged);
  REQUIRE(result.report.runs.size() == 4);

  CHECK(std::filesystem::exists(out / "config.json"));
  CHECK(std::filesystem::exists(out / "summary.tsv"));
  for (const char* run_dir :
       {"clip-seed-1", "clip-seed-2", "pspo-seed-1", "pspo-seed-2"}) {
    CAPTURE(run_dir);
    CHECK(std::filesystem::exists(out / run_dir / "records.jsonl"));
    CHECK(std::filesystem::exists(out / run_dir / "policy.tsv"));
  }

  // Records parse back and match the in-memory report.
  std::vector<RunRecord> on_disk =
      parse_run_records(read_file(out / "pspo-seed-1" / "records.jsonl"));
  const ModeRunStats* pspo_run = nullptr;
  for (const ModeRunStats& run : result.report.runs)
    if (run.mode == Mode::pspo && run.seed == 1) pspo_run = &run;
  REQUIRE(pspo_run != nullptr);
  REQUIRE(on_disk.size() == pspo_run->records.size());
  for (std::size_t i = 0; i < on_disk.size(); ++i)
    CHECK(on_disk[i].objective == pspo_run->records[i].objective);

  std::string summary = read_file(out / "summary.tsv");
  CHECK(summary.find("pspo") != std::string::npos);
  CHECK(summary.find("clip") != std::string::npos);

  std::filesystem::remove_all(tasks_dir);
  std::filesystem::remove_all(out);
}

TEST_CASE("rerunning an experiment reproduces artifacts byte for byte") {
  auto tasks_dir = temp_dir("rerun_tasks");
  write_small_taskset(tasks_dir);
  auto out = temp_dir("rerun_out");
  ExperimentConfig cfg = small_config(tasks_dir, out);
  cfg.train.total_steps = 4;

  (void)run_experiment(cfg, {Mode::pspo}, 1);
  std::string config_a = read_file(out / "config.json");
  std::string records_a = read_file(out / "pspo-seed-1" / "records.jsonl");
  std::string policy_a = read_file(out / "pspo-seed-1" / "policy.tsv");
  std::string summary_a = read_file(out / "summary.tsv");

  (void)run_experiment(cfg, {Mode::pspo}, 1);
  CHECK(read_file(out / "config.json") == config_a);
  CHECK(read_file(out / "pspo-seed-1" / "records.jsonl") == records_a);
  CHECK(read_file(out / "pspo-seed-1" / "policy.tsv") == policy_a);
  CHECK(read_file(out / "summary.tsv") == summary_a);

  std::filesystem::remove_all(tasks_dir);
  std::filesystem::remove_all(out);
}

TEST_CASE("run_experiment surfaces taskset problems as config errors") {
  auto out = temp_dir("missing_tasks_out");
  ExperimentConfig cfg = small_config("/nonexistent/tasks", out);
  CHECK_THROWS_WITH_AS((void)run_experiment(cfg, {Mode::pspo}, 1),
                       doctest::Contains("taskset_path"), ConfigError);
  std::filesystem::remove_all(out);
}
