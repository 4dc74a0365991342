#include "pspo/envs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pspo/random.hpp"

namespace pspo {

// ===========================================================================
// Vocabulary and tasks
// ===========================================================================

std::string detokenize(std::span<const int> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t >= 0 && t <= 9) {
      out.push_back(static_cast<char>('0' + t));
    } else if (t == arith_vocab::kHash) {
      out.push_back('#');
    } else if (t == arith_vocab::kSpace) {
      out.push_back(' ');
    } else if (t == arith_vocab::kEnd) {
      // renders as the empty string
    } else {
      throw std::out_of_range("detokenize: token outside vocabulary");
    }
  }
  return out;
}

ArithmeticTask make_arithmetic_task(int prompt_id, int lhs, int rhs) {
  if (lhs < 0 || lhs > 9 || rhs < 0 || rhs > 9)
    throw std::invalid_argument("arithmetic task: operands must be in [0, 9]");
  return ArithmeticTask{prompt_id, lhs, rhs, static_cast<double>(lhs + rhs), 6};
}

// ===========================================================================
// Rollouts
// ===========================================================================

namespace {

// One decoding step: picks an action and the stored behaviour log-prob.
struct StepChoice {
  int action;
  double old_logprob;
};

StepChoice decode_step(const TabularPolicy& policy, const StateKey& state,
                       double temperature, RatioConvention convention,
                       std::mt19937_64& rng) {
  if (temperature < 0.0)
    throw std::invalid_argument("rollout: temperature must be >= 0");
  int action;
  double tempered_logprob;
  if (temperature == 0.0) {
    action = policy.greedy_action(state);
    tempered_logprob = 0.0;  // greedy decoding is a point mass
  } else {
    const auto& logits = policy.logits(state);
    std::vector<double> scaled(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k)
      scaled[k] = logits[k] / temperature;
    const auto probs = softmax(scaled);
    action = sample_categorical(probs, rng);
    tempered_logprob = std::log(probs[static_cast<std::size_t>(action)]);
  }
  const double old_logprob = convention == RatioConvention::untempered
                                 ? policy.action_log_prob(state, action)
                                 : tempered_logprob;
  return {action, old_logprob};
}

}  // namespace

Episode rollout(const ArithmeticTask& task, const TabularPolicy& policy,
                double temperature, std::uint64_t seed,
                RatioConvention convention) {
  if (task.max_len < 1)
    throw std::invalid_argument("rollout: max_len must be >= 1");
  std::mt19937_64 rng(seed);
  Episode ep;
  StateKey state{task.prompt_id, {}};
  state.prefix.reserve(static_cast<std::size_t>(task.max_len));
  for (int t = 0; t < task.max_len; ++t) {
    const auto [action, old_lp] =
        decode_step(policy, state, temperature, convention, rng);
    ep.actions.push_back(action);
    ep.old_logprobs.push_back(old_lp);
    if (action == arith_vocab::kEnd) break;
    state.prefix.push_back(action);
  }
  ep.rendered = detokenize(ep.actions);
  return ep;
}

Episode rollout(const BanditTask& task, const TabularPolicy& policy,
                double temperature, std::uint64_t seed,
                RatioConvention convention) {
  if (policy.vocab_size() != task.num_actions)
    throw std::invalid_argument(
        "rollout: policy vocabulary differs from bandit action count");
  std::mt19937_64 rng(seed);
  Episode ep;
  const StateKey state{0, {}};
  const auto [action, old_lp] =
      decode_step(policy, state, temperature, convention, rng);
  ep.actions.push_back(action);
  ep.old_logprobs.push_back(old_lp);
  return ep;  // rendered stays empty
}

namespace {

void require_group_size(int group_size) {
  if (group_size < 1)
    throw std::invalid_argument("sample_group: group_size must be >= 1");
}

}  // namespace

GroupBatch sample_group(const ArithmeticTask& task, const TabularPolicy& policy,
                        int group_size, double temperature,
                        std::uint64_t run_seed, const GroupOptions& opts) {
  require_group_size(group_size);
  GroupBatch batch;
  batch.prompt_id = task.prompt_id;
  for (int i = 0; i < group_size; ++i) {
    const std::uint64_t seed = derive_seed(
        run_seed, static_cast<std::uint64_t>(task.prompt_id),
        static_cast<std::uint64_t>(i));
    auto ep = rollout(task, policy, temperature, seed, opts.convention);
    batch.rewards.push_back(
        grade_completion(ep.rendered, task.gold, opts.grade_tolerance).score);
    batch.completions.push_back(std::move(ep.actions));
    batch.old_logprobs.push_back(std::move(ep.old_logprobs));
  }
  batch.advantages = group_advantages(batch.rewards, opts.normalize_advantage);
  return batch;
}

GroupBatch sample_group(const BanditTask& task, const TabularPolicy& policy,
                        int group_size, double temperature,
                        std::uint64_t run_seed, const GroupOptions& opts) {
  require_group_size(group_size);
  if (static_cast<int>(task.advantage_table.size()) != task.num_actions)
    throw std::invalid_argument(
        "bandit task: advantage_table size must equal num_actions");
  GroupBatch batch;
  batch.prompt_id = 0;
  for (int i = 0; i < group_size; ++i) {
    const std::uint64_t seed =
        derive_seed(run_seed, 0, static_cast<std::uint64_t>(i));
    auto ep = rollout(task, policy, temperature, seed, opts.convention);
    batch.rewards.push_back(
        task.advantage_table[static_cast<std::size_t>(ep.actions[0])]);
    batch.completions.push_back(std::move(ep.actions));
    batch.old_logprobs.push_back(std::move(ep.old_logprobs));
  }
  batch.advantages = group_advantages(batch.rewards, opts.normalize_advantage);
  return batch;
}

double evaluate_greedy(const std::vector<ArithmeticTask>& tasks,
                       const TabularPolicy& policy, double tolerance) {
  if (tasks.empty())
    throw std::invalid_argument("evaluate_greedy: empty task list");
  int correct = 0;
  for (const auto& task : tasks) {
    const auto ep = rollout(task, policy, 0.0, 0);
    if (grade_completion(ep.rendered, task.gold, tolerance).score == 1.0)
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(tasks.size());
}

// ===========================================================================
// Task sets
// ===========================================================================

std::vector<ArithmeticTask> make_arithmetic_tasks(int count, std::uint64_t seed,
                                                  int first_prompt_id) {
  if (count < 1)
    throw std::invalid_argument("make_arithmetic_tasks: count must be >= 1");
  std::mt19937_64 rng(splitmix64(seed));
  std::vector<ArithmeticTask> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int lhs = static_cast<int>(uniform_index(10, rng));
    const int rhs = static_cast<int>(uniform_index(10, rng));
    tasks.push_back(make_arithmetic_task(first_prompt_id + i, lhs, rhs));
  }
  return tasks;
}

void save_taskset(const std::filesystem::path& path,
                  const std::vector<ArithmeticTask>& tasks) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << "prompt_id,lhs,rhs,gold\n";
  for (const auto& t : tasks)
    out << t.prompt_id << ',' << t.lhs << ',' << t.rhs << ','
        << static_cast<long long>(t.gold) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

int parse_int_field(const std::string& field, const std::string& context) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw std::runtime_error("bad integer field '" + field + "' in " + context);
  return v;
}

}  // namespace

std::vector<ArithmeticTask> load_taskset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open taskset: " + path.string());
  std::vector<ArithmeticTask> tasks;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("prompt_id", 0) == 0) continue;  // header
    const std::string context = path.string() + ":" + std::to_string(line_no);
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4)
      throw std::runtime_error("expected 4 fields in " + context);
    const int prompt_id = parse_int_field(fields[0], context);
    const int lhs = parse_int_field(fields[1], context);
    const int rhs = parse_int_field(fields[2], context);
    const int gold = parse_int_field(fields[3], context);
    // A bad row is runtime input, so operand validation failures surface as
    // runtime_errors carrying the file:line context.
    try {
      tasks.push_back(make_arithmetic_task(prompt_id, lhs, rhs));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(std::string(e.what()) + " in " + context);
    }
    if (gold != lhs + rhs)
      throw std::runtime_error("gold does not equal lhs + rhs in " + context);
  }
  if (tasks.empty())
    throw std::runtime_error("taskset is empty: " + path.string());
  return tasks;
}

ArithmeticTaskSet::ArithmeticTaskSet(std::vector<ArithmeticTask> train,
                                     std::vector<ArithmeticTask> eval)
    : train_(std::move(train)), eval_(std::move(eval)) {
  if (train_.empty() || eval_.empty())
    throw std::invalid_argument(
        "ArithmeticTaskSet: train and eval splits must be nonempty");
}

GroupBatch ArithmeticTaskSet::sample_group(const TabularPolicy& policy,
                                           std::size_t prompt_index,
                                           int group_size, double temperature,
                                           std::uint64_t run_seed,
                                           const GroupOptions& opts) const {
  if (prompt_index >= train_.size())
    throw std::out_of_range("ArithmeticTaskSet: prompt_index out of range");
  return pspo::sample_group(train_[prompt_index], policy, group_size,
                            temperature, run_seed, opts);
}

double ArithmeticTaskSet::greedy_accuracy(const TabularPolicy& policy,
                                          double tolerance) const {
  // Accuracy over the prompts training can reach. States are keyed by prompt
  // id, so a tabular policy cannot transfer to held-out prompts; the eval
  // split is scored separately by the experiment driver.
  return evaluate_greedy(train_, policy, tolerance);
}

std::unique_ptr<ArithmeticTaskSet> load_arithmetic_taskset_dir(
    const std::filesystem::path& dir) {
  return std::make_unique<ArithmeticTaskSet>(load_taskset(dir / "train.csv"),
                                             load_taskset(dir / "eval.csv"));
}

BanditTaskSet::BanditTaskSet(BanditTask task) : task_(std::move(task)) {
  if (task_.num_actions < 2)
    throw std::invalid_argument("BanditTaskSet: need at least 2 actions");
  if (static_cast<int>(task_.advantage_table.size()) != task_.num_actions)
    throw std::invalid_argument(
        "BanditTaskSet: advantage_table size must equal num_actions");
}

GroupBatch BanditTaskSet::sample_group(const TabularPolicy& policy,
                                       std::size_t /*prompt_index*/,
                                       int group_size, double temperature,
                                       std::uint64_t run_seed,
                                       const GroupOptions& opts) const {
  return pspo::sample_group(task_, policy, group_size, temperature, run_seed,
                            opts);
}

double BanditTaskSet::greedy_accuracy(const TabularPolicy& policy,
                                      double /*tolerance*/) const {
  const int arm = policy.greedy_action(StateKey{0, {}});
  const double best = *std::max_element(task_.advantage_table.begin(),
                                        task_.advantage_table.end());
  return task_.advantage_table[static_cast<std::size_t>(arm)] == best ? 1.0
                                                                      : 0.0;
}

}  // namespace pspo
