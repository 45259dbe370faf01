// MAML meta-training over per-language tasks.
//
// Each task adapts the shared initialisation on its support batch with plain
// gradient steps, then scores the adapted weights on its query batch. The
// meta-gradient is the mean over tasks of d(query loss)/d(initialisation):
//   first_order   the query gradient at the adapted weights
//   second_order  that gradient pulled back through every inner step,
//                 v <- v - alpha * H_support(theta_i) v, last step first
// and is applied with Adam under a linear warm-up schedule.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlabuse/common.hpp"
#include "xlabuse/learner.hpp"
#include "xlabuse/normalization.hpp"
#include "xlabuse/sampler.hpp"

namespace xlabuse {

enum class MetaMode { first_order, second_order };

inline std::string to_string(MetaMode m) { return m == MetaMode::first_order ? "first_order" : "second_order"; }
inline MetaMode parse_meta_mode(std::string s) {
  for (auto& c : s)
    if (c == '-') c = '_';
  if (s == "first_order") return MetaMode::first_order;
  if (s == "second_order") return MetaMode::second_order;
  throw ValidationError("unknown meta mode '" + s + "'");
}

/// Linear warm-up: start_factor at epoch 0 rising to end_factor at
/// total_iters, constant afterwards.
struct LinearSchedule {
  double start_factor = 1.0 / 3.0;
  double end_factor = 1.0;
  double total_iters = 5.0;
};

inline double lr_multiplier(double epoch, std::size_t /*total_epochs*/, const LinearSchedule& s = {}) {
  if (epoch < 0.0) throw ValidationError("epoch must be >= 0");
  if (s.total_iters <= 0.0 || epoch >= s.total_iters) return s.end_factor;
  return s.start_factor + (s.end_factor - s.start_factor) * (epoch / s.total_iters);
}

struct TrainConfig {
  double task_lr = 0.001;
  double meta_lr = 0.001;
  std::size_t inner_steps = 1;
  std::size_t epochs = 150;
  std::size_t batch_size = 128;
  MetaMode meta_mode = MetaMode::first_order;
  double support_fraction = 0.5;
  std::uint64_t seed = 0;

  LinearSchedule schedule;
  bool schedule_task_lr = true;  // the warm-up multiplies both learning rates

  std::size_t hidden1 = 256;
  std::size_t hidden2 = 128;
  double negative_slope = 0.01;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(task_lr >= 0.0)) throw ValidationError("task_lr must be >= 0");
    if (!(meta_lr > 0.0)) throw ValidationError("meta_lr must be > 0");
    if (inner_steps < 1) throw ValidationError("inner_steps must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
      throw ValidationError("support_fraction must lie in (0, 1)");
    }
  }

  Architecture architecture(std::size_t input_dim) const {
    return {input_dim, hidden1, hidden2, 2, negative_slope};
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"task_lr", c.task_lr},
          {"meta_lr", c.meta_lr},
          {"inner_steps", c.inner_steps},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"meta_mode", to_string(c.meta_mode)},
          {"support_fraction", c.support_fraction},
          {"seed", c.seed},
          {"schedule_start_factor", c.schedule.start_factor},
          {"schedule_end_factor", c.schedule.end_factor},
          {"schedule_total_iters", c.schedule.total_iters},
          {"schedule_task_lr", c.schedule_task_lr},
          {"hidden1", c.hidden1},
          {"hidden2", c.hidden2},
          {"negative_slope", c.negative_slope},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps}};
}

/// Overrides the fields present in `j`; unknown keys are ignored so one flat
/// experiment config can feed several stages.
inline void update_from_json(TrainConfig& c, const nlohmann::json& j) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("task_lr", c.task_lr);
  take("meta_lr", c.meta_lr);
  take("inner_steps", c.inner_steps);
  take("epochs", c.epochs);
  take("batch_size", c.batch_size);
  if (j.contains("meta_mode")) c.meta_mode = parse_meta_mode(j.at("meta_mode").get<std::string>());
  take("support_fraction", c.support_fraction);
  take("seed", c.seed);
  take("schedule_start_factor", c.schedule.start_factor);
  take("schedule_end_factor", c.schedule.end_factor);
  take("schedule_total_iters", c.schedule.total_iters);
  take("schedule_task_lr", c.schedule_task_lr);
  take("hidden1", c.hidden1);
  take("hidden2", c.hidden2);
  take("negative_slope", c.negative_slope);
  take("adam_beta1", c.adam_beta1);
  take("adam_beta2", c.adam_beta2);
  take("adam_eps", c.adam_eps);
}

// ---------------------------------------------------------------------------

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ModelParams& p, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    return {ModelParams::zeros(p.arch), ModelParams::zeros(p.arch), 0, b1, b2, eps};
  }
};

struct AdamResult {
  ModelParams params;
  AdamState state;
};

/// One bias-corrected Adam update.
inline AdamResult adam_update(const ModelParams& params, const Gradients& grads, const AdamState& state,
                              double lr) {
  AdamResult r{params, state};
  r.state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(r.state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(r.state.step));
  const std::vector<double> g = grads.flatten();
  std::vector<double> m = state.m.flatten();
  std::vector<double> v = state.v.flatten();
  std::vector<double> p = params.flatten();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
  r.params = ModelParams::unflatten(params.arch, p);
  r.state.m = ModelParams::unflatten(params.arch, m);
  r.state.v = ModelParams::unflatten(params.arch, v);
  return r;
}

// ---------------------------------------------------------------------------

/// Stacks the feature vectors of `ids` into a batch (abusive -> 1).
inline Batch make_batch(const FeatureSet& features, std::span<const std::string> ids) {
  Batch b;
  b.inputs.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(features.dim));
  b.targets.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const FeatureEntry& e = features.at(ids[i]);
    if (e.values.size() != features.dim) throw ValidationError("feature dim mismatch for clip " + ids[i]);
    for (std::size_t j = 0; j < features.dim; ++j) {
      b.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = e.values[j];
    }
    b.targets.push_back(e.label == Label::abusive ? 1 : 0);
  }
  return b;
}

struct Task {
  std::string language;
  Batch support;
  Batch query;
};

struct InnerResult {
  ModelParams adapted;
  std::vector<double> losses;        // support loss before each step
  std::vector<ModelParams> iterates; // theta_0 .. theta_{steps-1}
};

inline InnerResult inner_adapt(const ModelParams& params, const Batch& support, double lr, std::size_t steps) {
  if (steps < 1) throw ValidationError("inner_steps must be >= 1");
  InnerResult r{params, {}, {}};
  r.losses.reserve(steps);
  r.iterates.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    LossAndGrad lg = loss_and_grad(r.adapted, support);
    if (!std::isfinite(lg.loss)) {
      throw NumericalError("non-finite support loss at inner step " + std::to_string(s));
    }
    r.losses.push_back(lg.loss);
    r.iterates.push_back(r.adapted);
    r.adapted = apply_step(r.adapted, lg.grads, lr);
  }
  return r;
}

struct TaskGradient {
  double query_loss = 0.0;
  std::vector<double> inner_losses;
  Gradients grad;
};

/// Query loss after adaptation and its derivative w.r.t. the initialisation.
inline TaskGradient task_meta_gradient(const ModelParams& params, const Task& task, double task_lr,
                                       std::size_t inner_steps, MetaMode mode) {
  InnerResult inner = inner_adapt(params, task.support, task_lr, inner_steps);
  LossAndGrad q = loss_and_grad(inner.adapted, task.query);
  if (!std::isfinite(q.loss)) throw NumericalError("non-finite query loss for task " + task.language);
  TaskGradient out{q.loss, std::move(inner.losses), std::move(q.grads)};
  if (mode == MetaMode::second_order) {
    for (std::size_t i = inner.iterates.size(); i-- > 0;) {
      const Gradients hv = hessian_vector_product(inner.iterates[i], task.support, out.grad);
      out.grad = axpy(out.grad, -task_lr, hv);
    }
  }
  return out;
}

struct MetaStepResult {
  ModelParams params;
  AdamState adam;
  double meta_loss = 0.0;
  std::vector<TaskGradient> tasks;  // in input order; grad fields cleared
};

/// Mean meta-gradient over `tasks` (reduced in list order) followed by one
/// Adam step with learning rate meta_lr * lr_mult. The inner learning rate
/// is task_lr * lr_mult when the schedule covers it.
inline MetaStepResult meta_step(const ModelParams& params, std::span<const Task> tasks, const TrainConfig& config,
                                const AdamState& adam, double lr_mult = 1.0) {
  if (tasks.empty()) throw ValidationError("meta_step needs at least one task");
  const double alpha = config.task_lr * (config.schedule_task_lr ? lr_mult : 1.0);
  MetaStepResult out;
  Gradients total = ModelParams::zeros(params.arch);
  double loss_sum = 0.0;
  for (const Task& t : tasks) {
    TaskGradient tg = task_meta_gradient(params, t, alpha, config.inner_steps, config.meta_mode);
    total = axpy(total, 1.0, tg.grad);
    loss_sum += tg.query_loss;
    tg.grad = Gradients{};
    out.tasks.push_back(std::move(tg));
  }
  const double count = static_cast<double>(tasks.size());
  Gradients mean = std::move(total);
  mean.for_each([count](double* x, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) x[i] /= count;
  });
  out.meta_loss = loss_sum / count;
  if (!std::isfinite(out.meta_loss) || !mean.all_finite()) throw NumericalError("non-finite meta-loss or meta-gradient");
  AdamResult ar = adam_update(params, mean, adam, config.meta_lr * lr_mult);
  out.params = std::move(ar.params);
  out.adam = std::move(ar.state);
  return out;
}

// ---------------------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double meta_loss = 0.0;
  double lr_multiplier = 1.0;
  std::size_t meta_steps = 0;
  std::map<std::string, std::vector<double>> inner_losses;  // language -> losses of its last meta-step
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  double wall_clock_seconds = 0.0;

  std::vector<double> loss_trace() const {
    std::vector<double> out;
    for (const auto& e : epochs) out.push_back(e.meta_loss);
    return out;
  }
};

inline nlohmann::json to_json(const TrainLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"meta_loss", e.meta_loss},
                      {"lr_multiplier", e.lr_multiplier},
                      {"meta_steps", e.meta_steps},
                      {"inner_losses", e.inner_losses}});
  }
  return {{"epochs", epochs}, {"wall_clock_seconds", log.wall_clock_seconds}};
}

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

/// Builds the per-epoch task list: episodes are redrawn from the pool every
/// epoch and each task's query set is cut into chunks of batch_size. Chunk c
/// of every task forms meta-step c of the epoch.
inline std::vector<std::vector<Task>> epoch_meta_batches(const SupportPool& pool, const FeatureSet& features,
                                                         const TrainConfig& config, std::size_t epoch) {
  const auto episodes = make_episodes(pool, config.support_fraction, derive_seed(config.seed ^ 0x5eedULL, epoch));
  std::size_t chunks = 0;
  for (const auto& ep : episodes) {
    chunks = std::max(chunks, (ep.query_ids.size() + config.batch_size - 1) / config.batch_size);
  }
  std::vector<std::vector<Task>> steps(chunks);
  for (const auto& ep : episodes) {
    const Batch support = make_batch(features, ep.support_ids);
    for (std::size_t c = 0; c * config.batch_size < ep.query_ids.size(); ++c) {
      const std::size_t lo = c * config.batch_size;
      const std::size_t hi = std::min(ep.query_ids.size(), lo + config.batch_size);
      std::span<const std::string> chunk(ep.query_ids.data() + lo, hi - lo);
      steps[c].push_back({ep.language, support, make_batch(features, chunk)});
    }
  }
  return steps;
}

inline TrainResult meta_train(const SupportPool& pool, const FeatureSet& features, const TrainConfig& config) {
  config.validate();
  if (pool.sets.empty()) throw ValidationError("empty support pool");
  const auto start = std::chrono::steady_clock::now();

  TrainResult out;
  out.params = init_params(config.architecture(features.dim), derive_seed(config.seed, "init"));
  AdamState adam = AdamState::for_params(out.params, config.adam_beta1, config.adam_beta2, config.adam_eps);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double mult = lr_multiplier(static_cast<double>(epoch), config.epochs, config.schedule);
    EpochLog el{epoch, 0.0, mult, 0, {}};
    for (const auto& tasks : epoch_meta_batches(pool, features, config, epoch)) {
      MetaStepResult r = meta_step(out.params, tasks, config, adam, mult);
      out.params = std::move(r.params);
      adam = std::move(r.adam);
      el.meta_loss += r.meta_loss;
      ++el.meta_steps;
      for (std::size_t i = 0; i < tasks.size(); ++i) el.inner_losses[tasks[i].language] = r.tasks[i].inner_losses;
    }
    el.meta_loss /= static_cast<double>(std::max<std::size_t>(1, el.meta_steps));
    out.log.epochs.push_back(std::move(el));
  }
  out.log.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace xlabuse
