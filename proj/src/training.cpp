#include "bikelab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bikelab/io.hpp"
#include "bikelab/rng.hpp"

namespace bikelab {

void to_json(json& j, const PreferencePair& p) {
  j = json{{"v", kSchemaVersion}, {"pair_id", p.pair_id},   {"prompt", p.prompt},
           {"chosen", p.chosen},  {"rejected", p.rejected}, {"vote_margin", p.vote_margin}};
}

void from_json(const json& j, PreferencePair& p) {
  j.at("pair_id").get_to(p.pair_id);
  p.prompt = j.value("prompt", "");
  j.at("chosen").get_to(p.chosen);
  j.at("rejected").get_to(p.rejected);
  p.vote_margin = j.value("vote_margin", 2);
  if (p.vote_margin != 2 && p.vote_margin != 3) {
    throw ValidationError("vote_margin", "must be 2 or 3");
  }
}

}  // namespace bikelab

namespace bikelab::training {

void to_json(json& j, const SftConfig& c) {
  j = json{{"adapter_rank", c.adapter_rank},
           {"adapter_scale", c.adapter_scale},
           {"target_projections", c.target_projections},
           {"base_lr", c.base_lr},
           {"epochs", c.epochs},
           {"micro_batch", c.micro_batch},
           {"grad_accum", c.grad_accum},
           {"warmup_fraction", c.warmup_fraction},
           {"mixed_precision", c.mixed_precision},
           {"activation_checkpointing", c.activation_checkpointing},
           {"peak_multipliers", c.schedule.peak_multipliers},
           {"floor_fraction", c.schedule.floor_fraction},
           {"ratios", c.ratios},
           {"epoch_budget", c.epoch_budget},
           {"seed", c.seed}};
}

void from_json(const json& j, SftConfig& c) {
  const SftConfig d;
  c.adapter_rank = j.value("adapter_rank", d.adapter_rank);
  c.adapter_scale = j.value("adapter_scale", d.adapter_scale);
  c.target_projections = j.value("target_projections", d.target_projections);
  c.base_lr = j.value("base_lr", d.base_lr);
  c.epochs = j.value("epochs", d.epochs);
  c.micro_batch = j.value("micro_batch", d.micro_batch);
  c.grad_accum = j.value("grad_accum", d.grad_accum);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.mixed_precision = j.value("mixed_precision", d.mixed_precision);
  c.activation_checkpointing = j.value("activation_checkpointing", d.activation_checkpointing);
  c.schedule.peak_multipliers = j.value("peak_multipliers", d.schedule.peak_multipliers);
  c.schedule.floor_fraction = j.value("floor_fraction", d.schedule.floor_fraction);
  c.ratios = j.value("ratios", d.ratios);
  c.epoch_budget = j.value("epoch_budget", d.epoch_budget);
  c.seed = j.value("seed", d.seed);
}

void to_json(json& j, const DpoConfig& c) {
  j = json{{"beta", c.beta}, {"lr", c.lr}, {"batch", c.batch}, {"epochs", c.epochs},
           {"seed", c.seed}};
}

void from_json(const json& j, DpoConfig& c) {
  const DpoConfig d;
  c.beta = j.value("beta", d.beta);
  c.lr = j.value("lr", d.lr);
  c.batch = j.value("batch", d.batch);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
}

void check(const SftConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, "sft config: " + m); };
  if (c.micro_batch < 1 || c.grad_accum < 1) fail("micro_batch and grad_accum must be >= 1");
  if (!(c.base_lr > 0)) fail("base_lr must be > 0");
  if (!(c.warmup_fraction >= 0 && c.warmup_fraction < 1)) fail("warmup_fraction must be in [0,1)");
  const auto& peaks = c.schedule.peak_multipliers;
  if (c.epochs < 1 || static_cast<std::size_t>(c.epochs) > peaks.size()) {
    fail("epochs must be between 1 and the number of schedule peaks");
  }
  for (std::size_t i = 1; i < peaks.size(); ++i) {
    if (!(peaks[i] < peaks[i - 1])) fail("peak multipliers must be strictly decreasing");
  }
  if (!(c.schedule.floor_fraction >= 0 && c.schedule.floor_fraction <= 1)) {
    fail("floor_fraction must be in [0,1]");
  }
  double sum = 0;
  for (double r : c.ratios) {
    if (r < 0) fail("ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail("ratios must sum to 1");
}

void check(const DpoConfig& c) {
  if (!(c.beta > 0)) throw Error(ErrorCode::kConfig, "dpo config: beta must be > 0");
  if (!(c.lr > 0)) throw Error(ErrorCode::kConfig, "dpo config: lr must be > 0");
  if (c.batch < 1 || c.epochs < 1) {
    throw Error(ErrorCode::kConfig, "dpo config: batch and epochs must be >= 1");
  }
}

double peak_lr(int epoch, double base, const LrSchedule& schedule) {
  if (epoch < 0 || static_cast<std::size_t>(epoch) >= schedule.peak_multipliers.size()) {
    throw Error(ErrorCode::kOutOfRange, "epoch " + std::to_string(epoch) + " outside schedule");
  }
  return base * schedule.peak_multipliers[epoch];
}

double step_lr(std::size_t global_step, std::size_t total_steps,
               std::span<const std::size_t> epoch_starts, double base, double warmup_fraction,
               const LrSchedule& schedule) {
  if (total_steps == 0 || epoch_starts.empty() || global_step >= total_steps) return 0.0;
  const auto upper = std::upper_bound(epoch_starts.begin(), epoch_starts.end(), global_step);
  const std::size_t e = upper == epoch_starts.begin() ? 0 : (upper - epoch_starts.begin()) - 1;
  const double peak = peak_lr(static_cast<int>(e), base, schedule);
  const auto warmup =
      static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (global_step < warmup) {
    return peak * static_cast<double>(global_step) / static_cast<double>(warmup);
  }
  const std::size_t end = e + 1 < epoch_starts.size() ? epoch_starts[e + 1] : total_steps;
  const std::size_t start = std::max(epoch_starts[e], warmup);
  const std::size_t last = end - 1;
  const double phase = last > start ? std::numbers::pi * static_cast<double>(global_step - start) /
                                          static_cast<double>(last - start)
                                    : 0.0;
  const double floor = schedule.floor_fraction * peak;
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(phase));
}

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double dpo_z(double logp_w, double logp_l, double ref_logp_w, double ref_logp_l, double beta) {
  if (!(beta > 0)) throw Error(ErrorCode::kConfig, "beta must be > 0");
  for (double v : {logp_w, logp_l, ref_logp_w, ref_logp_l, beta}) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNumeric, "non-finite input to dpo_loss");
  }
  return beta * ((logp_w - ref_logp_w) - (logp_l - ref_logp_l));
}

}  // namespace

double dpo_loss(double logp_w, double logp_l, double ref_logp_w, double ref_logp_l, double beta) {
  return softplus(-dpo_z(logp_w, logp_l, ref_logp_w, ref_logp_l, beta));
}

DpoGradient dpo_loss_gradient(double logp_w, double logp_l, double ref_logp_w, double ref_logp_l,
                              double beta) {
  const double g = beta * sigmoid(-dpo_z(logp_w, logp_l, ref_logp_w, ref_logp_l, beta));
  return {-g, g, g, -g};
}

void to_json(json& j, const StepLog& s) {
  j = json{{"epoch", s.epoch}, {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}};
}

void from_json(const json& j, StepLog& s) {
  j.at("epoch").get_to(s.epoch);
  j.at("step").get_to(s.step);
  j.at("lr").get_to(s.lr);
  j.at("loss").get_to(s.loss);
}

void to_json(json& j, const TrainingReport& r) {
  j = json{{"kind", r.kind},
           {"optimizer_updates", r.optimizer_updates},
           {"adapter_ref", r.adapter_ref},
           {"adapter_path", r.adapter_path},
           {"resumed", r.resumed}};
  if (r.kind == "dpo") {
    j["initial_mean_loss"] = r.initial_mean_loss;
    j["final_mean_loss"] = r.final_mean_loss;
    j["reference_ref"] = r.reference_ref;
  }
  if (!r.steps.empty()) j["final_loss"] = r.steps.back().loss;
}

std::vector<std::vector<std::size_t>> sft_epoch_orders(
    std::span<const dataset::TrainingExample> examples, const SftConfig& config) {
  if (examples.empty()) throw Error(ErrorCode::kInsufficientData, "empty training set");
  std::array<std::vector<std::size_t>, 3> pools;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    pools[static_cast<int>(examples[i].type) - 1].push_back(i);
  }
  const std::array<std::size_t, 3> sizes = {pools[0].size(), pools[1].size(), pools[2].size()};
  std::vector<std::vector<std::size_t>> orders;
  for (int e = 0; e < config.epochs; ++e) {
    const std::uint64_t epoch_seed = mix_seed(config.seed, static_cast<std::uint64_t>(e));
    std::vector<std::size_t> order;
    if (config.epoch_budget == 0) {
      order.resize(examples.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    } else {
      auto plan = dataset::plan_epoch(sizes, config.epoch_budget, config.ratios, epoch_seed);
      for (int t = 0; t < 3; ++t) {
        for (auto k : plan.drawn[t]) order.push_back(pools[t][k]);
      }
    }
    Rng rng = make_rng(epoch_seed, "sft-order");
    shuffle(order.begin(), order.end(), rng);
    orders.push_back(std::move(order));
  }
  return orders;
}

namespace {

void write_outputs(const RunOptions& options, const std::string& blob, TrainingReport& report) {
  report.adapter_ref = io::sha256_hex(blob);
  if (options.run_dir.empty()) return;
  const auto adapter = options.run_dir / "adapter.bin";
  io::write_text(adapter, blob);
  report.adapter_path = adapter.filename().string();  // relative to run_dir
  io::write_jsonl(options.run_dir / "loss_log.jsonl", io::to_records(report.steps), "step_log");
  io::write_json(options.run_dir / "report.json", report);
}

}  // namespace

TrainingReport run_sft(std::span<const dataset::TrainingExample> examples, const SftConfig& config,
                       ModelBackend& backend, const RunOptions& options) {
  check(config);
  const auto orders = sft_epoch_orders(examples, config);
  const auto batch = static_cast<std::size_t>(config.effective_batch());

  std::vector<std::size_t> epoch_starts;
  std::size_t total = 0;
  for (const auto& order : orders) {
    epoch_starts.push_back(total);
    total += order.size() / batch;
  }
  if (total == 0) {
    throw Error(ErrorCode::kInsufficientData,
                "fewer examples per epoch than one effective batch of " + std::to_string(batch));
  }

  TrainingReport report;
  report.kind = "sft";
  int start_epoch = 0;
  const auto checkpoint_path = options.run_dir / "checkpoint.json";
  if (options.resume && !options.run_dir.empty() && std::filesystem::exists(checkpoint_path)) {
    json cp = io::read_json(checkpoint_path);
    start_epoch = cp.at("epoch").get<int>();
    report.steps = cp.at("steps").get<std::vector<StepLog>>();
    backend.restore(cp.at("snapshot").get<std::string>());
    report.resumed = true;
  }

  std::string epoch_snapshot;
  std::size_t epoch_log_size = report.steps.size();
  int e = start_epoch;
  try {
    for (; e < config.epochs; ++e) {
      epoch_snapshot = backend.snapshot();
      epoch_log_size = report.steps.size();
      const auto& order = orders[e];
      const std::size_t updates = order.size() / batch;
      for (std::size_t u = 0; u < updates; ++u) {
        std::vector<dataset::TrainingExample> items;
        items.reserve(batch);
        for (std::size_t k = 0; k < batch; ++k) items.push_back(examples[order[u * batch + k]]);
        const std::size_t g = epoch_starts[e] + u;
        const double lr = step_lr(g, total, epoch_starts, config.base_lr, config.warmup_fraction,
                                  config.schedule);
        const double loss = backend.apply_sft_step(items, lr);
        report.steps.push_back({e, g, lr, loss});
      }
    }
  } catch (const Error& err) {
    if (err.code() != ErrorCode::kBackend) throw;
    std::string where = "in memory";
    if (!options.run_dir.empty() && !epoch_snapshot.empty()) {
      report.steps.resize(epoch_log_size);
      io::write_json(checkpoint_path,
                     json{{"epoch", e}, {"steps", report.steps}, {"snapshot", epoch_snapshot}});
      where = checkpoint_path.string();
    }
    throw Error(ErrorCode::kTrainingAborted, "SFT aborted in epoch " + std::to_string(e) + " (" +
                                                 err.what() + "); resumable state: " + where);
  }

  report.optimizer_updates = report.steps.size();
  write_outputs(options, backend.snapshot(), report);
  if (!options.run_dir.empty()) std::filesystem::remove(checkpoint_path);
  return report;
}

TrainingReport run_dpo(std::span<const PreferencePair> pairs, const DpoConfig& config,
                       ModelBackend& backend, const RunOptions& options) {
  check(config);
  if (pairs.empty()) throw Error(ErrorCode::kInsufficientData, "no preference pairs");

  TrainingReport report;
  report.kind = "dpo";
  report.reference_ref = io::sha256_hex(backend.snapshot());

  // Single write phase; read-only afterwards.
  std::vector<std::pair<double, double>> reference(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    reference[i] = {backend.sequence_logprob(pairs[i].prompt, pairs[i].chosen),
                    backend.sequence_logprob(pairs[i].prompt, pairs[i].rejected)};
  }
  const auto& ref = reference;

  auto pair_loss = [&](std::size_t i) {
    return dpo_loss(backend.sequence_logprob(pairs[i].prompt, pairs[i].chosen),
                    backend.sequence_logprob(pairs[i].prompt, pairs[i].rejected), ref[i].first,
                    ref[i].second, config.beta);
  };
  auto mean_loss = [&] {
    double s = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) s += pair_loss(i);
    return s / static_cast<double>(pairs.size());
  };

  report.initial_mean_loss = mean_loss();
  const auto batch = static_cast<std::size_t>(config.batch);
  std::size_t step = 0;
  for (int e = 0; e < config.epochs; ++e) {
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = make_rng(mix_seed(config.seed, static_cast<std::uint64_t>(e)), "dpo-order");
    shuffle(order.begin(), order.end(), rng);

    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t end = std::min(order.size(), b + batch);
      const double n = static_cast<double>(end - b);
      double loss = 0;
      std::vector<PreferenceUpdate> updates;
      for (std::size_t k = b; k < end; ++k) {
        const std::size_t i = order[k];
        const double lw = backend.sequence_logprob(pairs[i].prompt, pairs[i].chosen);
        const double ll = backend.sequence_logprob(pairs[i].prompt, pairs[i].rejected);
        loss += dpo_loss(lw, ll, ref[i].first, ref[i].second, config.beta);
        const auto grad = dpo_loss_gradient(lw, ll, ref[i].first, ref[i].second, config.beta);
        updates.push_back({pairs[i].prompt, pairs[i].chosen, pairs[i].rejected, -grad.logp_w / n});
      }
      backend.apply_preference_step(updates, config.lr);
      report.steps.push_back({e, step++, config.lr, loss / n});
    }
  }
  report.optimizer_updates = report.steps.size();
  report.final_mean_loss = mean_loss();
  write_outputs(options, backend.snapshot(), report);
  return report;
}

}  // namespace bikelab::training
