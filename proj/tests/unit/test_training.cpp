#include <doctest.h>
#include <httplib.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <thread>

#include "bikelab/parser.hpp"
#include "bikelab/synth.hpp"
#include "bikelab/training.hpp"

using namespace bikelab;
using namespace bikelab::training;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kParse;
}

std::vector<dataset::TrainingExample> corpus_examples(std::size_t n, std::uint64_t seed = 3) {
  auto c = synth::corpus(40, 10, 60, seed);
  auto all = synth::examples(c, 0.15);
  REQUIRE(all.size() >= n);
  all.resize(n);
  return all;
}

/// Delegates to a mock and fails with a backend error on the n-th SFT step.
class FlakyBackend final : public ModelBackend {
 public:
  FlakyBackend(ModelBackend& inner, int fail_at) : inner_(inner), fail_at_(fail_at) {}
  std::string generate(const GenerationRequest& r) override { return inner_.generate(r); }
  double sequence_logprob(std::string_view p, std::string_view c) override {
    return inner_.sequence_logprob(p, c);
  }
  double apply_sft_step(std::span<const dataset::TrainingExample> b, double lr) override {
    if (++calls_ == fail_at_) throw Error(ErrorCode::kBackend, "connection reset");
    return inner_.apply_sft_step(b, lr);
  }
  void apply_preference_step(std::span<const PreferenceUpdate> u, double lr) override {
    inner_.apply_preference_step(u, lr);
  }
  std::string snapshot() override { return inner_.snapshot(); }
  void restore(std::string_view b) override { inner_.restore(b); }

 private:
  ModelBackend& inner_;
  int fail_at_;
  int calls_ = 0;
};

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("bikelab-" + name + "-" +
                                                       std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config defaults") {
  SftConfig c;
  CHECK(c.adapter_rank == 32);
  CHECK(c.adapter_scale == 64);
  CHECK(c.effective_batch() == 16);
  CHECK(c.epochs == 5);
  CHECK(c.base_lr == 2e-4);
  DpoConfig d;
  CHECK(d.beta == 0.1);
  CHECK(d.lr == 5e-6);
  CHECK(d.batch == 8);
  CHECK(d.epochs == 3);
  json j = c;
  CHECK(j.get<SftConfig>().schedule.peak_multipliers == c.schedule.peak_multipliers);
  CHECK(code_of([] { check(DpoConfig{.beta = 0.0}); }) == ErrorCode::kConfig);
  SftConfig rising;
  rising.schedule.peak_multipliers = {1.0, 1.0, 0.5, 0.2, 0.1};
  CHECK(code_of([&] { check(rising); }) == ErrorCode::kConfig);
}

TEST_CASE("per-epoch peaks") {
  CHECK(peak_lr(0, 2e-4) == doctest::Approx(2.0e-4).epsilon(1e-12));
  // Oracle: 0.8x per epoch for two epochs, then 0.5x.
  const double oracle[] = {2e-4, 2e-4 * 0.8, 2e-4 * 0.8 * 0.8, 2e-4 * 0.64 * 0.5,
                           2e-4 * 0.64 * 0.25};
  for (int e = 0; e < 5; ++e) CHECK(std::abs(peak_lr(e, 2e-4) - oracle[e]) < 1e-18);
  CHECK(std::abs(peak_lr(2, 2e-4) - 1.28e-4) < 1e-18);
  CHECK(std::abs(peak_lr(4, 2e-4) - 3.2e-5) < 1e-18);
  CHECK(code_of([] { peak_lr(5, 2e-4); }) == ErrorCode::kOutOfRange);
  CHECK(code_of([] { peak_lr(-1, 2e-4); }) == ErrorCode::kOutOfRange);
}

TEST_CASE("step schedule examples") {
  // 5 epochs x 10 updates; warmup = 5 steps.
  const std::vector<std::size_t> starts = {0, 10, 20, 30, 40};
  CHECK(step_lr(0, 50, starts, 2e-4) == 0.0);
  CHECK(step_lr(5, 50, starts, 2e-4) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(std::abs(step_lr(19, 50, starts, 2e-4) - 0.1 * 1.6e-4) < 1e-9);
  // Closed-form cosine at phase pi/2 in epoch 2: floor + (peak - floor) / 2.
  const double peak2 = 1.28e-4;
  const std::vector<std::size_t> long_starts = {0, 101, 202, 303, 404};
  CHECK(std::abs(step_lr(202 + 50, 505, long_starts, 2e-4) - (0.1 * peak2 + 0.45 * peak2)) < 1e-15);
}

TEST_CASE("step schedule properties") {
  for (std::size_t per_epoch : {7u, 20u, 100u, 1000u}) {
    std::vector<std::size_t> starts;
    for (int e = 0; e < 5; ++e) starts.push_back(e * per_epoch);
    const std::size_t total = 5 * per_epoch;
    double prev = 0;
    for (std::size_t g = 0; g < total; ++g) {
      const int e = static_cast<int>(g / per_epoch);
      const double lr = step_lr(g, total, starts, 2e-4);
      CHECK(lr >= 0.0);
      CHECK(lr <= peak_lr(e, 2e-4) + 1e-18);
      // Within an epoch consecutive steps move by at most the largest single
      // cosine increment (continuity at the sampling resolution).
      if (per_epoch >= 100 && g % per_epoch != 0) {
        CHECK(std::abs(lr - prev) <= 2.0 * peak_lr(0, 2e-4) * 3.2 / static_cast<double>(per_epoch));
      }
      prev = lr;
    }
  }
}

TEST_CASE("dpo loss values") {
  CHECK(std::abs(dpo_loss(-3, -3, -3, -3, 0.1) - std::log(2.0)) < 1e-15);
  // softplus(-0.1) = ln(1 + e^-0.1), evaluated to 18 digits independently.
  CHECK(std::abs(dpo_loss(-1, -2, -5, -5, 0.1) - 0.644396660073570892) < 1e-15);
  double prev = dpo_loss(0, 0, 0, 0, 0.1);
  for (double m = 1; m <= 2000; m *= 2) {
    double l = dpo_loss(0, -m, 0, 0, 0.1);
    CHECK(l < prev);
    CHECK(l >= 0);
    prev = l;
  }
  CHECK(prev < 1e-40);  // e^-102.4
  CHECK(code_of([] { dpo_loss(NAN, 0, 0, 0, 0.1); }) == ErrorCode::kNumeric);
  CHECK(code_of([] { dpo_loss(0, 0, INFINITY, 0, 0.1); }) == ErrorCode::kNumeric);
  CHECK(code_of([] { dpo_loss(0, 0, 0, 0, -1); }) == ErrorCode::kConfig);
}

TEST_CASE("dpo gradient matches central finite differences") {
  Rng rng = make_rng(5, "dpo-fd");
  for (int i = 0; i < 100; ++i) {
    double w = -40 * uniform01(rng), l = -40 * uniform01(rng);
    double rw = -40 * uniform01(rng), rl = -40 * uniform01(rng);
    double beta = 0.01 + 0.5 * uniform01(rng);
    const double h = 1e-5;
    auto g = dpo_loss_gradient(w, l, rw, rl, beta);
    double fd_w = (dpo_loss(w + h, l, rw, rl, beta) - dpo_loss(w - h, l, rw, rl, beta)) / (2 * h);
    double fd_l = (dpo_loss(w, l + h, rw, rl, beta) - dpo_loss(w, l - h, rw, rl, beta)) / (2 * h);
    CHECK(std::abs(g.logp_w - fd_w) <= 1e-6 * std::abs(g.logp_w));
    CHECK(std::abs(g.logp_l - fd_l) <= 1e-6 * std::abs(g.logp_l));
    CHECK(g.ref_logp_w == -g.logp_w);
    CHECK(g.ref_logp_l == -g.logp_l);
  }
}

TEST_CASE("dpo loss is strictly monotone in each policy margin") {
  Rng rng = make_rng(6, "dpo-mono");
  for (int i = 0; i < 1000; ++i) {
    double w = -20 * uniform01(rng), l = -20 * uniform01(rng);
    double rw = -20 * uniform01(rng), rl = -20 * uniform01(rng);
    double d = 0.01 + uniform01(rng);
    CHECK(dpo_loss(w + d, l, rw, rl, 0.1) < dpo_loss(w, l, rw, rl, 0.1));
    CHECK(dpo_loss(w, l + d, rw, rl, 0.1) > dpo_loss(w, l, rw, rl, 0.1));
  }
}

TEST_CASE("mock backend outputs are parser-valid and deterministic") {
  MockBackend a({.seed = 11}), b({.seed = 11});
  auto c = synth::corpus(4, 5, 12, 1);
  for (const auto& seg : c.segments) {
    for (auto type : {dataset::ExampleType::kReasoning, dataset::ExampleType::kStructured,
                      dataset::ExampleType::kRating}) {
      for (double t : {0.0, 0.7, 1.0}) {
        GenerationRequest r{Persona::kIBC, seg.image, seg.attributes,
                            dataset::render_prompt(type, Persona::kIBC, seg.attributes), t};
        auto ta = a.generate(r);
        CHECK(ta == b.generate(r));
        auto parsed = parser::parse(ta);
        CHECK(parsed.corrections.empty());
        CHECK(parsed.reasoning_text.has_value() == (type == dataset::ExampleType::kReasoning));
        CHECK(parsed.has_factors_line == (type != dataset::ExampleType::kRating));
        CHECK(a.sequence_logprob(r.prompt, ta) <= 0.0);
      }
    }
    GenerationRequest greedy{Persona::kSF, seg.image, seg.attributes, "rate", 0.0};
    CHECK(a.generate(greedy) == a.generate(greedy));
  }
}

TEST_CASE("mock snapshot round trip") {
  MockBackend m({.seed = 2});
  auto ex = corpus_examples(32);
  m.apply_sft_step(std::span(ex).first(16), 2e-4);
  m.apply_preference_step(std::vector<PreferenceUpdate>{{"p", "x", "y", 0.05}}, 5e-6);
  auto blob = m.snapshot();
  MockBackend fresh({.seed = 2});
  fresh.restore(blob);
  CHECK(fresh.snapshot() == blob);
  CHECK(fresh.sequence_logprob("p", "x") == m.sequence_logprob("p", "x"));
  CHECK(code_of([&] { fresh.restore("{}"); }) == ErrorCode::kBackend);
}

TEST_CASE("run_sft: update count, errors, determinism") {
  auto ex = corpus_examples(160);
  MockBackend m({.seed = 1});
  auto report = run_sft(ex, SftConfig{}, m);
  CHECK(report.optimizer_updates == 50);
  CHECK(report.steps.size() == 50);
  CHECK(report.steps.front().lr == 0.0);
  CHECK(report.steps.back().lr == doctest::Approx(0.1 * 3.2e-5).epsilon(1e-9));
  CHECK(report.steps.back().loss < report.steps.front().loss);

  MockBackend again({.seed = 1});
  CHECK(run_sft(ex, SftConfig{}, again).steps == report.steps);
  CHECK(again.snapshot() == m.snapshot());

  // Drop-last: 175 examples still give 10 updates per epoch.
  auto more = corpus_examples(175);
  MockBackend m2;
  CHECK(run_sft(more, SftConfig{}, m2).optimizer_updates == 5 * (175 / 16));

  MockBackend m3;
  CHECK(code_of([&] { run_sft({}, SftConfig{}, m3); }) == ErrorCode::kInsufficientData);
  CHECK(code_of([&] { run_sft(corpus_examples(10), SftConfig{}, m3); }) ==
        ErrorCode::kInsufficientData);
}

TEST_CASE("run_sft with per-epoch budgets draws fixed ratios") {
  auto ex = corpus_examples(400);
  SftConfig cfg;
  cfg.epoch_budget = 96;
  auto orders = sft_epoch_orders(ex, cfg);
  REQUIRE(orders.size() == 5);
  for (const auto& order : orders) {
    CHECK(order.size() == 96);
    std::array<int, 3> counts{};
    for (auto i : order) ++counts[static_cast<int>(ex[i].type) - 1];
    auto expected = dataset::plan_counts(
        {static_cast<std::size_t>(std::count_if(ex.begin(), ex.end(), [](auto& e) { return e.type == dataset::ExampleType::kReasoning; })),
         static_cast<std::size_t>(std::count_if(ex.begin(), ex.end(), [](auto& e) { return e.type == dataset::ExampleType::kStructured; })),
         static_cast<std::size_t>(std::count_if(ex.begin(), ex.end(), [](auto& e) { return e.type == dataset::ExampleType::kRating; }))},
        96, cfg.ratios);
    for (int t = 0; t < 3; ++t) CHECK(static_cast<std::size_t>(counts[t]) == expected[t]);
  }
  MockBackend m;
  CHECK(run_sft(ex, cfg, m).optimizer_updates == 5 * 6);
}

TEST_CASE("SFT learns persona-specific ratings") {
  auto c = synth::corpus(120, 12, 60, 4);
  auto ex = synth::examples(c, 0.15);
  MockBackend m({.seed = 4});
  run_sft(ex, SftConfig{}, m);
  // Trained willingness for protected segments separates IBC from NWNH.
  const auto& seg = *std::find_if(c.segments.begin(), c.segments.end(), [](const auto& s) {
    return synth::protection_level(s.attributes) == 2;
  });
  auto rate = [&](Persona p) {
    GenerationRequest r{p, seg.image, seg.attributes,
                        dataset::render_prompt(dataset::ExampleType::kRating, p, seg.attributes)};
    return parser::parse(m.generate(r)).ratings.willingness;
  };
  CHECK(rate(Persona::kSF) > rate(Persona::kNWNH));
}

TEST_CASE("backend failure checkpoints and resumes to the same result") {
  auto ex = corpus_examples(160);
  MockBackend reference({.seed = 9});
  auto full = run_sft(ex, SftConfig{}, reference);

  auto dir = temp_dir("resume");
  MockBackend inner({.seed = 9});
  FlakyBackend flaky(inner, 27);  // fails in epoch 2
  CHECK(code_of([&] { run_sft(ex, SftConfig{}, flaky, {dir}); }) == ErrorCode::kTrainingAborted);
  REQUIRE(std::filesystem::exists(dir / "checkpoint.json"));

  MockBackend restarted({.seed = 9});
  auto resumed = run_sft(ex, SftConfig{}, restarted, {dir, true});
  CHECK(resumed.resumed);
  CHECK(resumed.steps == full.steps);
  CHECK(resumed.adapter_ref == full.adapter_ref);
  CHECK_FALSE(std::filesystem::exists(dir / "checkpoint.json"));
  CHECK(std::filesystem::exists(dir / "adapter.bin"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_dpo batches, identical pairs and loss reduction") {
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 500; ++i) {
    auto s = std::to_string(i);
    pairs.push_back({"pair-" + s, "prompt " + s, "good answer " + s, "poor answer number " + s, 2});
  }
  MockBackend m({.seed = 3});
  auto report = run_dpo(pairs, DpoConfig{}, m);
  CHECK(report.optimizer_updates == 189);
  CHECK(report.initial_mean_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(report.final_mean_loss < report.initial_mean_loss);

  MockBackend m2({.seed = 3});
  std::vector<PreferencePair> same = {{"x", "p", "same text", "same text", 2}};
  auto r2 = run_dpo(same, DpoConfig{}, m2);
  CHECK(std::abs(r2.final_mean_loss - std::log(2.0)) < 1e-12);
  for (const auto& s : r2.steps) CHECK(std::abs(s.loss - std::log(2.0)) < 1e-12);

  MockBackend m3;
  CHECK(code_of([&] { run_dpo({}, DpoConfig{}, m3); }) == ErrorCode::kInsufficientData);
}

TEST_CASE("remote backend over HTTP mirrors the mock") {
  MockBackend served({.seed = 21});
  httplib::Server server;
  bind_backend_routes(server, served);
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  MockBackend local({.seed = 21});
  RemoteBackend remote("http://127.0.0.1:" + std::to_string(port), 10);
  auto ex = corpus_examples(16);
  CHECK(remote.apply_sft_step(ex, 2e-4) == local.apply_sft_step(ex, 2e-4));
  GenerationRequest r{Persona::kEC, ex[0].image_ref, ex[0].attributes, ex[0].prompt, 0.7};
  CHECK(remote.generate(r) == local.generate(r));
  CHECK(remote.sequence_logprob("a", "b c") == local.sequence_logprob("a", "b c"));
  std::vector<PreferenceUpdate> u = {{"a", "b c", "d", 0.1}};
  remote.apply_preference_step(u, 5e-6);
  local.apply_preference_step(u, 5e-6);
  CHECK(remote.snapshot() == local.snapshot());
  remote.restore(local.snapshot());
  CHECK(code_of([&] { remote.restore("garbage"); }) == ErrorCode::kBackend);

  server.stop();
  t.join();
  CHECK(code_of([&] { remote.snapshot(); }) == ErrorCode::kBackend);
}
