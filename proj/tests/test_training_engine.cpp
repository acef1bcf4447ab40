#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <agfa/error.hpp>
#include <agfa/optimizer.hpp>
#include <agfa/phantom.hpp>
#include <agfa/rng.hpp>
#include <agfa/trainer.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace agfa;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
  fs::path dir = fs::temp_directory_path() / "agfa_training_tests";
  fs::create_directories(dir);
  return dir;
}

std::vector<Sample> phantom_set(int count, uint64_t seed, std::array<int, 3> extents = {16, 16, 16}) {
  std::vector<Sample> samples;
  for (int i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.seed = Rng::mix(seed, static_cast<uint64_t>(i));
    spec.extents = extents;
    spec.spacing = {0.5, 0.5, 0.5};
    spec.radius_min_mm = 0.9;
    spec.radius_max_mm = 1.8;
    spec.noise_sigma = 0.03;
    Sample s = generate_phantom(spec);
    s.id = "p" + std::to_string(i);
    samples.push_back(std::move(s));
  }
  return samples;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.base_channels = 4;
  c.depth = 3;  // 8-divisible extents suffice
  return c;
}

TrainOptions tiny_options(int epochs, uint64_t seed) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = 2;
  o.augment_enabled = false;
  o.val_interval = 2;
  o.seed = seed;
  o.schedule.t0 = 10;
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// adam

TEST_CASE("adam with zero gradients and zero weight decay is a fixed point") {
  std::vector<std::pair<std::string, Tensor>> params;
  Tensor p = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
  params.emplace_back("p", p);
  backward(mul_scalar(sum(p), 0.0));  // populates zero gradients

  AdamState state;
  state.options.weight_decay = 0.0;
  for (int i = 0; i < 5; ++i) adam_step(params, state, 0.1);
  CHECK(p.values() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam first step moves a scalar by about -lr under unit gradient") {
  Tensor p = Tensor::scalar(0.0, true);
  std::vector<std::pair<std::string, Tensor>> params{{"w", p}};
  backward(sum(p));  // gradient exactly 1

  AdamState state;
  state.options.weight_decay = 0.0;
  adam_step(params, state, 0.1);
  // m_hat = 1, v_hat = 1  ->  step = lr / (1 + eps)
  CHECK(p.values()[0] == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(state.step == 1);
}

TEST_CASE("adam trajectories are deterministic") {
  auto run_once = [] {
    Rng rng(7);
    std::vector<double> init(8);
    for (auto& v : init) v = rng.uniform(-1, 1);
    Tensor p = Tensor::from_values({8}, init, true);
    std::vector<std::pair<std::string, Tensor>> params{{"w", p}};
    AdamState state;
    for (int step = 0; step < 25; ++step) {
      p.zero_grad();
      backward(sum(mul(p, p)));
      adam_step(params, state, 0.05);
    }
    return p.values();
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("adam names the parameter that is missing its gradient") {
  Tensor p = Tensor::scalar(1.0, true);
  std::vector<std::pair<std::string, Tensor>> params{{"enc1.block1.conv.w", p}};
  AdamState state;
  try {
    adam_step(params, state, 0.1);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("enc1.block1.conv.w") != std::string::npos);
  }
}

TEST_CASE("decoupled weight decay shrinks parameters even at zero gradient") {
  Tensor p = Tensor::scalar(1.0, true);
  std::vector<std::pair<std::string, Tensor>> params{{"w", p}};
  backward(mul_scalar(sum(p), 0.0));
  AdamState state;
  state.options.weight_decay = 1e-2;
  adam_step(params, state, 0.1);
  CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1 * 1e-2));
}

// ---------------------------------------------------------------------------
// schedule

TEST_CASE("lr_at starts at the published base rate") {
  CosineRestartSchedule s;
  CHECK(lr_at(s, 0) == 0.003);
}

TEST_CASE("lr_at hits the cosine midpoint halfway through a cycle") {
  CosineRestartSchedule s;
  s.base_lr = 0.003;
  s.t0 = 50;
  s.eta_min = 0.0005;
  CHECK(lr_at(s, 25) == doctest::Approx(s.eta_min + 0.5 * (s.base_lr - s.eta_min)));
}

TEST_CASE("warm restarts return to the base rate at every cycle boundary") {
  CosineRestartSchedule s;
  s.t0 = 50;
  s.t_mult = 2;
  CHECK(lr_at(s, 50) == s.base_lr);       // second cycle starts
  CHECK(lr_at(s, 150) == s.base_lr);      // third cycle (50 + 100)
  CHECK(lr_at(s, 350) == s.base_lr);      // fourth cycle (50 + 100 + 200)
  CHECK(lr_at(s, 49) < 5e-6);             // end of first cycle approaches eta_min
}

TEST_CASE("lr_at stays within [eta_min, base_lr] over many iterations") {
  CosineRestartSchedule s;
  s.base_lr = 0.003;
  s.eta_min = 1e-5;
  s.t0 = 7;
  s.t_mult = 3;
  for (int64_t t = 0; t < 100000; ++t) {
    double lr = lr_at(s, t);
    CHECK(lr >= s.eta_min - 1e-15);
    CHECK(lr <= s.base_lr + 1e-15);
  }
}

// ---------------------------------------------------------------------------
// trainer

TEST_CASE("one epoch over two samples produces one finite history record") {
  auto samples = phantom_set(2, 101, {8, 8, 8});
  Trainer trainer(AgfaNet(tiny_config(), 3), tiny_options(1, 11));
  trainer.run(samples, {});
  REQUIRE(trainer.history().size() == 1);
  const EpochRecord& r = trainer.history()[0];
  CHECK(r.epoch == 1);
  CHECK(std::isfinite(r.l_wce));
  CHECK(std::isfinite(r.l_dice));
  CHECK(std::isfinite(r.total));
  CHECK(r.lr == 0.003);
}

TEST_CASE("identical seeds give identical histories and parameters") {
  auto samples = phantom_set(3, 102, {8, 8, 8});
  auto run_once = [&] {
    Trainer trainer(AgfaNet(tiny_config(), 5), tiny_options(4, 77));
    trainer.run(samples, {});
    return trainer;
  };
  Trainer a = run_once();
  Trainer b = run_once();
  REQUIRE(a.history().size() == b.history().size());
  CHECK(history_to_log(a.history()) == history_to_log(b.history()));
  for (size_t i = 0; i < a.net().named_parameters().size(); ++i) {
    const auto& at = a.net().named_parameters()[i].second;
    const auto& bt = b.net().named_parameters()[i].second;
    CHECK(at.values() == bt.values());
  }
}

TEST_CASE("training aborts with a numeric error once parameters diverge to NaN") {
  auto samples = phantom_set(1, 103, {8, 8, 8});
  Trainer trainer(AgfaNet(tiny_config(), 3), tiny_options(1, 1));
  Tensor* head_bias = trainer.net().find_parameter("head.b");
  REQUIRE(head_bias != nullptr);
  head_bias->values()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    trainer.run(samples, {});
    FAIL("expected numeric abort");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    CHECK(std::string(e.what()).find("batch 1") != std::string::npos);
  }
}

TEST_CASE("validation runs on the configured interval and tracks the best epoch") {
  auto samples = phantom_set(3, 104, {8, 8, 8});
  std::vector<Sample> val(samples.begin() + 2, samples.end());
  std::vector<Sample> train(samples.begin(), samples.begin() + 2);
  TrainOptions opts = tiny_options(4, 9);
  opts.val_interval = 2;
  Trainer trainer(AgfaNet(tiny_config(), 5), opts);
  trainer.run(train, val);
  REQUIRE(trainer.history().size() == 4);
  CHECK(std::isnan(trainer.history()[0].val_dice));
  CHECK_FALSE(std::isnan(trainer.history()[1].val_dice));
  CHECK(std::isnan(trainer.history()[2].val_dice));
  CHECK_FALSE(std::isnan(trainer.history()[3].val_dice));
  CHECK(trainer.best_val_dice() >= 0.0);
  CHECK_FALSE(trainer.best_parameters().empty());
}

TEST_CASE("an overfit-style run reduces the loss with a non-increasing moving average") {
  auto samples = phantom_set(2, 105, {16, 16, 16});
  TrainOptions opts = tiny_options(60, 21);
  opts.batch_size = 1;
  Trainer trainer(AgfaNet(tiny_config(), 8), opts);
  trainer.run(samples, {});
  const auto& h = trainer.history();
  REQUIRE(h.size() == 60);
  // average loss over the last five epochs clearly below the first epoch
  double tail = 0.0;
  for (size_t i = h.size() - 5; i < h.size(); ++i) tail += h[i].total;
  tail /= 5.0;
  CHECK(tail < h.front().total * 0.8);

  // 20-epoch moving average of the training loss is non-increasing past
  // epoch 20, with at most two violations tolerated
  auto moving_avg = [&](size_t end) {  // inclusive window [end-19, end]
    double acc = 0.0;
    for (size_t i = end - 19; i <= end; ++i) acc += h[i].total;
    return acc / 20.0;
  };
  int violations = 0;
  for (size_t e = 20; e < h.size(); ++e)
    if (moving_avg(e) > moving_avg(e - 1)) ++violations;
  CHECK(violations <= 2);
}

// ---------------------------------------------------------------------------
// evaluate

TEST_CASE("evaluate over training phantoms reports both raw and post-processed metrics") {
  auto samples = phantom_set(2, 106, {8, 8, 8});
  Trainer trainer(AgfaNet(tiny_config(), 2), tiny_options(2, 3));
  trainer.run(samples, {});
  EvaluateResult result = evaluate(trainer.net(), samples);
  CHECK(result.per_sample_raw.size() == 2);
  CHECK(result.per_sample_post.size() == 2);
  CHECK(result.raw.dice >= 0.0);
  CHECK(result.raw.dice <= 1.0);
  CHECK(result.postprocessed.dice >= 0.0);
  CHECK(result.postprocessed.dice <= 1.0);
}

TEST_CASE("infer_mask with postprocessing yields at most one component") {
  auto samples = phantom_set(1, 107, {8, 8, 8});
  Trainer trainer(AgfaNet(tiny_config(), 2), tiny_options(2, 3));
  trainer.run(samples, {});
  LabelMask mask = infer_mask(trainer.net(), samples[0].volume, {}, /*postprocess_output=*/true);
  CHECK(count_components(mask) <= 1);
  CHECK(mask.geom == samples[0].volume.geom);
}

// ---------------------------------------------------------------------------
// checkpoints

TEST_CASE("checkpoint save/load round trips parameters bitwise") {
  auto samples = phantom_set(2, 108, {8, 8, 8});
  Trainer trainer(AgfaNet(tiny_config(), 31), tiny_options(2, 13));
  trainer.run(samples, {});
  const auto path = (test_dir() / "roundtrip.agck").string();
  trainer.save_checkpoint(path);

  Trainer loaded = Trainer::load_checkpoint(path);
  CHECK(loaded.completed_epochs() == trainer.completed_epochs());
  REQUIRE(loaded.net().named_parameters().size() == trainer.net().named_parameters().size());
  for (size_t i = 0; i < loaded.net().named_parameters().size(); ++i) {
    const auto& [name, t] = trainer.net().named_parameters()[i];
    const auto& [lname, lt] = loaded.net().named_parameters()[i];
    CHECK(name == lname);
    CHECK(t.values() == lt.values());
  }
  CHECK(history_to_log(loaded.history()) == history_to_log(trainer.history()));
}

TEST_CASE("resuming mid-run matches the uninterrupted trajectory bitwise") {
  auto samples = phantom_set(3, 109, {8, 8, 8});

  Trainer full(AgfaNet(tiny_config(), 41), tiny_options(4, 17));
  full.run(samples, {});

  Trainer half(AgfaNet(tiny_config(), 41), tiny_options(2, 17));
  half.run(samples, {});
  const auto path = (test_dir() / "resume.agck").string();
  half.save_checkpoint(path);
  Trainer resumed = Trainer::load_checkpoint(path);
  resumed.options().epochs = 4;
  resumed.run(samples, {});

  CHECK(resumed.completed_epochs() == full.completed_epochs());
  for (size_t i = 0; i < full.net().named_parameters().size(); ++i) {
    const auto& ft = full.net().named_parameters()[i].second;
    const auto& rt = resumed.net().named_parameters()[i].second;
    CHECK(ft.values() == rt.values());
  }
  // running statistics must also match for identical eval behavior
  for (size_t i = 0; i < full.net().named_stats().size(); ++i) {
    CHECK(full.net().named_stats()[i].second->mean == resumed.net().named_stats()[i].second->mean);
    CHECK(full.net().named_stats()[i].second->var == resumed.net().named_stats()[i].second->var);
  }
}

TEST_CASE("two identical runs write byte-identical checkpoints") {
  auto samples = phantom_set(2, 110, {8, 8, 8});
  auto run_and_save = [&](const std::string& name) {
    Trainer trainer(AgfaNet(tiny_config(), 55), tiny_options(3, 23));
    trainer.run(samples, {});
    const auto path = (test_dir() / name).string();
    trainer.save_checkpoint(path);
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  CHECK(run_and_save("detA.agck") == run_and_save("detB.agck"));
}

TEST_CASE("corrupt checkpoints raise structured errors") {
  auto samples = phantom_set(1, 111, {8, 8, 8});
  Trainer trainer(AgfaNet(tiny_config(), 61), tiny_options(1, 29));
  trainer.run(samples, {});
  const auto good = test_dir() / "good.agck";
  trainer.save_checkpoint(good.string());

  std::ifstream is(good, std::ios::binary);
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string bytes = buf.str();

  const auto truncated_path = test_dir() / "trunc.agck";
  std::ofstream(truncated_path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  try {
    Trainer::load_checkpoint(truncated_path.string());
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTruncatedPayload);
  }

  const auto bad_version = test_dir() / "vers.agck";
  std::string v2 = bytes;
  v2[4] = '9';  // AGCK9
  std::ofstream(bad_version, std::ios::binary) << v2;
  try {
    Trainer::load_checkpoint(bad_version.string());
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUnsupportedVersion);
  }

  const auto bad_magic = test_dir() / "magic.agck";
  std::string m = bytes;
  m[0] = 'Z';
  std::ofstream(bad_magic, std::ios::binary) << m;
  try {
    Trainer::load_checkpoint(bad_magic.string());
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kMalformedHeader);
  }
}

TEST_CASE("training log lines carry the protocol fields") {
  auto samples = phantom_set(2, 112, {8, 8, 8});
  TrainOptions opts = tiny_options(2, 37);
  opts.val_interval = 1;
  Trainer trainer(AgfaNet(tiny_config(), 71), opts);
  trainer.run(samples, {samples[0]});
  std::string log = history_to_log(trainer.history());
  CHECK(log.find("epoch=1 ") != std::string::npos);
  CHECK(log.find("lr=") != std::string::npos);
  CHECK(log.find("l_wce=") != std::string::npos);
  CHECK(log.find("l_dice=") != std::string::npos);
  CHECK(log.find("total=") != std::string::npos);
  CHECK(log.find("val_dice=") != std::string::npos);
}
