#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <agfa/metrics.hpp>
#include <agfa/volume.hpp>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace agfa;
namespace fs = std::filesystem;

#ifndef AGFA_CLI_PATH
#error "AGFA_CLI_PATH must point at the agfa binary"
#endif

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const std::string command = std::string(AGFA_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult result;
  char buffer[4096];
  while (size_t n = fread(buffer, 1, sizeof(buffer), pipe)) result.output.append(buffer, n);
  int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "agfa_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("phantom writes the requested dataset with a manifest") {
  const fs::path dir = fresh_dir("phantom");
  CliResult r = run_cli("phantom --count 4 --seed 7 --extents 16 16 16 --spacing 0.5 0.5 0.5 --out-dir " +
                        dir.string());
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  auto entries = read_manifest((dir / "manifest.json").string());
  REQUIRE(entries.size() == 4);
  CHECK(entries[0].id == "phantom_000");
  Volume v = load_volume(entries[0].volume_path);
  CHECK(v.geom.extents == std::array<int, 3>{16, 16, 16});
  LabelMask m = load_mask(entries[0].mask_path);
  CHECK(m.geom == v.geom);
}

TEST_CASE("phantom is deterministic per seed") {
  const fs::path a = fresh_dir("phantom_det_a");
  const fs::path b = fresh_dir("phantom_det_b");
  const std::string flags = "phantom --count 2 --seed 99 --extents 16 16 16 --spacing 0.5 0.5 0.5 --out-dir ";
  REQUIRE(run_cli(flags + a.string()).exit_code == 0);
  REQUIRE(run_cli(flags + b.string()).exit_code == 0);
  for (const char* name : {"phantom_000_vol.agv", "phantom_000_msk.agv", "phantom_001_vol.agv"})
    CHECK(slurp(a / name) == slurp(b / name));
}

TEST_CASE("phantom rejects an unwritable output directory with exit 2") {
  CliResult r = run_cli("phantom --count 1 --out-dir /proc/definitely/not/writable");
  CHECK(r.exit_code == 2);
}

TEST_CASE("train writes a log line per epoch plus checkpoint and config") {
  const fs::path data = fresh_dir("train_data");
  REQUIRE(run_cli("phantom --count 2 --seed 3 --extents 16 16 16 --spacing 0.5 0.5 0.5 --out-dir " +
                  data.string())
              .exit_code == 0);
  const fs::path out = fresh_dir("train_out");
  CliResult r = run_cli("train --config baseline --data-manifest " + (data / "manifest.json").string() +
                        " --epochs 5 --seed 1 --out " + out.string() +
                        " --base-channels 4 --batch-size 1 --no-augment --val-fraction 0");
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  CHECK(fs::exists(out / "fold0.agck"));
  CHECK(fs::exists(out / "config.txt"));
  const std::string log = slurp(out / "fold0.log");
  CHECK(count_lines(log) == 5);
  CHECK(log.find("epoch=5") != std::string::npos);
  CHECK(log.find("l_wce=") != std::string::npos);
}

TEST_CASE("train accepts the full-architecture config by name") {
  const fs::path data = fresh_dir("train_agfa_data");
  REQUIRE(run_cli("phantom --count 1 --seed 5 --extents 16 16 16 --spacing 0.5 0.5 0.5 --out-dir " +
                  data.string())
              .exit_code == 0);
  const fs::path out = fresh_dir("train_agfa_out");
  CliResult r = run_cli("train --config agfa --data-manifest " + (data / "manifest.json").string() +
                        " --epochs 1 --seed 1 --out " + out.string() +
                        " --base-channels 4 --batch-size 1 --no-augment --val-fraction 0");
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  const std::string config = slurp(out / "config.txt");
  CHECK(config.find("use_frm = true") != std::string::npos);
  CHECK(config.find("use_safa = true") != std::string::npos);
  CHECK(config.find("use_hfim = true") != std::string::npos);
}

TEST_CASE("infer matches the input geometry and postprocess yields one component") {
  const fs::path data = fresh_dir("infer_data");
  REQUIRE(run_cli("phantom --count 1 --seed 11 --extents 16 16 16 --spacing 0.5 0.5 0.5 --out-dir " +
                  data.string())
              .exit_code == 0);
  const fs::path out = fresh_dir("infer_out");
  REQUIRE(run_cli("train --config baseline --data-manifest " + (data / "manifest.json").string() +
                  " --epochs 3 --seed 2 --out " + out.string() +
                  " --base-channels 4 --batch-size 1 --no-augment --val-fraction 0")
              .exit_code == 0);

  const fs::path pred = out / "pred.agv";
  CliResult r = run_cli("infer --checkpoint " + (out / "fold0.agck").string() + " --volume " +
                        (data / "phantom_000_vol.agv").string() + " --out " + pred.string() +
                        " --postprocess");
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  LabelMask mask = load_mask(pred.string());
  Volume input = load_volume((data / "phantom_000_vol.agv").string());
  CHECK(mask.geom == input.geom);
  CHECK(count_components(mask) <= 1);
}

TEST_CASE("infer on an incompatible volume exits with a data error") {
  const fs::path data = fresh_dir("infer_bad_data");
  REQUIRE(run_cli("phantom --count 1 --seed 13 --extents 16 16 16 --spacing 0.5 0.5 0.5 --out-dir " +
                  data.string())
              .exit_code == 0);
  const fs::path out = fresh_dir("infer_bad_out");
  REQUIRE(run_cli("train --config baseline --data-manifest " + (data / "manifest.json").string() +
                  " --epochs 1 --seed 2 --out " + out.string() +
                  " --base-channels 4 --batch-size 1 --no-augment --val-fraction 0")
              .exit_code == 0);
  // 15 is not divisible by 16: the forward contract rejects it
  Volume bad;
  bad.geom.extents = {15, 16, 16};
  bad.geom.spacing = {0.5, 0.5, 0.5};
  bad.intensities.assign(bad.geom.voxel_count(), 0.0);
  save_volume((data / "bad.agv").string(), bad);
  CliResult r = run_cli("infer --checkpoint " + (out / "fold0.agck").string() + " --volume " +
                        (data / "bad.agv").string() + " --out " + (out / "pred.agv").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("divisible") != std::string::npos);
}

TEST_CASE("eval agrees with the library metrics and writes both report forms") {
  const fs::path dir = fresh_dir("eval");
  // two handmade masks with known overlap
  LabelMask truth;
  truth.geom.extents = {4, 4, 4};
  truth.geom.spacing = {1, 1, 1};
  truth.values.assign(64, 0);
  for (int i = 0; i < 8; ++i) truth.values[i] = 1;
  LabelMask pred = truth;
  pred.values[8] = 1;  // one false positive
  save_mask((dir / "truth.agv").string(), truth);
  save_mask((dir / "pred.agv").string(), pred);

  CliResult r = run_cli("eval --pred " + (dir / "pred.agv").string() + " --truth " +
                        (dir / "truth.agv").string() + " --report " + (dir / "report").string());
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);

  MetricsReport expect = evaluate_prediction(pred, truth);
  MetricsReport got = report_from_text(slurp(dir / "report.txt"));
  CHECK(got.dice == expect.dice);
  CHECK(got.recall == expect.recall);
  CHECK(got.precision == expect.precision);
  CHECK(got.hausdorff_mm == expect.hausdorff_mm);
  CHECK(got.counts.tp == expect.counts.tp);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(r.output.find("dice=") != std::string::npos);
}

TEST_CASE("eval of identical masks reports perfect metrics and zero distance") {
  const fs::path dir = fresh_dir("eval_perfect");
  LabelMask m;
  m.geom.extents = {4, 4, 4};
  m.geom.spacing = {1, 1, 1};
  m.values.assign(64, 0);
  m.values[21] = 1;
  m.values[22] = 1;
  save_mask((dir / "m.agv").string(), m);
  CliResult r = run_cli("eval --pred " + (dir / "m.agv").string() + " --truth " + (dir / "m.agv").string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("dice=1") != std::string::npos);
  CHECK(r.output.find("hausdorff_mm=0") != std::string::npos);
}

TEST_CASE("eval of misaligned masks exits with a data error") {
  const fs::path dir = fresh_dir("eval_misaligned");
  LabelMask a;
  a.geom.extents = {4, 4, 4};
  a.geom.spacing = {1, 1, 1};
  a.values.assign(64, 0);
  LabelMask b = a;
  b.geom.extents = {4, 4, 8};
  b.values.assign(128, 0);
  save_mask((dir / "a.agv").string(), a);
  save_mask((dir / "b.agv").string(), b);
  CliResult r = run_cli("eval --pred " + (dir / "a.agv").string() + " --truth " + (dir / "b.agv").string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("eval of disjoint masks reports zero dice") {
  const fs::path dir = fresh_dir("eval_disjoint");
  LabelMask a;
  a.geom.extents = {4, 4, 4};
  a.geom.spacing = {1, 1, 1};
  a.values.assign(64, 0);
  LabelMask b = a;
  a.values[0] = 1;
  b.values[63] = 1;
  save_mask((dir / "a.agv").string(), a);
  save_mask((dir / "b.agv").string(), b);
  CliResult r = run_cli("eval --pred " + (dir / "a.agv").string() + " --truth " + (dir / "b.agv").string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("dice=0\n") != std::string::npos);
}

TEST_CASE("train documents the published 500-epoch default") {
  CliResult r = run_cli("train --help");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("--epochs") != std::string::npos);
  CHECK(r.output.find("500") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("train --definitely-not-a-flag").exit_code == 1);
  CHECK(run_cli("nonexistent-subcommand").exit_code == 1);
  CHECK(run_cli("infer").exit_code == 1);  // missing required options
}

TEST_CASE("missing data files exit with code 2") {
  CHECK(run_cli("eval --pred /nope/a.agv --truth /nope/b.agv").exit_code == 2);
  CHECK(run_cli("train --data-manifest /nope/manifest.json --out /tmp/agfa_cli_tests/x").exit_code == 2);
}
