#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "agfa/config_io.hpp"
#include "agfa/error.hpp"
#include "agfa/tensor_io.hpp"
#include "agfa/trainer.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace agfa {

namespace {

constexpr char kMagic[5] = {'A', 'G', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_i32(std::ostream& os, int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_blk(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_f64s(std::ostream& os, const std::vector<double>& v) {
  put_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

[[noreturn]] void truncated(const std::string& what) {
  fail(ErrorKind::kTruncatedPayload, "checkpoint ends inside " + what);
}

uint32_t get_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) truncated(what);
  return v;
}
uint64_t get_u64(std::istream& is, const char* what) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) truncated(what);
  return v;
}
int32_t get_i32(std::istream& is, const char* what) {
  int32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) truncated(what);
  return v;
}
double get_f64(std::istream& is, const char* what) {
  double v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) truncated(what);
  return v;
}
std::string get_blk(std::istream& is, const char* what) {
  uint32_t len = get_u32(is, what);
  std::string s(len, '\0');
  if (len && !is.read(s.data(), len)) truncated(what);
  return s;
}
std::vector<double> get_f64s(std::istream& is, const char* what) {
  uint64_t len = get_u64(is, what);
  std::vector<double> v(len);
  if (len && !is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(len * 8)))
    truncated(what);
  return v;
}

std::string fmt17(double v) {
  char buf[64];
  snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string options_to_text(const TrainOptions& o) {
  std::ostringstream os;
  os << "epochs = " << o.epochs << "\n";
  os << "batch_size = " << o.batch_size << "\n";
  os << "lambda = " << fmt17(o.lambda) << "\n";
  os << "epsilon = " << fmt17(o.epsilon) << "\n";
  os << "adam_lr = " << fmt17(o.adam.lr) << "\n";
  os << "adam_beta1 = " << fmt17(o.adam.beta1) << "\n";
  os << "adam_beta2 = " << fmt17(o.adam.beta2) << "\n";
  os << "adam_eps = " << fmt17(o.adam.eps) << "\n";
  os << "weight_decay = " << fmt17(o.adam.weight_decay) << "\n";
  os << "decoupled_weight_decay = " << (o.adam.decoupled_weight_decay ? 1 : 0) << "\n";
  os << "schedule_base_lr = " << fmt17(o.schedule.base_lr) << "\n";
  os << "schedule_t0 = " << o.schedule.t0 << "\n";
  os << "schedule_t_mult = " << o.schedule.t_mult << "\n";
  os << "schedule_eta_min = " << fmt17(o.schedule.eta_min) << "\n";
  os << "augment_enabled = " << (o.augment_enabled ? 1 : 0) << "\n";
  os << "crop = " << o.augment.crop_extents[0] << "," << o.augment.crop_extents[1] << ","
     << o.augment.crop_extents[2] << "\n";
  os << "max_rotation_deg = " << fmt17(o.augment.max_rotation_deg) << "\n";
  os << "rotate_probability = " << fmt17(o.augment.rotate_probability) << "\n";
  os << "flip_probability = " << fmt17(o.augment.flip_probability) << "\n";
  os << "normalize_inputs = " << (o.normalize_inputs ? 1 : 0) << "\n";
  os << "normalize_auto = " << (o.normalize.auto_window ? 1 : 0) << "\n";
  os << "normalize_lo = " << fmt17(o.normalize.window_lo) << "\n";
  os << "normalize_hi = " << fmt17(o.normalize.window_hi) << "\n";
  os << "val_interval = " << o.val_interval << "\n";
  os << "threshold = " << fmt17(o.threshold) << "\n";
  os << "closing_radius = " << o.closing_radius << "\n";
  os << "stop_at_train_dice = " << fmt17(o.stop_at_train_dice) << "\n";
  os << "train_dice_interval = " << o.train_dice_interval << "\n";
  os << "seed = " << o.seed << "\n";
  return os.str();
}

TrainOptions options_from_text(const std::string& text) {
  TrainOptions o;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
    };
    strip(key);
    strip(value);
    if (key == "epochs") o.epochs = std::stoi(value);
    else if (key == "batch_size") o.batch_size = std::stoi(value);
    else if (key == "lambda") o.lambda = std::stod(value);
    else if (key == "epsilon") o.epsilon = std::stod(value);
    else if (key == "adam_lr") o.adam.lr = std::stod(value);
    else if (key == "adam_beta1") o.adam.beta1 = std::stod(value);
    else if (key == "adam_beta2") o.adam.beta2 = std::stod(value);
    else if (key == "adam_eps") o.adam.eps = std::stod(value);
    else if (key == "weight_decay") o.adam.weight_decay = std::stod(value);
    else if (key == "decoupled_weight_decay") o.adam.decoupled_weight_decay = value == "1";
    else if (key == "schedule_base_lr") o.schedule.base_lr = std::stod(value);
    else if (key == "schedule_t0") o.schedule.t0 = std::stoi(value);
    else if (key == "schedule_t_mult") o.schedule.t_mult = std::stoi(value);
    else if (key == "schedule_eta_min") o.schedule.eta_min = std::stod(value);
    else if (key == "augment_enabled") o.augment_enabled = value == "1";
    else if (key == "crop") {
      std::istringstream vs(value);
      std::string tok;
      for (int a = 0; a < 3 && std::getline(vs, tok, ','); ++a)
        o.augment.crop_extents[a] = std::stoi(tok);
    } else if (key == "max_rotation_deg") o.augment.max_rotation_deg = std::stod(value);
    else if (key == "rotate_probability") o.augment.rotate_probability = std::stod(value);
    else if (key == "flip_probability") o.augment.flip_probability = std::stod(value);
    else if (key == "normalize_inputs") o.normalize_inputs = value == "1";
    else if (key == "normalize_auto") o.normalize.auto_window = value == "1";
    else if (key == "normalize_lo") o.normalize.window_lo = std::stod(value);
    else if (key == "normalize_hi") o.normalize.window_hi = std::stod(value);
    else if (key == "val_interval") o.val_interval = std::stoi(value);
    else if (key == "threshold") o.threshold = std::stod(value);
    else if (key == "closing_radius") o.closing_radius = std::stoi(value);
    else if (key == "stop_at_train_dice") o.stop_at_train_dice = std::stod(value);
    else if (key == "train_dice_interval") o.train_dice_interval = std::stoi(value);
    else if (key == "seed") o.seed = std::stoull(value);
    else fail(ErrorKind::kMalformedHeader, "checkpoint options: unknown field '" + key + "'");
  }
  return o;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::kIo, "cannot open for write: " + path);

  os.write(kMagic, 5);
  put_u32(os, kVersion);
  put_u64(os, net_.seed());
  put_blk(os, config_to_text(net_.config()));
  put_blk(os, options_to_text(options_));
  put_i32(os, completed_epochs_);
  put_f64(os, best_val_dice_);

  const auto& params = net_.named_parameters();
  put_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_blk(os, name);
    save_tensor(os, t);
  }

  const auto& stats = net_.named_stats();
  put_u32(os, static_cast<uint32_t>(stats.size()));
  for (const auto& [name, rs] : stats) {
    put_blk(os, name);
    os.put(rs->initialized ? 1 : 0);
    put_f64s(os, rs->mean);
    put_f64s(os, rs->var);
    put_f64(os, rs->momentum);
    put_f64(os, rs->eps);
  }

  put_u64(os, static_cast<uint64_t>(adam_.step));
  put_u32(os, static_cast<uint32_t>(adam_.m.size()));
  for (size_t i = 0; i < adam_.m.size(); ++i) {
    put_f64s(os, adam_.m[i]);
    put_f64s(os, adam_.v[i]);
  }

  put_u32(os, static_cast<uint32_t>(history_.size()));
  for (const auto& r : history_) {
    put_i32(os, r.epoch);
    put_f64(os, r.lr);
    put_f64(os, r.l_wce);
    put_f64(os, r.l_dice);
    put_f64(os, r.total);
    put_f64(os, r.val_dice);
    put_f64(os, r.train_dice);
  }

  os.put(best_params_.empty() ? 0 : 1);
  if (!best_params_.empty()) {
    put_u32(os, static_cast<uint32_t>(best_params_.size()));
    for (const auto& [name, values] : best_params_) {
      put_blk(os, name);
      put_f64s(os, values);
    }
  }
  if (!os) fail(ErrorKind::kIo, "checkpoint write failed: " + path);
}

Trainer Trainer::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open for read: " + path);

  char magic[5];
  if (!is.read(magic, 5)) truncated("magic");
  if (std::memcmp(magic, "AGCK", 4) != 0)
    fail(ErrorKind::kMalformedHeader, path + ": not a checkpoint (bad magic)");
  if (magic[4] != '1')
    fail(ErrorKind::kUnsupportedVersion, path + ": checkpoint container '" + std::string(magic, 5) + "'");
  const uint32_t version = get_u32(is, "version");
  if (version != kVersion)
    fail(ErrorKind::kUnsupportedVersion, path + ": checkpoint version " + std::to_string(version));

  const uint64_t seed = get_u64(is, "seed");
  const ModelConfig config = config_from_text(get_blk(is, "config"));
  const TrainOptions options = options_from_text(get_blk(is, "options"));
  const int completed = get_i32(is, "epoch counter");
  const double best_val = get_f64(is, "best validation dice");

  Trainer trainer(AgfaNet(config, seed), options);
  trainer.completed_epochs_ = completed;
  trainer.best_val_dice_ = best_val;

  const uint32_t n_params = get_u32(is, "parameter count");
  if (n_params != trainer.net_.named_parameters().size())
    fail(ErrorKind::kMalformedHeader, path + ": parameter count does not match the config");
  for (uint32_t i = 0; i < n_params; ++i) {
    const std::string name = get_blk(is, "parameter name");
    Tensor stored = load_tensor(is);
    Tensor* live = trainer.net_.find_parameter(name);
    if (!live)
      fail(ErrorKind::kMalformedHeader, path + ": unknown parameter '" + name + "'");
    if (stored.shape() != live->shape())
      fail(ErrorKind::kMalformedHeader, path + ": shape mismatch for '" + name + "'");
    live->values() = stored.values();
  }

  const uint32_t n_stats = get_u32(is, "stats count");
  if (n_stats != trainer.net_.named_stats().size())
    fail(ErrorKind::kMalformedHeader, path + ": running-stats count does not match the config");
  for (uint32_t i = 0; i < n_stats; ++i) {
    const std::string name = get_blk(is, "stats name");
    if (name != trainer.net_.named_stats()[i].first)
      fail(ErrorKind::kMalformedHeader, path + ": running-stats order mismatch at '" + name + "'");
    RunningStats& rs = *trainer.net_.named_stats()[i].second;
    int c = is.get();
    if (c == EOF) truncated("stats flag");
    rs.initialized = c != 0;
    rs.mean = get_f64s(is, "stats mean");
    rs.var = get_f64s(is, "stats var");
    rs.momentum = get_f64(is, "stats momentum");
    rs.eps = get_f64(is, "stats eps");
  }

  trainer.adam_.step = static_cast<int64_t>(get_u64(is, "adam step"));
  const uint32_t n_moments = get_u32(is, "adam moment count");
  if (n_moments != n_params)
    fail(ErrorKind::kMalformedHeader, path + ": optimizer state does not match the parameters");
  trainer.adam_.m.clear();
  trainer.adam_.v.clear();
  for (uint32_t i = 0; i < n_moments; ++i) {
    trainer.adam_.m.push_back(get_f64s(is, "adam m"));
    trainer.adam_.v.push_back(get_f64s(is, "adam v"));
  }

  const uint32_t n_history = get_u32(is, "history count");
  for (uint32_t i = 0; i < n_history; ++i) {
    EpochRecord r;
    r.epoch = get_i32(is, "history epoch");
    r.lr = get_f64(is, "history lr");
    r.l_wce = get_f64(is, "history wce");
    r.l_dice = get_f64(is, "history dice");
    r.total = get_f64(is, "history total");
    r.val_dice = get_f64(is, "history val");
    r.train_dice = get_f64(is, "history train dice");
    trainer.history_.push_back(r);
  }

  int has_best = is.get();
  if (has_best == EOF) truncated("best-parameter flag");
  if (has_best) {
    const uint32_t n = get_u32(is, "best parameter count");
    for (uint32_t i = 0; i < n; ++i) {
      const std::string name = get_blk(is, "best parameter name");
      trainer.best_params_.emplace_back(name, get_f64s(is, "best parameter values"));
    }
  }
  return trainer;
}

}  // namespace agfa
