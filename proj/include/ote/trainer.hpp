#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ote/config.hpp"
#include "ote/errors.hpp"
#include "ote/image.hpp"
#include "ote/networks.hpp"
#include "ote/objective.hpp"
#include "ote/optim.hpp"
#include "ote/pairing.hpp"
#include "ote/png_io.hpp"
#include "ote/rng.hpp"
#include "ote/serialize.hpp"

namespace ote {

struct TrainConfig {
  std::string profile = "desk";
  int epochs = 30;
  double lr_generator = 5e-5;
  double lr_critic = 1e-4;
  double decay_factor = 10.0;
  int decay_every = 100;
  int batch_size = 8;
  ObjectiveConfig objective;
  int image_side = 64;
  int ms_ssim_max_scales = 5;
  std::uint64_t seed = 0;
  std::uint64_t critic_seed = 0;  // 0: derived from seed
  int checkpoint_every = 1;       // epochs; 0 writes only the final checkpoint
  int steps_per_epoch = 0;        // 0: ceil(|low| / batch_size)
  GeneratorSpec generator;
  CriticSpec critic;
  AugmentSpec augment;

  /// Single-core budget: 64 px, a thinner generator and 4x the published rates,
  /// decayed at the halfway point like the full schedule.
  static TrainConfig desk() {
    TrainConfig c;
    c.lr_generator = 2e-4;
    c.lr_critic = 4e-4;
    c.decay_every = 15;
    c.generator.base_channels = 8;
    return c;
  }

  /// Published recipe: 200 epochs at 256 px, rates 5e-5 / 1e-4 decayed 10x every 100 epochs.
  static TrainConfig paper() {
    TrainConfig c;
    c.profile = "paper";
    c.epochs = 200;
    c.image_side = 256;
    return c;
  }

  static TrainConfig named(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw InvalidArgument("unknown profile '" + name + "' (expected desk or paper)");
  }

  void validate() const {
    if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be >= 1");
    if (!(lr_generator > 0.0) || !(lr_critic > 0.0)) throw InvalidArgument("TrainConfig: learning rates must be > 0");
    if (!(decay_factor >= 1.0)) throw InvalidArgument("TrainConfig: decay_factor must be >= 1");
    if (decay_every < 1) throw InvalidArgument("TrainConfig: decay_every must be >= 1");
    if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
    if (checkpoint_every < 0) throw InvalidArgument("TrainConfig: checkpoint_every must be >= 0");
    if (steps_per_epoch < 0) throw InvalidArgument("TrainConfig: steps_per_epoch must be >= 0");
    if (image_side < 8 || image_side > kMaxImageSide) throw InvalidArgument("TrainConfig: image_side out of range");
    if (critic.in_channels != generator.in_channels)
      throw InvalidArgument("TrainConfig: critic and generator channel counts differ");
    objective.validate();
    generator.validate();
    generator.check_input(generator.in_channels, image_side, image_side);
    critic.validate();
    augment.validate();
    ms_ssim_params();
  }

  MsSsimParams ms_ssim_params() const { return MsSsimParams::for_side(image_side, SsimParams{}, ms_ssim_max_scales); }

  /// Everything that shapes the trajectory. Epoch count and checkpoint cadence
  /// are excluded so a run can be resumed and extended.
  std::string fingerprint() const {
    std::ostringstream os;
    os.precision(17);
    os << "train/v1 lr_g=" << lr_generator << " lr_c=" << lr_critic << " decay=" << decay_factor << '/' << decay_every
       << " batch=" << batch_size << " lambda=" << objective.lambda << " gp=" << objective.gp_coefficient
       << " critic_steps=" << objective.critic_steps << " strict_kinks=" << objective.strict_kinks
       << " cost=" << to_string(objective.cost_kind)
       << " side=" << image_side << " scales=" << ms_ssim_max_scales << " seed=" << seed
       << " critic_seed=" << critic_seed << " steps_per_epoch=" << steps_per_epoch << " aug=" << augment.hflip_prob
       << ',' << augment.vflip_prob << ',' << augment.max_rotation_deg << ',' << augment.crop_fraction << " | "
       << generator.fingerprint() << " | " << critic.fingerprint();
    return os.str();
  }
};

/// Reads a key=value config. A `profile` key selects the starting point;
/// other keys override it. Unknown keys are errors.
inline TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = TrainConfig::desk()) {
  TrainConfig c = base;
  if (kv.has("profile")) {
    std::string p;
    kv.get("profile", p);
    c = TrainConfig::named(p);
  }
  kv.get("epochs", c.epochs);
  kv.get("lr_generator", c.lr_generator);
  kv.get("lr_critic", c.lr_critic);
  kv.get("decay_factor", c.decay_factor);
  kv.get("decay_every", c.decay_every);
  kv.get("batch_size", c.batch_size);
  kv.get("image_side", c.image_side);
  kv.get("ms_ssim_max_scales", c.ms_ssim_max_scales);
  kv.get("seed", c.seed);
  kv.get("critic_seed", c.critic_seed);
  kv.get("checkpoint_every", c.checkpoint_every);
  kv.get("steps_per_epoch", c.steps_per_epoch);
  kv.get("lambda", c.objective.lambda);
  kv.get("gp_coefficient", c.objective.gp_coefficient);
  kv.get("critic_steps", c.objective.critic_steps);
  kv.get("strict_kinks", c.objective.strict_kinks);
  if (kv.has("cost_kind")) {
    std::string s;
    kv.get("cost_kind", s);
    c.objective.cost_kind = parse_cost_kind(s);
  }
  kv.get("generator.in_channels", c.generator.in_channels);
  kv.get("generator.base_channels", c.generator.base_channels);
  kv.get("generator.depth", c.generator.depth);
  kv.get("generator.residual_blocks", c.generator.residual_blocks);
  kv.get("generator.eca_enabled", c.generator.eca_enabled);
  kv.get("generator.eca_gamma", c.generator.eca_gamma);
  kv.get("generator.eca_beta", c.generator.eca_beta);
  kv.get("generator.leaky_slope", c.generator.leaky_slope);
  c.critic.in_channels = c.generator.in_channels;
  kv.get("critic.base_channels", c.critic.base_channels);
  kv.get("critic.conv_layers", c.critic.conv_layers);
  kv.get("critic.leaky_slope", c.critic.leaky_slope);
  kv.get("augment.hflip_prob", c.augment.hflip_prob);
  kv.get("augment.vflip_prob", c.augment.vflip_prob);
  kv.get("augment.max_rotation_deg", c.augment.max_rotation_deg);
  kv.get("augment.crop_fraction", c.augment.crop_fraction);
  return c;
}

/// Learning rates at an epoch: base / decay_factor^floor(epoch / decay_every).
inline std::pair<double, double> lr_schedule(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw InvalidArgument("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
                          ")");
  const double f = std::pow(cfg.decay_factor, epoch / cfg.decay_every);
  return {cfg.lr_generator / f, cfg.lr_critic / f};
}

// ---------------------------------------------------------------------------
// Loss log

struct LossRow {
  int epoch = 0;
  int step = 0;  // global step index
  LossBreakdown loss;

  friend bool operator==(const LossRow& a, const LossRow& b) {
    return a.epoch == b.epoch && a.step == b.step && a.loss.transport_cost == b.loss.transport_cost &&
           a.loss.w1_estimate == b.loss.w1_estimate && a.loss.gp_term == b.loss.gp_term &&
           a.loss.generator_total == b.loss.generator_total && a.loss.critic_total == b.loss.critic_total &&
           a.loss.kink_hits == b.loss.kink_hits;
  }
};

inline constexpr const char* kLossLogHeader = "epoch,step,transport_cost,w1_estimate,gp_term,generator_total,critic_total,kink_hits";

inline std::string format_loss_row(const LossRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%lld", r.epoch, r.step, r.loss.transport_cost,
                r.loss.w1_estimate, r.loss.gp_term, r.loss.generator_total, r.loss.critic_total,
                static_cast<long long>(r.loss.kink_hits));
  return buf;
}

inline std::vector<LossRow> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("no such loss log: " + path.string());
  std::vector<LossRow> rows;
  std::string line;
  std::getline(in, line);
  if (line != kLossLogHeader) throw CorruptData("loss log has an unexpected header: " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRow r;
    long long kinks = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf,%lf,%lld", &r.epoch, &r.step, &r.loss.transport_cost,
                    &r.loss.w1_estimate, &r.loss.gp_term, &r.loss.generator_total, &r.loss.critic_total, &kinks) != 8)
      throw CorruptData("malformed loss log row: " + line);
    r.loss.kink_hits = kinks;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void put_generator_spec(std::map<std::string, std::string>& m, const GeneratorSpec& s) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  m["generator.in_channels"] = std::to_string(s.in_channels);
  m["generator.base_channels"] = std::to_string(s.base_channels);
  m["generator.depth"] = std::to_string(s.depth);
  m["generator.residual_blocks"] = std::to_string(s.residual_blocks);
  m["generator.eca_enabled"] = s.eca_enabled ? "true" : "false";
  m["generator.eca_gamma"] = num(s.eca_gamma);
  m["generator.eca_beta"] = num(s.eca_beta);
  m["generator.leaky_slope"] = num(s.leaky_slope);
  m["generator_fingerprint"] = s.fingerprint();
}

inline GeneratorSpec get_generator_spec(const std::map<std::string, std::string>& m) {
  std::ostringstream text;
  for (const auto& [k, v] : m)
    if (k.rfind("generator.", 0) == 0) text << k << " = " << v << '\n';
  const auto kv = KeyValues::parse_text(text.str());
  GeneratorSpec s;
  kv.get("generator.in_channels", s.in_channels);
  kv.get("generator.base_channels", s.base_channels);
  kv.get("generator.depth", s.depth);
  kv.get("generator.residual_blocks", s.residual_blocks);
  kv.get("generator.eca_enabled", s.eca_enabled);
  kv.get("generator.eca_gamma", s.eca_gamma);
  kv.get("generator.eca_beta", s.eca_beta);
  kv.get("generator.leaky_slope", s.leaky_slope);
  const auto fp = m.find("generator_fingerprint");
  if (fp == m.end() || fp->second != s.fingerprint())
    throw FingerprintMismatch("checkpoint generator spec does not match its recorded fingerprint");
  return s;
}

/// A trained generator as stored in a checkpoint.
struct GeneratorModel {
  GeneratorSpec spec;
  int image_side = 0;
  Generator<float> net;
};

inline GeneratorModel load_generator(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const GeneratorSpec spec = get_generator_spec(c.metadata);
  const auto side = c.metadata.find("image_side");
  if (side == c.metadata.end()) throw CorruptData("checkpoint lacks image_side: " + path.string());
  Rng scratch(0);
  const Generator<float> layout(spec, scratch);
  return {spec, std::stoi(side->second), Generator<float>(spec, get_params(c, "generator", layout.params()))};
}

/// Writes an untrained (identity) generator in checkpoint form.
inline void save_generator(const std::filesystem::path& path, const Generator<float>& g, int image_side,
                           const std::string& fingerprint = "untrained") {
  Container c;
  c.fingerprint = fingerprint;
  c.metadata["created"] = utc_timestamp();
  c.metadata["image_side"] = std::to_string(image_side);
  put_generator_spec(c.metadata, g.spec());
  put_params(c, "generator", g.params());
  write_container(path, c);
}

/// Forward pass over a list of images; order is preserved.
inline std::vector<ImageTensor> enhance(const GeneratorModel& model, const std::vector<ImageTensor>& images,
                                        int batch = 16) {
  std::vector<ImageTensor> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    if (img.channels() != model.spec.in_channels || img.height() != model.image_side || img.width() != model.image_side)
      throw ShapeMismatch("enhance: image is " + std::to_string(img.channels()) + "x" + std::to_string(img.height()) +
                          "x" + std::to_string(img.width()) + ", checkpoint expects " +
                          std::to_string(model.spec.in_channels) + "x" + std::to_string(model.image_side) + "x" +
                          std::to_string(model.image_side));
  }
  for (std::size_t i = 0; i < images.size(); i += batch) {
    const std::vector<ImageTensor> chunk(images.begin() + i, images.begin() + std::min(images.size(), i + batch));
    for (auto& y : to_images(model.net.forward(to_tensor<float>(chunk)))) out.push_back(std::move(y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
  std::filesystem::path out_dir;                  // checkpoints and loss.csv; empty keeps everything in memory
  std::optional<std::filesystem::path> resume;    // checkpoint to continue from
  std::optional<int> stop_after_epoch;            // simulate an interruption after this many epochs
  std::function<void(const LossRow&)> on_step;    // progress hook
};

struct TrainResult {
  std::vector<LossRow> log;  // rows produced by this invocation
  Generator<float> generator;
  Sequential<float> critic;
  int epochs_completed = 0;
  std::optional<std::filesystem::path> last_checkpoint;
};

inline ImageSource resizing_loader(int side) {
  return [side](const FundusRecord& r) { return center_crop_resize(load_image(r.path), side); };
}

namespace detail {

inline std::string checkpoint_name(int epoch) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_epoch%04d.ckpt", epoch);
  return buf;
}

}  // namespace detail

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Records& low, const Records& high, const ImageSource& source)
      : cfg_(validated(std::move(cfg))),
        sampler_(low, high),
        gen_(init_generator()),
        critic_(init_critic()),
        opt_g_(gen_.params()),
        opt_c_(critic_.params()),
        rng_(derive_seed(cfg_.seed, 3)),
        msp_(cfg_.ms_ssim_params()) {
    low_.reserve(low.size());
    high_.reserve(high.size());
    for (const auto& r : low) low_.push_back(prepare(source(r), r));
    for (const auto& r : high) high_.push_back(prepare(source(r), r));
    steps_per_epoch_ = cfg_.steps_per_epoch > 0
                           ? cfg_.steps_per_epoch
                           : static_cast<int>((low_.size() + cfg_.batch_size - 1) / cfg_.batch_size);
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  int epoch() const noexcept { return epoch_; }
  int steps_per_epoch() const noexcept { return steps_per_epoch_; }
  const Generator<float>& generator() const noexcept { return gen_; }
  const Sequential<float>& critic() const noexcept { return critic_; }

  /// One generator update preceded by critic_steps critic updates.
  LossRow step() {
    const auto [lr_g, lr_c] = lr_schedule(cfg_, epoch_);
    LossRow row;
    row.epoch = epoch_;
    row.step = global_step_;
    CriticLoss closs;
    std::int64_t kinks = 0;
    for (int k = 0; k < cfg_.objective.critic_steps; ++k) {
      auto [y, x] = draw_batch();
      const Tensor<float> gy = gen_.forward(y);
      auto grads = critic_.params().zeros_like();
      closs = critic_objective(critic_, x, gy, cfg_.objective, rng_, &grads);
      kinks += closs.kink_hits;
      opt_c_.step(critic_.params(), grads, lr_c);
    }
    auto [y, x] = draw_batch();
    typename Generator<float>::Trace trace;
    const Tensor<float> gy = gen_.forward(y, trace);
    Tensor<float> grad_gy;
    row.loss = generator_objective(y, gy, x, critic_, cfg_.objective, msp_, &grad_gy);
    row.loss.gp_term = closs.gp_term;
    row.loss.critic_total = closs.total;
    row.loss.kink_hits = kinks;
    auto ggrads = gen_.params().zeros_like();
    gen_.backward(trace, grad_gy, &ggrads);
    opt_g_.step(gen_.params(), ggrads, lr_g);
    ++global_step_;
    return row;
  }

  /// Runs one epoch; throws NonFiniteLoss (after dumping state to `dump_dir`)
  /// when a loss or parameter stops being finite.
  std::vector<LossRow> run_epoch(const std::filesystem::path& dump_dir = {},
                                 const std::function<void(const LossRow&)>& on_step = {}) {
    std::vector<LossRow> rows;
    for (int s = 0; s < steps_per_epoch_; ++s) {
      const LossRow r = step();
      const LossBreakdown& l = r.loss;
      const bool finite = std::isfinite(l.transport_cost) && std::isfinite(l.w1_estimate) && std::isfinite(l.gp_term) &&
                          std::isfinite(l.generator_total) && std::isfinite(l.critic_total) && gen_.params().all_finite() &&
                          critic_.params().all_finite();
      if (!finite) {
        std::string where;
        if (!dump_dir.empty()) {
          const auto p = dump_dir / "nonfinite_dump.ckpt";
          save_checkpoint(p);
          std::ofstream(dump_dir / "nonfinite_dump.txt") << kLossLogHeader << '\n' << format_loss_row(r) << '\n';
          where = "; state dumped to " + p.string();
        }
        throw NonFiniteLoss("non-finite loss or parameter at epoch " + std::to_string(r.epoch) + ", step " +
                            std::to_string(r.step) + " (" + format_loss_row(r) + ")" + where);
      }
      rows.push_back(r);
      if (on_step) on_step(r);
    }
    ++epoch_;
    return rows;
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    Container c;
    c.fingerprint = cfg_.fingerprint();
    c.metadata["created"] = utc_timestamp();
    c.metadata["epoch"] = std::to_string(epoch_);
    c.metadata["global_step"] = std::to_string(global_step_);
    c.metadata["rng_state"] = rng_.state();
    c.metadata["image_side"] = std::to_string(cfg_.image_side);
    c.metadata["profile"] = cfg_.profile;
    c.metadata["augmentation"] = "independent per side of each pair";
    c.metadata["critic_fingerprint"] = critic_.fingerprint();
    put_generator_spec(c.metadata, cfg_.generator);
    put_params(c, "generator", gen_.params());
    put_params(c, "critic", critic_.params());
    put_params(c, "rmsprop_generator", opt_g_.state());
    put_params(c, "rmsprop_critic", opt_c_.state());
    write_container(path, c);
  }

  void load_checkpoint(const std::filesystem::path& path) {
    const Container c = read_container(path);
    if (c.fingerprint != cfg_.fingerprint())
      throw FingerprintMismatch("checkpoint was written by a different configuration:\n  file:   " + c.fingerprint +
                                "\n  config: " + cfg_.fingerprint());
    auto meta = [&](const char* key) {
      const auto it = c.metadata.find(key);
      if (it == c.metadata.end()) throw CorruptData(std::string("checkpoint lacks ") + key);
      return it->second;
    };
    gen_.params() = get_params(c, "generator", gen_.params());
    critic_.load_params(get_params(c, "critic", critic_.params()));
    opt_g_.state() = get_params(c, "rmsprop_generator", opt_g_.state());
    opt_c_.state() = get_params(c, "rmsprop_critic", opt_c_.state());
    rng_.set_state(meta("rng_state"));
    epoch_ = std::stoi(meta("epoch"));
    global_step_ = std::stoi(meta("global_step"));
  }

 private:
  static TrainConfig validated(TrainConfig c) {
    c.validate();
    return c;
  }
  Generator<float> init_generator() const {
    Rng r(derive_seed(cfg_.seed, 1));
    return Generator<float>(cfg_.generator, r);
  }
  Sequential<float> init_critic() const {
    Rng r(cfg_.critic_seed ? cfg_.critic_seed : derive_seed(cfg_.seed, 2));
    return make_critic<float>(cfg_.critic, r);
  }

  ImageTensor prepare(ImageTensor img, const FundusRecord& r) const {
    if (img.channels() != cfg_.generator.in_channels)
      throw ShapeMismatch("training image " + r.id + " has " + std::to_string(img.channels()) + " channels, expected " +
                          std::to_string(cfg_.generator.in_channels));
    return center_crop_resize(img, cfg_.image_side);
  }

  /// (low-quality inputs, grade-matched high-quality targets), each side augmented independently.
  std::pair<Tensor<float>, Tensor<float>> draw_batch() {
    const PairIndices idx = sampler_.draw(cfg_.batch_size, rng_);
    std::vector<ImageTensor> in, tg;
    for (int k = 0; k < cfg_.batch_size; ++k) {
      in.push_back(augment(low_[idx.low[k]], cfg_.augment, rng_));
      tg.push_back(augment(high_[idx.high[k]], cfg_.augment, rng_));
    }
    return {to_tensor<float>(in), to_tensor<float>(tg)};
  }

  TrainConfig cfg_;
  PairSampler sampler_;
  Generator<float> gen_;
  Sequential<float> critic_;
  RmsProp<float> opt_g_, opt_c_;
  Rng rng_;
  MsSsimParams msp_;
  std::vector<ImageTensor> low_, high_;
  int steps_per_epoch_ = 1;
  int epoch_ = 0;
  int global_step_ = 0;
};

/// Full training run with checkpointing and a CSV loss log under opts.out_dir.
inline TrainResult train(const TrainConfig& cfg, const Records& low, const Records& high, const ImageSource& source,
                         const TrainOptions& opts = {}) {
  Trainer t(cfg, low, high, source);
  if (opts.resume) t.load_checkpoint(*opts.resume);
  const bool on_disk = !opts.out_dir.empty();
  std::ofstream log;
  if (on_disk) {
    std::filesystem::create_directories(opts.out_dir);
    const auto log_path = opts.out_dir / "loss.csv";
    std::vector<LossRow> kept;
    if (opts.resume && std::filesystem::exists(log_path))
      for (const auto& r : read_loss_log(log_path))
        if (r.epoch < t.epoch()) kept.push_back(r);
    log.open(log_path, std::ios::trunc);
    if (!log) throw WriteFailure("cannot write " + log_path.string());
    log << kLossLogHeader << '\n';
    for (const auto& r : kept) log << format_loss_row(r) << '\n';
    log.flush();
  }
  TrainResult res{{}, t.generator(), t.critic(), t.epoch(), std::nullopt};
  const int last = opts.stop_after_epoch ? std::min(cfg.epochs, *opts.stop_after_epoch) : cfg.epochs;
  while (t.epoch() < last) {
    const auto rows = t.run_epoch(on_disk ? opts.out_dir : std::filesystem::path{}, opts.on_step);
    for (const auto& r : rows) {
      if (on_disk) log << format_loss_row(r) << '\n';
      res.log.push_back(r);
    }
    if (on_disk) {
      log.flush();
      const bool periodic = cfg.checkpoint_every > 0 && t.epoch() % cfg.checkpoint_every == 0;
      if (periodic || t.epoch() == last) {
        const auto p = opts.out_dir / detail::checkpoint_name(t.epoch());
        t.save_checkpoint(p);
        std::filesystem::copy_file(p, opts.out_dir / "latest.ckpt", std::filesystem::copy_options::overwrite_existing);
        res.last_checkpoint = p;
      }
    }
  }
  res.generator = t.generator();
  res.critic = t.critic();
  res.epochs_completed = t.epoch();
  return res;
}

// ---------------------------------------------------------------------------
// One-dimensional toy problem: Gaussian source pushed toward a Gaussian target
// under the squared-distance cost.

struct ToyConfig {
  double source_mean = -2.0, source_sd = 0.5;
  double target_mean = 2.0, target_sd = 0.5;
  int samples = 2000;
  double lambda = 1.0;
  double gp_coefficient = 10.0;
  int critic_steps = 5;
  int epochs = 60;
  int batch_size = 200;
  double lr_generator = 2e-3;
  double lr_critic = 2e-3;
  std::vector<int> generator_hidden{32, 32};
  std::vector<int> critic_hidden{64, 64};
  double init_shift = 0.0;  // the generator starts as x + init_shift
  std::uint64_t seed = 0;
};

struct ToyEpoch {
  double generator_mean = 0.0;   // mean of G over the source sample
  double transport_cost = 0.0;   // mean |G(y) - y|^2 over the source sample
  double w1_estimate = 0.0;      // critic dual estimate, target vs G(source)
};

struct ToyResult {
  std::vector<double> source, target;  // fixed samples
  std::vector<ToyEpoch> history;       // one entry before training, then per epoch
  ResidualMlp<double> generator;
  Sequential<double> critic;

  std::vector<double> transported() const { return apply(source); }
  std::vector<double> apply(const std::vector<double>& xs) const {
    Tensor<double> t(static_cast<int>(xs.size()), 1, 1, 1);
    t.vec() = xs;
    return generator.forward(t).vec();
  }
};

inline ToyResult train_toy(const ToyConfig& cfg) {
  if (cfg.samples < 2 || cfg.batch_size < 1 || cfg.epochs < 0 || cfg.critic_steps < 1)
    throw InvalidArgument("train_toy: invalid configuration");
  Rng data(derive_seed(cfg.seed, 10));
  Rng rg(derive_seed(cfg.seed, 11)), rc(derive_seed(cfg.seed, 12)), rng(derive_seed(cfg.seed, 13));
  MlpSpec gs;
  gs.hidden = cfg.generator_hidden;
  MlpSpec cs;
  cs.hidden = cfg.critic_hidden;
  cs.zero_last = true;  // start as the zero function: a wrong-signed slope is a local optimum under the penalty
  ToyResult res{{}, {}, {}, ResidualMlp<double>(gs, rg), make_mlp<double>(cs, rc)};
  {
    auto& ps = res.generator.params();
    for (auto& b : ps[ps.size() - 1].data) b += cfg.init_shift;  // output bias
  }
  for (int i = 0; i < cfg.samples; ++i) res.source.push_back(data.normal(cfg.source_mean, cfg.source_sd));
  for (int i = 0; i < cfg.samples; ++i) res.target.push_back(data.normal(cfg.target_mean, cfg.target_sd));

  ObjectiveConfig oc;
  oc.lambda = cfg.lambda;
  oc.gp_coefficient = cfg.gp_coefficient;
  oc.critic_steps = cfg.critic_steps;
  oc.cost_kind = CostKind::SquaredDistance;
  const MsSsimParams unused;
  RmsProp<double> opt_g(res.generator.params()), opt_c(res.critic.params());

  auto points = [](const std::vector<double>& v) {
    Tensor<double> t(static_cast<int>(v.size()), 1, 1, 1);
    t.vec() = v;
    return t;
  };
  const Tensor<double> all_src = points(res.source), all_tgt = points(res.target);
  auto record = [&] {
    const Tensor<double> g = res.generator.forward(all_src);
    ToyEpoch e;
    for (double v : g.vec()) e.generator_mean += v;
    e.generator_mean /= g.size();
    e.transport_cost = transport_cost(all_src, g, oc, unused);
    e.w1_estimate = w1_dual_estimate(res.critic, all_tgt, g);
    res.history.push_back(e);
  };
  auto batch = [&](const std::vector<double>& pool) {
    Tensor<double> t(cfg.batch_size, 1, 1, 1);
    for (int i = 0; i < cfg.batch_size; ++i) t[i] = pool[rng.index(pool.size())];
    return t;
  };

  record();
  const int steps = std::max(1, cfg.samples / cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int s = 0; s < steps; ++s) {
      for (int k = 0; k < cfg.critic_steps; ++k) {
        const Tensor<double> y = batch(res.source), x = batch(res.target);
        const Tensor<double> gy = res.generator.forward(y);
        auto g = res.critic.params().zeros_like();
        critic_objective(res.critic, x, gy, oc, rng, &g);
        opt_c.step(res.critic.params(), g, cfg.lr_critic);
      }
      const Tensor<double> y = batch(res.source), x = batch(res.target);
      typename ResidualMlp<double>::Trace tr;
      const Tensor<double> gy = res.generator.forward(y, tr);
      Tensor<double> grad;
      const auto lb = generator_objective(y, gy, x, res.critic, oc, unused, &grad);
      if (!std::isfinite(lb.generator_total)) throw NonFiniteLoss("train_toy: non-finite generator objective");
      auto gg = res.generator.params().zeros_like();
      res.generator.backward(tr, grad, &gg);
      opt_g.step(res.generator.params(), gg, cfg.lr_generator);
    }
    record();
  }
  return res;
}

}  // namespace ote
