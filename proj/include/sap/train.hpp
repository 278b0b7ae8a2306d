#ifndef SAP_TRAIN_HPP_
#define SAP_TRAIN_HPP_

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "sap/data.hpp"
#include "sap/model.hpp"

namespace sap {

struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Two-stage schedule: `pretrain_iters` source-only steps, then adversarial
/// steps until `total_iters`. The default milestones align the first lr drop
/// with the adversarial handoff: the pretrain phase runs hot (1e-3) to fit
/// the task quickly, and the min-max phase runs at 1e-4, where the
/// adversarial game stays stable at this scale. Larger setups (lr 1e-5,
/// milestones 70k/80k, 90k iterations) remain valid settings.
struct TrainConfig {
  double lambda = 1.0;
  double lr0 = 1e-3;
  std::vector<std::size_t> milestones = {3000, 7000};
  std::size_t total_iters = 9000;
  std::size_t pretrain_iters = 3000;
  std::size_t n_source = 1;  // labeled source samples per step
  std::size_t n_target = 1;  // unlabeled target samples per adversarial step
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t log_every = 100;
  // When off, stage 2 keeps training on source only (the "source only"
  // baseline run). A run with lambda = 0 matches its task metrics exactly.
  bool adversarial = true;
  // Sigmoid warm-up of the reversal coefficient over the adversarial phase:
  // the discriminator always trains at full strength (its own gradients are
  // not scaled by lambda), but the backbone's reversed gradient fades in as
  // 2/(1+exp(-10p))-1 for phase progress p. Without it the backbone gets
  // Adam-amplified noise from a still-random discriminator and the task
  // collapses. lambda = 0 still zeroes the reversed gradient exactly.
  bool grl_warmup = true;

  void validate() const {
    if (n_source < 1) throw ConfigError("train: need at least one source sample per step");
    if (adversarial && total_iters > pretrain_iters && n_target < 1)
      throw ConfigError("train: adversarial steps need at least one target sample");
    if (pretrain_iters > total_iters) throw ConfigError("train: pretrain exceeds total iterations");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (i && milestones[i] <= milestones[i - 1])
        throw ConfigError("train: milestones must be strictly increasing");
      if (milestones[i] >= total_iters)
        throw ConfigError("train: milestone " + std::to_string(milestones[i]) +
                          " not below total iterations");
    }
    if (lr0 <= 0) throw ConfigError("train: lr0 must be positive");
  }

  /// Divided by 10 at each passed milestone, exactly.
  double lr_at(std::size_t iter) const {
    double lr = lr0;
    for (std::size_t m : milestones)
      if (iter >= m) lr /= 10.0;
    return lr;
  }
};

/// Adam with bias correction. Moments are stored parallel to the parameter
/// list; order is the model's params() order.
template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m, v;
  std::uint64_t t = 0;

  void init(const std::vector<ad::Param<S>*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
    t = 0;
  }
};

template <typename S>
void adam_step(const std::vector<ad::Param<S>*>& params, AdamState<S>& st, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (st.m.size() != params.size())
    throw TrainError("adam_step: optimizer state does not match parameter list");
  ++st.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Param<S>& p = *params[k];
    Tensor<S>& m = st.m[k];
    Tensor<S>& v = st.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      if (std::isnan(g)) throw TrainError("adam_step: NaN gradient in " + p.name);
      const double mi = beta1 * m[i] + (1.0 - beta1) * g;
      const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      p.value[i] -= static_cast<S>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
    }
  }
}

// ---- checkpoint file ("SAPC") ----

template <typename S>
struct CheckpointData {
  std::uint32_t version = 1;
  std::uint64_t iteration = 0;
  std::uint64_t rng_state = 0;
  std::uint64_t adam_t = 0;
  std::string config_text;  // config echo, verbatim key=value lines
  std::vector<std::pair<std::string, Tensor<S>>> tensors;
};

template <typename S>
void save_checkpoint(std::ostream& os, const CheckpointData<S>& ck) {
  os.write("SAPC", 4);
  detail::write_pod<std::uint32_t>(os, ck.version);
  detail::write_pod<std::uint64_t>(os, ck.iteration);
  detail::write_pod<std::uint64_t>(os, ck.rng_state);
  detail::write_pod<std::uint64_t>(os, ck.adam_t);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ck.config_text.size()));
  os.write(ck.config_text.data(), static_cast<std::streamsize>(ck.config_text.size()));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, tensor] : ck.tensors) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    save_tensor(os, tensor);
  }
  if (!os) throw IoError("checkpoint write failed");
}

template <typename S>
CheckpointData<S> load_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SAPC", 4) != 0)
    throw IoError("bad checkpoint magic (expected SAPC)");
  CheckpointData<S> ck;
  ck.version = detail::read_pod<std::uint32_t>(is, "version");
  if (ck.version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(ck.version));
  ck.iteration = detail::read_pod<std::uint64_t>(is, "iteration");
  ck.rng_state = detail::read_pod<std::uint64_t>(is, "rng state");
  ck.adam_t = detail::read_pod<std::uint64_t>(is, "adam step");
  const auto clen = detail::read_pod<std::uint32_t>(is, "config length");
  ck.config_text.resize(clen);
  is.read(ck.config_text.data(), clen);
  if (!is) throw IoError("truncated checkpoint config echo");
  const auto count = detail::read_pod<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = detail::read_pod<std::uint32_t>(is, "name length");
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw IoError("truncated checkpoint tensor name");
    ck.tensors.emplace_back(std::move(name), load_tensor<S>(is));
  }
  return ck;
}

/// Reads only the header and config echo of a checkpoint stream, leaving the
/// caller to pick the tensor precision before loading the rest.
inline std::string read_checkpoint_config(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SAPC", 4) != 0)
    throw IoError("bad checkpoint magic (expected SAPC)");
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
  detail::read_pod<std::uint64_t>(is, "iteration");
  detail::read_pod<std::uint64_t>(is, "rng state");
  detail::read_pod<std::uint64_t>(is, "adam step");
  const auto clen = detail::read_pod<std::uint32_t>(is, "config length");
  std::string text(clen, '\0');
  is.read(text.data(), clen);
  if (!is) throw IoError("truncated checkpoint config echo");
  return text;
}

/// Restores parameters and batch-norm statistics (ignores optimizer moments).
template <typename S>
void load_model_state(SapModel<S>& model, const CheckpointData<S>& ck) {
  std::map<std::string, const Tensor<S>*> records;
  for (const auto& [name, tensor] : ck.tensors) records[name] = &tensor;
  auto assign = [&](Tensor<S>& dst, const std::string& name) {
    auto it = records.find(name);
    if (it == records.end()) throw IoError("checkpoint is missing tensor " + name);
    if (!dst.same_shape(*it->second))
      throw IoError("checkpoint tensor " + name + " has shape " + shape_str(it->second->shape()) +
                    ", expected " + shape_str(dst.shape()));
    dst = *it->second;
  };
  for (auto* p : model.params()) assign(p->value, p->name);
  assign(model.sap().bn_state().running_mean, "sap.bn.running_mean");
  assign(model.sap().bn_state().running_var, "sap.bn.running_var");
}

// ---- training loop ----

template <typename S>
struct StepMetrics {
  std::size_t iter = 0;
  double task_loss = 0;
  double adv_loss = 0;
  double disc_acc = 0;
  double lr = 0;
};

template <typename S>
class Trainer {
 public:
  Trainer(SapModel<S>& model, const Dataset& data, TrainConfig cfg)
      : model_(model), data_(data), cfg_(std::move(cfg)), rng_(Rng::derive(cfg_.seed, 0x7ea1)) {
    cfg_.validate();
    if (data_.source_idx.empty()) throw ConfigError("train: dataset has no source samples");
    if (cfg_.adversarial && cfg_.total_iters > cfg_.pretrain_iters && data_.target_idx.empty())
      throw ConfigError("train: dataset has no target samples");
    adam_.init(model_.params());
  }

  std::size_t iteration() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  AdamState<S>& adam() { return adam_; }

  StepMetrics<S> step() {
    const bool adversarial = cfg_.adversarial && iter_ >= cfg_.pretrain_iters;
    std::vector<Sample<S>> batch;
    // Independent per-(iteration, slot) streams: the source draws do not
    // depend on whether target draws happen, so a source-only run and a
    // lambda=0 run see identical source batches.
    for (std::size_t s = 0; s < cfg_.n_source; ++s)
      batch.push_back(to_sample<S>(
          data_.samples[data_.source_idx[Rng::derive(cfg_.seed, iter_ * 64 + s).below(
              data_.source_idx.size())]]));
    if (adversarial)
      for (std::size_t s = 0; s < cfg_.n_target; ++s)
        batch.push_back(to_sample<S>(
            data_.samples[data_.target_idx[Rng::derive(cfg_.seed, iter_ * 64 + 32 + s).below(
                data_.target_idx.size())]]));

    auto params = model_.params();
    for (auto* p : params) p->zero_grad();

    ad::Tape<S> tape;
    typename SapModel<S>::StepResult res;
    const std::optional<S> lambda =
        adversarial ? std::optional<S>(static_cast<S>(cfg_.lambda * grl_coeff())) : std::nullopt;
    ad::Var<S> loss = model_.forward_losses(tape, batch, /*train=*/true, lambda, res);
    tape.backward(loss);

    const double lr = cfg_.lr_at(iter_);
    adam_step(params, adam_, lr, cfg_.beta1, cfg_.beta2, cfg_.eps);

    StepMetrics<S> m;
    m.iter = iter_;
    m.task_loss = res.task_loss;
    m.adv_loss = res.adv_loss;
    m.disc_acc = res.disc_correct;
    m.lr = lr;
    ++iter_;
    return m;
  }

  /// Runs to total_iters, writing a CSV row every log_every steps (and for
  /// the final step).
  void run(std::ostream* csv) {
    if (csv && iter_ == 0)
      *csv << "iter,task_loss,adv_loss,disc_acc,lr\n";
    while (iter_ < cfg_.total_iters) {
      StepMetrics<S> m = step();
      if (csv && (m.iter % cfg_.log_every == 0 || m.iter + 1 == cfg_.total_iters))
        *csv << m.iter << "," << m.task_loss << "," << m.adv_loss << "," << m.disc_acc << ","
             << m.lr << "\n";
    }
    if (csv) csv->flush();
  }

  /// Warm-up factor in [0,1) for the current iteration's reversal strength.
  double grl_coeff() const {
    if (!cfg_.grl_warmup) return 1.0;
    const std::size_t span = cfg_.total_iters - cfg_.pretrain_iters;
    if (span == 0) return 1.0;
    const double p =
        static_cast<double>(iter_ - cfg_.pretrain_iters) / static_cast<double>(span);
    return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
  }

  CheckpointData<S> checkpoint(const std::string& config_echo) const {
    CheckpointData<S> ck;
    ck.iteration = iter_;
    ck.rng_state = rng_.state();
    ck.adam_t = adam_.t;
    ck.config_text = config_echo;
    auto params = model_.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      ck.tensors.emplace_back(params[k]->name, params[k]->value);
      ck.tensors.emplace_back("adam.m." + params[k]->name, adam_.m[k]);
      ck.tensors.emplace_back("adam.v." + params[k]->name, adam_.v[k]);
    }
    auto& bn = model_.sap().bn_state();
    ck.tensors.emplace_back("sap.bn.running_mean", bn.running_mean);
    ck.tensors.emplace_back("sap.bn.running_var", bn.running_var);
    return ck;
  }

  void restore(const CheckpointData<S>& ck) {
    auto params = model_.params();
    std::map<std::string, const Tensor<S>*> records;
    for (const auto& [name, tensor] : ck.tensors) records[name] = &tensor;
    auto take = [&](const std::string& name) -> const Tensor<S>& {
      auto it = records.find(name);
      if (it == records.end()) throw IoError("checkpoint is missing tensor " + name);
      return *it->second;
    };
    auto assign = [&](Tensor<S>& dst, const std::string& name) {
      const Tensor<S>& src = take(name);
      if (!dst.same_shape(src))
        throw IoError("checkpoint tensor " + name + " has shape " + shape_str(src.shape()) +
                      ", expected " + shape_str(dst.shape()));
      dst = src;
    };
    adam_.init(params);
    for (std::size_t k = 0; k < params.size(); ++k) {
      assign(params[k]->value, params[k]->name);
      assign(adam_.m[k], "adam.m." + params[k]->name);
      assign(adam_.v[k], "adam.v." + params[k]->name);
    }
    auto& bn = model_.sap().bn_state();
    assign(bn.running_mean, "sap.bn.running_mean");
    assign(bn.running_var, "sap.bn.running_var");
    adam_.t = ck.adam_t;
    iter_ = ck.iteration;
    rng_.set_state(ck.rng_state);
  }

 private:
  SapModel<S>& model_;
  const Dataset& data_;
  TrainConfig cfg_;
  AdamState<S> adam_;
  Rng rng_;
  std::size_t iter_ = 0;
};

// ---- evaluation ----

struct EvalReport {
  std::vector<double> iou;  // per class; -1 when the class is absent entirely
  double miou = 0;
  double pixel_acc = 0;
  double disc_acc = 0;
  std::size_t count = 0;
};

/// Per-class TP/FP/FN counts over class-id maps.
struct ConfusionCounts {
  std::vector<std::size_t> tp, fp, fn;
  std::size_t correct = 0, total = 0;

  explicit ConfusionCounts(std::size_t classes) : tp(classes), fp(classes), fn(classes) {}

  void add(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& labels) {
    if (!pred.same_shape(labels))
      throw ShapeError("confusion: prediction/label shape mismatch");
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const std::size_t yhat = pred[p], y = labels[p];
      if (yhat >= tp.size() || y >= tp.size())
        throw ShapeError("confusion: class id out of range");
      if (yhat == y) {
        ++tp[y];
        ++correct;
      } else {
        ++fp[yhat];
        ++fn[y];
      }
      ++total;
    }
  }
};

/// IoU_c = TP/(TP+FP+FN); mIoU averages the classes that occur at all.
inline EvalReport iou_summary(const ConfusionCounts& cc) {
  EvalReport r;
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < cc.tp.size(); ++c) {
    const std::size_t denom = cc.tp[c] + cc.fp[c] + cc.fn[c];
    if (denom == 0) {
      r.iou.push_back(-1.0);
      continue;
    }
    const double iou = static_cast<double>(cc.tp[c]) / static_cast<double>(denom);
    r.iou.push_back(iou);
    sum += iou;
    ++present;
  }
  r.miou = present ? sum / static_cast<double>(present) : 0.0;
  r.pixel_acc = cc.total ? static_cast<double>(cc.correct) / static_cast<double>(cc.total) : 0.0;
  return r;
}

/// Segmentation metrics plus discriminator accuracy over one domain's
/// samples, eval mode throughout (running batch-norm statistics).
template <typename S>
EvalReport evaluate(SapModel<S>& model, const Dataset& data, int domain) {
  const auto& idx = domain == 0 ? data.source_idx : data.target_idx;
  if (idx.empty()) throw ConfigError("evaluate: no samples for requested domain");
  const std::size_t C = model.config().classes;
  ConfusionCounts cc(C);
  std::size_t disc_right = 0;

  for (std::size_t i : idx) {
    Sample<S> s = to_sample<S>(data.samples[i], /*keep_labels=*/true);
    ad::Tape<S> tape;
    ad::Var<S> f_hat = model.task().backbone(tape, tape.leaf(s.image));
    ad::Var<S> logits = model.task().seg_logits(tape, f_hat);
    ad::Var<S> up = ad::resize_bilinear(logits, s.labels.extent(0), s.labels.extent(1));
    const Tensor<S>& lv = up.val();
    const std::size_t P = s.labels.size();
    Tensor<std::uint8_t> pred(s.labels.shape());
    for (std::size_t p = 0; p < P; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (lv[c * P + p] > lv[best * P + p]) best = c;
      pred[p] = static_cast<std::uint8_t>(best);
    }
    cc.add(pred, s.labels);

    // discriminator verdict on this sample
    ad::Var<S> gm = ad::softmax_channels(logits);
    auto out = model.sap().forward(tape, {f_hat}, {gm}, /*train=*/false, std::nullopt);
    const bool says_target = out.states[0].prob >= 0.5;
    if (says_target == (domain == 1)) ++disc_right;
  }

  EvalReport r = iou_summary(cc);
  r.count = idx.size();
  r.disc_acc = static_cast<double>(disc_right) / static_cast<double>(idx.size());
  return r;
}

}  // namespace sap

#endif  // SAP_TRAIN_HPP_
