#ifndef SAP_MODEL_HPP_
#define SAP_MODEL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "sap/sapnet.hpp"

namespace sap {

/// Toy backbone + segmentation head configuration. The backbone stands in
/// for a detection/segmentation trunk: three 3×3 conv+relu stages, stride
/// 2,1,1, so a 3×64×64 image yields a 64×32×32 feature map.
struct ModelConfig {
  std::vector<std::size_t> backbone_widths = {3, 32, 64, 64};
  std::vector<int> backbone_strides = {2, 1, 1};
  std::size_t classes = 4;  // C_sem: background + circle/square/triangle
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  PyramidConfig pyramid = PyramidConfig::desk_default();

  std::size_t feature_channels() const { return backbone_widths.back(); }

  void validate() const {
    if (backbone_widths.size() != backbone_strides.size() + 1)
      throw ConfigError("model: backbone widths/strides mismatch");
    if (classes < 2) throw ConfigError("model: need at least 2 classes");
    pyramid.validate();
  }
};

/// Backbone G and segmentation head R. The head's logits serve the task
/// loss and, softmaxed per pixel, the guided map.
template <typename S>
class TaskNet {
 public:
  TaskNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    for (std::size_t i = 0; i + 1 < cfg_.backbone_widths.size(); ++i) {
      bb_w_.push_back(conv_param("backbone" + std::to_string(i) + ".w",
                                 {cfg_.backbone_widths[i + 1], cfg_.backbone_widths[i], 3, 3}, rng));
      bb_b_.emplace_back("backbone" + std::to_string(i) + ".b",
                         Tensor<S>({cfg_.backbone_widths[i + 1]}));
    }
    const std::size_t F = cfg_.feature_channels();
    seg_w1_ = conv_param("seg0.w", {F, F, 3, 3}, rng);
    seg_b1_ = ad::Param<S>("seg0.b", Tensor<S>({F}));
    seg_w2_ = conv_param("seg1.w", {cfg_.classes, F, 1, 1}, rng);
    seg_b2_ = ad::Param<S>("seg1.b", Tensor<S>({cfg_.classes}));
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<ad::Param<S>*> params() {
    std::vector<ad::Param<S>*> out;
    for (std::size_t i = 0; i < bb_w_.size(); ++i) {
      out.push_back(&bb_w_[i]);
      out.push_back(&bb_b_[i]);
    }
    out.push_back(&seg_w1_);
    out.push_back(&seg_b1_);
    out.push_back(&seg_w2_);
    out.push_back(&seg_b2_);
    return out;
  }

  ad::Var<S> backbone(ad::Tape<S>& tape, ad::Var<S> image) {
    using namespace ad;
    if (image.val().extent(0) != cfg_.backbone_widths[0] ||
        image.val().extent(1) != cfg_.input_h || image.val().extent(2) != cfg_.input_w)
      throw ShapeError("backbone: image " + shape_str(image.val().shape()) +
                       " does not match configured input");
    Var<S> h = image;
    for (std::size_t i = 0; i < bb_w_.size(); ++i)
      h = relu(conv2d(h, tape.use(bb_w_[i]), tape.use(bb_b_[i]), cfg_.backbone_strides[i], 1));
    return h;
  }

  ad::Var<S> seg_logits(ad::Tape<S>& tape, ad::Var<S> f_hat) {
    using namespace ad;
    Var<S> h = relu(conv2d(f_hat, tape.use(seg_w1_), tape.use(seg_b1_), 1, 1));
    return conv2d(h, tape.use(seg_w2_), tape.use(seg_b2_), 1, 0);
  }

 private:
  static ad::Param<S> conv_param(const std::string& name, Shape shape, Rng& rng) {
    const std::size_t fan_in = shape[1] * shape[2] * shape[3];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor<S> w(shape);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.normal() * stddev);
    // Contrast-detector init: give each spatial filter slice zero mean over
    // its taps, so at start every response is invariant to a constant input
    // offset. Training is free to move away from this manifold, but the
    // adversarial runs mostly need to stay on it, which makes adaptation far
    // less dependent on the initial draw.
    const std::size_t taps = shape[2] * shape[3];
    if (taps > 1)
      for (std::size_t s = 0; s < shape[0] * shape[1]; ++s) {
        double mean = 0;
        for (std::size_t k = 0; k < taps; ++k) mean += w[s * taps + k];
        mean /= static_cast<double>(taps);
        for (std::size_t k = 0; k < taps; ++k)
          w[s * taps + k] = static_cast<S>(w[s * taps + k] - mean);
      }
    return ad::Param<S>(name, std::move(w));
  }

  ModelConfig cfg_;
  std::vector<ad::Param<S>> bb_w_, bb_b_;
  ad::Param<S> seg_w1_, seg_b1_, seg_w2_, seg_b2_;
};

/// Mean per-pixel cross entropy on one source-domain sample; logits are
/// upsampled to the label resolution first.
template <typename S>
ad::Var<S> task_loss(ad::Var<S> logits, const Tensor<std::uint8_t>& labels) {
  if (labels.empty())
    throw ConfigError("task_loss: target-domain sample has no labels (source only)");
  ad::Var<S> up = ad::resize_bilinear(logits, labels.extent(0), labels.extent(1));
  return ad::softmax_ce_pixels(up, labels);
}

/// Mean binary cross entropy of discriminator probabilities against domain
/// labels over a mixed batch.
template <typename S>
ad::Var<S> adv_loss(const std::vector<ad::Var<S>>& probs, const std::vector<int>& domains) {
  if (probs.empty() || probs.size() != domains.size())
    throw ConfigError("adv_loss: probability/domain count mismatch");
  ad::Var<S> acc = ad::bce_prob(probs[0], static_cast<double>(domains[0]));
  for (std::size_t i = 1; i < probs.size(); ++i)
    acc = ad::add(acc, ad::bce_prob(probs[i], static_cast<double>(domains[i])));
  return ad::scale(acc, S(1) / static_cast<S>(probs.size()));
}

/// Same loss computed from the pre-sigmoid domain scores. Training uses this
/// form: it stays differentiable when the sigmoid saturates in f32.
template <typename S>
ad::Var<S> adv_loss_logits(const std::vector<ad::Var<S>>& logits, const std::vector<int>& domains) {
  if (logits.empty() || logits.size() != domains.size())
    throw ConfigError("adv_loss: logit/domain count mismatch");
  ad::Var<S> acc = ad::bce_logit(logits[0], static_cast<double>(domains[0]));
  for (std::size_t i = 1; i < logits.size(); ++i)
    acc = ad::add(acc, ad::bce_logit(logits[i], static_cast<double>(domains[i])));
  return ad::scale(acc, S(1) / static_cast<S>(logits.size()));
}

/// One training sample as the model consumes it.
template <typename S>
struct Sample {
  Tensor<S> image;               // 3×H×W in [0,1]
  Tensor<std::uint8_t> labels;   // H×W class ids; empty for target domain
  int domain = 0;                // 0 source, 1 target
};

/// The complete adaptation model: backbone+head (G, R) and the attention
/// pyramid discriminator (D).
template <typename S>
class SapModel {
 public:
  SapModel(const ModelConfig& cfg, std::uint64_t seed) : init_rng_(Rng::derive(seed, 0x1A17)) {
    task_ = std::make_unique<TaskNet<S>>(cfg, init_rng_);
    sap_ = std::make_unique<SapNet<S>>(cfg.pyramid, cfg.feature_channels(), cfg.classes,
                                       init_rng_);
  }

  TaskNet<S>& task() { return *task_; }
  SapNet<S>& sap() { return *sap_; }
  const ModelConfig& config() const { return task_->config(); }

  std::vector<ad::Param<S>*> params() {
    auto out = task_->params();
    auto sp = sap_->params();
    out.insert(out.end(), sp.begin(), sp.end());
    return out;
  }

  struct StepResult {
    double task_loss = 0.0;
    double adv_loss = 0.0;
    double disc_correct = 0.0;  // fraction of domain calls right
    std::vector<AttentionState<S>> states;
  };

  /// Forward + loss assembly over one batch. `lambda` engages the
  /// adversarial path (std::nullopt trains source-only). Returns the scalar
  /// total-loss node; metrics land in `result`.
  ad::Var<S> forward_losses(ad::Tape<S>& tape, const std::vector<Sample<S>>& batch, bool train,
                            std::optional<S> lambda, StepResult& result) {
    using namespace ad;
    std::vector<Var<S>> f_hats, guided;
    std::vector<int> domains;
    std::optional<Var<S>> task_total;
    std::size_t n_source = 0;

    for (const auto& s : batch) {
      Var<S> f_hat = task_->backbone(tape, tape.leaf(s.image));
      Var<S> logits = task_->seg_logits(tape, f_hat);
      if (s.domain == 0) {
        Var<S> tl = task_loss(logits, s.labels);
        task_total = task_total ? add(*task_total, tl) : tl;
        ++n_source;
      }
      if (lambda) {
        f_hats.push_back(f_hat);
        Var<S> gm = softmax_channels(logits);
        if (sap_->config().detach_guided_map) gm = detach(gm);
        guided.push_back(gm);
        domains.push_back(s.domain);
      }
    }
    if (!task_total) throw ConfigError("forward_losses: batch has no source sample");
    Var<S> task_mean = scale(*task_total, S(1) / static_cast<S>(n_source));
    result.task_loss = task_mean.val()[0];

    if (!lambda) {
      result.adv_loss = 0.0;
      return task_mean;
    }

    auto sap_out = sap_->forward(tape, f_hats, guided, train, lambda);
    Var<S> adv = adv_loss_logits(sap_out.logits, domains);
    result.adv_loss = adv.val()[0];
    double correct = 0;
    for (std::size_t i = 0; i < domains.size(); ++i)
      correct += (sap_out.probs[i].val()[0] >= S(0.5)) == (domains[i] == 1) ? 1.0 : 0.0;
    result.disc_correct = correct / domains.size();
    result.states = std::move(sap_out.states);
    return add(task_mean, adv);
  }

 private:
  Rng init_rng_;
  std::unique_ptr<TaskNet<S>> task_;
  std::unique_ptr<SapNet<S>> sap_;
};

}  // namespace sap

#endif  // SAP_MODEL_HPP_
