#ifndef SAP_SAPNET_HPP_
#define SAP_SAPNET_HPP_

#include <optional>
#include <string>
#include <vector>

#include "sap/autodiff.hpp"
#include "sap/rng.hpp"

namespace sap {

enum class Pooling { kAvg, kMax };

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Pyramid layout and ablation switches. Defaults follow the published
/// detection configuration (N=13, C=256); desk_default() is the scaled-down
/// setup the toy experiment trains with.
struct PyramidConfig {
  std::vector<int> pool_sizes = {3, 6, 9, 12, 15, 18, 21, 24, 27, 30, 33, 35, 37};
  std::size_t channels = 256;  // C
  std::size_t compact_dim = 0;  // d; 0 means C/2
  Pooling pooling = Pooling::kAvg;
  bool use_guided_map = true;
  bool use_spatial_attention = true;
  bool use_channel_attention = true;
  bool detach_guided_map = true;

  std::size_t levels() const { return pool_sizes.size(); }
  std::size_t d() const { return compact_dim ? compact_dim : channels / 2; }

  void validate() const {
    if (pool_sizes.empty()) throw ConfigError("pyramid: empty pooling size set");
    for (std::size_t i = 0; i < pool_sizes.size(); ++i) {
      if (pool_sizes[i] < 1) throw ConfigError("pyramid: pooling size must be >= 1");
      if (i && pool_sizes[i] <= pool_sizes[i - 1])
        throw ConfigError("pyramid: pooling sizes must be strictly increasing");
    }
    if (channels < 1 || d() < 1) throw ConfigError("pyramid: channels and compact dim must be >= 1");
  }

  /// The published level sets: N=13 (detection), N=9 (segmentation) and the
  /// N=3 / N=7 ablation sets.
  static std::vector<int> level_set(int n) {
    switch (n) {
      case 3: return {3, 21, 37};
      case 7: return {3, 9, 15, 21, 27, 33, 37};
      case 9: return {3, 9, 15, 21, 27, 33, 39, 45, 51};
      case 13: return {3, 6, 9, 12, 15, 18, 21, 24, 27, 30, 33, 35, 37};
      default: throw ConfigError("pyramid: no published level set for N=" + std::to_string(n));
    }
  }

  /// Applies the width-limit rule to an ordered size set: walking from the
  /// largest size, each entry is capped at limit-1, then limit-3, ... so the
  /// set stays strictly increasing. (For a 38-wide map this turns {38, 41}
  /// into {35, 37}.)
  static std::vector<int> clamp_pool_sizes(std::vector<int> k, std::size_t limit) {
    int cap = static_cast<int>(limit) - 1;
    for (std::size_t i = k.size(); i-- > 0;) {
      if (k[i] > cap) k[i] = cap;
      cap = k[i] - 2;
    }
    if (k.front() < 1)
      throw ConfigError("pyramid: feature map too small for " + std::to_string(k.size()) +
                        " levels (limit " + std::to_string(limit) + ")");
    return k;
  }

  static PyramidConfig desk_default() {
    PyramidConfig cfg;
    cfg.pool_sizes = {3, 9, 15, 21, 27};
    cfg.channels = 64;
    return cfg;
  }
};

/// Everything the attention pass produces for one sample, exported for
/// inspection and visualization.
template <typename S>
struct AttentionState {
  std::vector<Tensor<S>> masks;    // ω^n, H_n×W_n each
  std::vector<Tensor<S>> vectors;  // V^n, length C each
  Tensor<S> phi;                   // [N,C] channel weights φ^n(c)
  Tensor<S> fused;                 // V, length C
  Tensor<S> compact;               // z, length d (empty when channel attention is off)
  double prob = 0.0;               // discriminator output x_i
};

/// The spatial attention pyramid discriminator: channel reduction, guided
/// feature, per-level masks, attention vectors, scale selection, fused
/// vector, domain head.
template <typename S>
class SapNet {
 public:
  SapNet(PyramidConfig cfg, std::size_t in_channels, std::size_t sem_channels, Rng& rng)
      : cfg_(std::move(cfg)), in_channels_(in_channels), sem_channels_(sem_channels),
        bn_state_(cfg_.d()) {
    cfg_.validate();
    if (in_channels_ < cfg_.channels)
      throw ConfigError("sap: backbone channels " + std::to_string(in_channels_) +
                        " below pyramid channels " + std::to_string(cfg_.channels) +
                        " (channel reduction cannot expand)");
    const std::size_t C = cfg_.channels;
    // channel reduction Ĉ -> max(C, Ĉ/2) -> max(C, Ĉ/4) -> C, 1×1 convs
    const std::size_t widths[4] = {in_channels_, std::max(C, in_channels_ / 2),
                                   std::max(C, in_channels_ / 4), C};
    for (int i = 0; i < 3; ++i) {
      red_w_[i] = conv_param("sap.reduce" + std::to_string(i) + ".w",
                             {widths[i + 1], widths[i], 1, 1}, rng);
      red_b_[i] = ad::Param<S>("sap.reduce" + std::to_string(i) + ".b", Tensor<S>({widths[i + 1]}));
    }
    // guided feature: concat(P̂, f̂) -> C/4 -> C/4 -> C, 3×3 pad 1
    const std::size_t gin = in_channels_ + (cfg_.use_guided_map ? sem_channels_ : 0);
    const std::size_t gw[4] = {gin, std::max<std::size_t>(C / 4, 1),
                               std::max<std::size_t>(C / 4, 1), C};
    for (int i = 0; i < 3; ++i) {
      gf_w_[i] = conv_param("sap.guided" + std::to_string(i) + ".w", {gw[i + 1], gw[i], 3, 3}, rng);
      gf_b_[i] = ad::Param<S>("sap.guided" + std::to_string(i) + ".b", Tensor<S>({gw[i + 1]}));
    }
    // mask head C -> C/2 -> C/4 -> 1, 3×3 pad 1, shared across levels
    const std::size_t mw[4] = {C, std::max<std::size_t>(C / 2, 1), std::max<std::size_t>(C / 4, 1), 1};
    for (int i = 0; i < 3; ++i) {
      mk_w_[i] = conv_param("sap.mask" + std::to_string(i) + ".w", {mw[i + 1], mw[i], 3, 3}, rng);
      mk_b_[i] = ad::Param<S>("sap.mask" + std::to_string(i) + ".b", Tensor<S>({mw[i + 1]}));
    }
    const std::size_t d = cfg_.d();
    wz_ = dense_param("sap.compact.w", {d, C}, rng);
    bn_gamma_ = ad::Param<S>("sap.bn.gamma", Tensor<S>({d}, S(1)));
    bn_beta_ = ad::Param<S>("sap.bn.beta", Tensor<S>({d}));
    scale_w_.clear();
    for (std::size_t n = 0; n < cfg_.levels(); ++n)
      scale_w_.push_back(dense_param("sap.scale" + std::to_string(n) + ".w", {C, d}, rng));
    disc_w_ = dense_param("sap.disc.w", {1, C}, rng);
    disc_b_ = ad::Param<S>("sap.disc.b", Tensor<S>({1}));
  }

  const PyramidConfig& config() const { return cfg_; }
  ad::BnState<S>& bn_state() { return bn_state_; }

  std::vector<ad::Param<S>*> params() {
    std::vector<ad::Param<S>*> out;
    for (int i = 0; i < 3; ++i) {
      out.push_back(&red_w_[i]);
      out.push_back(&red_b_[i]);
      out.push_back(&gf_w_[i]);
      out.push_back(&gf_b_[i]);
      out.push_back(&mk_w_[i]);
      out.push_back(&mk_b_[i]);
    }
    out.push_back(&wz_);
    out.push_back(&bn_gamma_);
    out.push_back(&bn_beta_);
    for (auto& a : scale_w_) out.push_back(&a);
    out.push_back(&disc_w_);
    out.push_back(&disc_b_);
    return out;
  }

  /// Discriminator parameters only (no mask head): the domain head plus
  /// everything feeding it.
  std::vector<ad::Param<S>*> discriminator_params() { return {&disc_w_, &disc_b_}; }

  struct Output {
    std::vector<ad::Var<S>> probs;              // per-sample x_i (scalar vars)
    std::vector<ad::Var<S>> logits;             // pre-sigmoid domain scores
    std::vector<AttentionState<S>> states;
  };

  /// Runs the full attention pyramid over a batch. `lambda` engages the GRL
  /// at the module input; pass std::nullopt for a plain (reversal-free)
  /// forward. Guided maps must already be softmax probabilities; pass
  /// invalid Vars when use_guided_map is off.
  Output forward(ad::Tape<S>& tape, const std::vector<ad::Var<S>>& f_hats,
                 const std::vector<ad::Var<S>>& guided, bool train, std::optional<S> lambda) {
    using namespace ad;
    const std::size_t B = f_hats.size();
    const std::size_t N = cfg_.levels();
    Output out;
    out.states.resize(B);

    // stage 1: per-sample attention vectors (and masks)
    std::vector<std::vector<Var<S>>> level_vectors(B);
    std::vector<Var<S>> holistic(B);  // w/o SA: global average vector
    for (std::size_t b = 0; b < B; ++b) {
      Var<S> x = lambda ? grad_reverse(f_hats[b], *lambda) : f_hats[b];
      const std::size_t H = x.val().extent(1), W = x.val().extent(2);

      Var<S> fbar = x;
      for (int i = 0; i < 3; ++i)
        fbar = relu(conv2d(fbar, tape.use(red_w_[i]), tape.use(red_b_[i]), 1, 0));

      if (!cfg_.use_spatial_attention) {
        holistic[b] = mean_spatial(fbar);
        continue;
      }

      Var<S> gin = x;
      if (cfg_.use_guided_map) {
        Var<S> gm = guided[b];
        if (!gm.valid()) throw ConfigError("sap: guided map required but missing");
        if (gm.val().extent(1) != H || gm.val().extent(2) != W)
          gm = resize_bilinear(gm, H, W);
        gin = concat_channels(gm, x);
      }
      Var<S> pbar = gin;
      for (int i = 0; i < 3; ++i)
        pbar = relu(conv2d(pbar, tape.use(gf_w_[i]), tape.use(gf_b_[i]), 1, 1));

      const auto sizes = PyramidConfig::clamp_pool_sizes(cfg_.pool_sizes, std::min(H, W));
      for (int k : sizes) {
        if (static_cast<std::size_t>(k) > std::min(H, W))
          throw ConfigError("sap: pooling size " + std::to_string(k) + " exceeds feature map " +
                            std::to_string(H) + "x" + std::to_string(W));
        Var<S> f_n = cfg_.pooling == Pooling::kAvg ? avg_pool2d(fbar, k) : max_pool2d(fbar, k);
        const std::size_t Hn = f_n.val().extent(1), Wn = f_n.val().extent(2);

        Var<S> m = resize_bilinear(pbar, Hn, Wn);
        m = relu(conv2d(m, tape.use(mk_w_[0]), tape.use(mk_b_[0]), 1, 1));
        m = relu(conv2d(m, tape.use(mk_w_[1]), tape.use(mk_b_[1]), 1, 1));
        m = conv2d(m, tape.use(mk_w_[2]), tape.use(mk_b_[2]), 1, 1);
        Var<S> omega = softmax_flat(m);  // [1,Hn,Wn], sums to 1

        level_vectors[b].push_back(weighted_spatial_sum(f_n, omega));
        out.states[b].masks.push_back(
            Tensor<S>::from({Hn, Wn},
                            std::vector<S>(omega.val().data(), omega.val().data() + Hn * Wn)));
      }
      for (const auto& v : level_vectors[b]) out.states[b].vectors.push_back(v.val());
    }

    if (!cfg_.use_spatial_attention) {
      for (std::size_t b = 0; b < B; ++b) {
        Var<S> score = fully_connected(holistic[b], tape.use(disc_w_), tape.use(disc_b_));
        Var<S> prob = sigmoid(score);
        out.states[b].fused = holistic[b].val();
        out.states[b].prob = prob.val()[0];
        out.logits.push_back(score);
        out.probs.push_back(prob);
      }
      return out;
    }

    // stage 2: channel attention needs the whole batch for batch norm
    std::vector<Var<S>> phi(B);
    if (cfg_.use_channel_attention) {
      std::vector<Var<S>> compacts(B);
      for (std::size_t b = 0; b < B; ++b) {
        Var<S> v = level_vectors[b][0];
        for (std::size_t n = 1; n < N; ++n) v = add(v, level_vectors[b][n]);
        compacts[b] = fully_connected(v, tape.use(wz_), tape.leaf(Tensor<S>({cfg_.d()})));
      }
      Var<S> z = relu(batch_norm_rows(stack_rows(compacts), tape.use(bn_gamma_),
                                      tape.use(bn_beta_), bn_state_, train));
      for (std::size_t b = 0; b < B; ++b) {
        Var<S> zb = row(z, b);
        std::vector<Var<S>> logits;
        for (std::size_t n = 0; n < N; ++n)
          logits.push_back(
              fully_connected(zb, tape.use(scale_w_[n]), tape.leaf(Tensor<S>({cfg_.channels}))));
        phi[b] = softmax_levels(stack_rows(logits));
        out.states[b].compact = zb.val();
      }
    } else {
      // equal summation: φ^n(c) = 1/N
      for (std::size_t b = 0; b < B; ++b)
        phi[b] = tape.leaf(Tensor<S>({N, cfg_.channels}, S(1) / static_cast<S>(N)));
    }

    for (std::size_t b = 0; b < B; ++b) {
      Var<S> fused = fuse_levels(stack_rows(level_vectors[b]), phi[b]);
      Var<S> score = fully_connected(fused, tape.use(disc_w_), tape.use(disc_b_));
      Var<S> prob = sigmoid(score);
      out.states[b].phi = phi[b].val();
      out.states[b].fused = fused.val();
      out.states[b].prob = prob.val()[0];
      out.logits.push_back(score);
      out.probs.push_back(prob);
    }
    return out;
  }

 private:
  static ad::Param<S> conv_param(const std::string& name, Shape shape, Rng& rng) {
    // He-style fan-in scaling
    const std::size_t fan_in = shape[1] * shape[2] * shape[3];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor<S> w(shape);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.normal() * stddev);
    return ad::Param<S>(name, std::move(w));
  }

  static ad::Param<S> dense_param(const std::string& name, Shape shape, Rng& rng) {
    const std::size_t fan_in = shape[1];
    const double stddev = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor<S> w(shape);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.normal() * stddev);
    return ad::Param<S>(name, std::move(w));
  }

  PyramidConfig cfg_;
  std::size_t in_channels_;
  std::size_t sem_channels_;

  ad::Param<S> red_w_[3], red_b_[3];
  ad::Param<S> gf_w_[3], gf_b_[3];
  ad::Param<S> mk_w_[3], mk_b_[3];
  ad::Param<S> wz_, bn_gamma_, bn_beta_;
  std::vector<ad::Param<S>> scale_w_;
  ad::Param<S> disc_w_, disc_b_;
  ad::BnState<S> bn_state_;
};

}  // namespace sap

#endif  // SAP_SAPNET_HPP_
