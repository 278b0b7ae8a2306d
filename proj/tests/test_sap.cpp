#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sap/gradcheck.hpp"
#include "sap/sapnet.hpp"
#include "test_util.hpp"

using namespace sap;
using test::max_abs_diff;
using test::random_tensor;

namespace {

// Uniform probability map, handy stand-in for a softmaxed guided map.
template <typename S>
ad::Var<S> uniform_guided(ad::Tape<S>& tape, std::size_t classes, std::size_t h, std::size_t w) {
  return tape.leaf(Tensor<S>({classes, h, w}, S(1) / static_cast<S>(classes)));
}

template <typename S>
std::vector<ad::Var<S>> make_batch(ad::Tape<S>& tape, Rng& rng, std::size_t B, std::size_t C,
                                   std::size_t H, std::size_t W) {
  std::vector<ad::Var<S>> out;
  for (std::size_t b = 0; b < B; ++b)
    out.push_back(tape.leaf(random_tensor<S>(rng, {C, H, W})));
  return out;
}

}  // namespace

TEST_CASE("pyramid config validation") {
  PyramidConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.levels() == 13);
  CHECK(cfg.d() == 128);

  PyramidConfig bad = cfg;
  bad.pool_sizes = {};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.pool_sizes = {3, 3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.pool_sizes = {5, 3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.pool_sizes = {0, 3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  PyramidConfig desk = PyramidConfig::desk_default();
  CHECK(desk.pool_sizes == std::vector<int>{3, 9, 15, 21, 27});
  CHECK(desk.channels == 64);
  CHECK(desk.d() == 32);
  CHECK_NOTHROW(desk.validate());
}

TEST_CASE("published level sets") {
  CHECK(PyramidConfig::level_set(3) == std::vector<int>{3, 21, 37});
  CHECK(PyramidConfig::level_set(7) == std::vector<int>{3, 9, 15, 21, 27, 33, 37});
  CHECK(PyramidConfig::level_set(9) == std::vector<int>{3, 9, 15, 21, 27, 33, 39, 45, 51});
  CHECK(PyramidConfig::level_set(13) ==
        std::vector<int>{3, 6, 9, 12, 15, 18, 21, 24, 27, 30, 33, 35, 37});
  CHECK_THROWS_AS(PyramidConfig::level_set(5), ConfigError);
}

TEST_CASE("pool size width-limit rule") {
  // sizes that already fit are untouched
  CHECK(PyramidConfig::clamp_pool_sizes(PyramidConfig::level_set(13), 38) ==
        PyramidConfig::level_set(13));
  // the canonical reduction: {38, 41} on a 38-wide map -> {35, 37}
  CHECK(PyramidConfig::clamp_pool_sizes({38, 41}, 38) == std::vector<int>{35, 37});
  // oversized tail gets folded down while staying strictly increasing
  CHECK(PyramidConfig::clamp_pool_sizes(PyramidConfig::level_set(9), 38) ==
        std::vector<int>{3, 9, 15, 21, 27, 31, 33, 35, 37});
  // too many levels for a tiny map is an error
  CHECK_THROWS_AS(PyramidConfig::clamp_pool_sizes(PyramidConfig::level_set(13), 3), ConfigError);
}

TEST_CASE("channel reduction widths follow the halving-with-floor rule") {
  Rng rng(7);
  auto widths_of = [&](std::size_t in_c) {
    PyramidConfig cfg;
    cfg.pool_sizes = {3, 5};
    cfg.channels = 256;
    SapNet<float> net(cfg, in_c, 4, rng);
    std::vector<std::pair<std::size_t, std::size_t>> out;  // (out, in) per reduce conv
    for (auto* p : net.params())
      if (p->name.rfind("sap.reduce", 0) == 0 && p->name.back() == 'w')
        out.emplace_back(p->value.extent(0), p->value.extent(1));
    return out;
  };
  using P = std::pair<std::size_t, std::size_t>;
  // 512 -> 256 -> 256 -> 256 (halving floored at C)
  CHECK(widths_of(512) == std::vector<P>{{256, 512}, {256, 256}, {256, 256}});
  // 1024 -> 512 -> 256 -> 256
  CHECK(widths_of(1024) == std::vector<P>{{512, 1024}, {256, 512}, {256, 256}});

  // expansion is refused
  PyramidConfig cfg;
  cfg.pool_sizes = {3};
  cfg.channels = 256;
  CHECK_THROWS_AS(SapNet<float>(cfg, 128, 4, rng), ConfigError);
}

TEST_CASE("pyramid level shapes on a 38x38 map, N=13") {
  Rng rng(11);
  PyramidConfig cfg;
  cfg.pool_sizes = PyramidConfig::level_set(13);
  cfg.channels = 8;
  SapNet<float> net(cfg, 8, 4, rng);

  ad::Tape<float> tape;
  auto f_hats = make_batch<float>(tape, rng, 2, 8, 38, 38);
  std::vector<ad::Var<float>> guided = {uniform_guided<float>(tape, 4, 38, 38),
                                        uniform_guided<float>(tape, 4, 38, 38)};
  auto out = net.forward(tape, f_hats, guided, /*train=*/true, std::optional<float>(1.0f));

  const std::size_t want[13] = {36, 33, 30, 27, 24, 21, 18, 15, 12, 9, 6, 4, 2};
  REQUIRE(out.states.size() == 2);
  for (const auto& st : out.states) {
    REQUIRE(st.masks.size() == 13);
    for (std::size_t n = 0; n < 13; ++n) {
      CHECK(st.masks[n].extent(0) == want[n]);
      CHECK(st.masks[n].extent(1) == want[n]);
      double sum = 0;
      for (std::size_t i = 0; i < st.masks[n].size(); ++i) {
        sum += st.masks[n][i];
        CHECK(st.masks[n][i] >= 0.0f);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-4));
      CHECK(st.vectors[n].size() == 8);
    }
    CHECK(st.phi.extent(0) == 13);
    CHECK(st.phi.extent(1) == 8);
    CHECK(st.fused.size() == 8);
  }
}

TEST_CASE("forward clamps the size set to the incoming feature map") {
  Rng rng(13);
  PyramidConfig cfg = PyramidConfig::desk_default();
  cfg.channels = 8;
  SapNet<float> net(cfg, 8, 4, rng);

  ad::Tape<float> tape;
  auto f_hats = make_batch<float>(tape, rng, 2, 8, 16, 16);
  std::vector<ad::Var<float>> guided = {uniform_guided<float>(tape, 4, 16, 16),
                                        uniform_guided<float>(tape, 4, 16, 16)};
  auto out = net.forward(tape, f_hats, guided, true, std::optional<float>(1.0f));
  // {3,9,15,21,27} clamped to 16 -> {3,9,11,13,15}; mask side is 16-k+1
  const std::size_t want[5] = {14, 8, 6, 4, 2};
  for (std::size_t n = 0; n < 5; ++n) {
    CHECK(out.states[0].masks[n].extent(0) == want[n]);
    CHECK(out.states[0].masks[n].extent(1) == want[n]);
  }
}

TEST_CASE("scale weights sum to one and fusion matches its oracle") {
  Rng rng(17);
  PyramidConfig cfg;
  cfg.pool_sizes = {3, 5, 7};
  cfg.channels = 16;
  SapNet<double> net(cfg, 16, 4, rng);

  ad::Tape<double> tape;
  auto f_hats = make_batch<double>(tape, rng, 2, 16, 12, 12);
  std::vector<ad::Var<double>> guided = {uniform_guided<double>(tape, 4, 12, 12),
                                         uniform_guided<double>(tape, 4, 12, 12)};
  auto out = net.forward(tape, f_hats, guided, true, std::optional<double>(1.0));

  for (const auto& st : out.states) {
    const std::size_t N = st.phi.extent(0), C = st.phi.extent(1);
    for (std::size_t c = 0; c < C; ++c) {
      double col = 0;
      for (std::size_t n = 0; n < N; ++n) col += st.phi.at(n, c);
      CHECK(col == doctest::Approx(1.0).epsilon(1e-10));
    }
    // fused V = sum_n V^n ⊙ φ^n, recomputed from the exported pieces
    Tensor<double> want({C});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) want[c] += st.vectors[n][c] * st.phi.at(n, c);
    CHECK(max_abs_diff(want, st.fused) < 1e-12);
    CHECK(st.prob > 0.0);
    CHECK(st.prob < 1.0);
    CHECK(st.compact.size() == cfg.d());
  }
}

TEST_CASE("without channel attention the fusion is the plain 1/N average") {
  Rng rng(19);
  PyramidConfig cfg;
  cfg.pool_sizes = {3, 5, 7};
  cfg.channels = 16;
  cfg.use_channel_attention = false;
  SapNet<double> net(cfg, 16, 4, rng);

  ad::Tape<double> tape;
  auto f_hats = make_batch<double>(tape, rng, 2, 16, 12, 12);
  std::vector<ad::Var<double>> guided = {uniform_guided<double>(tape, 4, 12, 12),
                                         uniform_guided<double>(tape, 4, 12, 12)};
  auto out = net.forward(tape, f_hats, guided, true, std::optional<double>(1.0));

  for (const auto& st : out.states) {
    const std::size_t N = 3, C = 16;
    Tensor<double> want({C});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) want[c] += st.vectors[n][c] * (1.0 / N);
    // same accumulation order as the forward pass, so bit-exact
    CHECK(max_abs_diff(want, st.fused) == 0.0);
    CHECK(st.compact.empty());
  }
}

TEST_CASE("without spatial attention the head sees the global average vector") {
  Rng rng(23);
  PyramidConfig cfg;
  cfg.pool_sizes = {3, 5, 7};
  cfg.channels = 16;
  cfg.use_spatial_attention = false;
  SapNet<double> net(cfg, 16, 4, rng);

  ad::Tape<double> tape;
  auto f_hats = make_batch<double>(tape, rng, 2, 16, 12, 12);
  std::vector<ad::Var<double>> guided(2);
  auto out = net.forward(tape, f_hats, guided, true, std::optional<double>(1.0));
  REQUIRE(out.probs.size() == 2);
  for (const auto& st : out.states) {
    CHECK(st.masks.empty());
    CHECK(st.fused.size() == 16);  // mean over space of the reduced map
    CHECK(st.prob > 0.0);
    CHECK(st.prob < 1.0);
  }
}

TEST_CASE("guided map off and max pooling variants run") {
  Rng rng(29);
  PyramidConfig cfg;
  cfg.pool_sizes = {3, 5};
  cfg.channels = 8;
  cfg.use_guided_map = false;
  cfg.pooling = Pooling::kMax;
  SapNet<float> net(cfg, 8, 4, rng);

  // with the guided map off the first guided-feature conv consumes only f̂
  for (auto* p : net.params())
    if (p->name == "sap.guided0.w") CHECK(p->value.extent(1) == 8);

  ad::Tape<float> tape;
  auto f_hats = make_batch<float>(tape, rng, 2, 8, 10, 10);
  std::vector<ad::Var<float>> guided(2);  // unused
  auto out = net.forward(tape, f_hats, guided, true, std::optional<float>(0.5f));
  CHECK(out.probs.size() == 2);
  for (const auto& st : out.states) {
    double sum = 0;
    for (std::size_t i = 0; i < st.masks[0].size(); ++i) sum += st.masks[0][i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("missing guided map is rejected when the config requires one") {
  Rng rng(31);
  PyramidConfig cfg;
  cfg.pool_sizes = {3};
  cfg.channels = 8;
  SapNet<float> net(cfg, 8, 4, rng);
  ad::Tape<float> tape;
  auto f_hats = make_batch<float>(tape, rng, 2, 8, 10, 10);
  std::vector<ad::Var<float>> guided(2);  // invalid vars
  CHECK_THROWS_AS(net.forward(tape, f_hats, guided, true, std::optional<float>(1.0f)),
                  ConfigError);
}

TEST_CASE("reversal layer leaves the forward pass bit-identical") {
  Rng rng(37);
  PyramidConfig cfg;
  cfg.pool_sizes = {3, 5, 7};
  cfg.channels = 8;
  SapNet<double> net(cfg, 8, 4, rng);

  auto run = [&](std::optional<double> lambda) {
    ad::Tape<double> tape;
    Rng data(99);
    auto f_hats = make_batch<double>(tape, data, 2, 8, 12, 12);
    std::vector<ad::Var<double>> guided = {uniform_guided<double>(tape, 4, 12, 12),
                                           uniform_guided<double>(tape, 4, 12, 12)};
    auto out = net.forward(tape, f_hats, guided, /*train=*/false, lambda);
    return std::pair{out.states[0].prob, out.states[1].prob};
  };
  auto with = run(std::optional<double>(2.5));
  auto without = run(std::nullopt);
  CHECK(with.first == without.first);
  CHECK(with.second == without.second);
}

TEST_CASE("end-to-end finite differences over every module parameter") {
  Rng rng(41);
  PyramidConfig cfg;
  cfg.pool_sizes = {3, 5, 7};
  cfg.channels = 8;
  SapNet<double> net(cfg, 8, 3, rng);

  // Jitter every parameter (in particular the zero-initialized biases):
  // exact-zero pre-activations sit on the relu kink, where central
  // differences and the subgradient legitimately disagree.
  Rng jitter(2);
  for (auto* p : net.params())
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] += jitter.uniform(-0.05, 0.05);

  Rng data(5);
  Tensor<double> f0 = random_tensor(data, {8, 10, 10});
  Tensor<double> f1 = random_tensor(data, {8, 10, 10});
  Tensor<double> g0 = random_tensor(data, {3, 10, 10}, 0.05, 1.0);
  Tensor<double> g1 = random_tensor(data, {3, 10, 10}, 0.05, 1.0);

  // eval-mode batch norm so perturbed re-evaluations see frozen statistics;
  // seed the running stats with one training pass first
  auto run = [&](bool train, bool do_backward) {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> f_hats = {tape.leaf(f0), tape.leaf(f1)};
    std::vector<ad::Var<double>> guided = {ad::softmax_channels(tape.leaf(g0)),
                                           ad::softmax_channels(tape.leaf(g1))};
    auto out = net.forward(tape, f_hats, guided, train, std::optional<double>(0.7));
    ad::Var<double> loss = ad::add(ad::bce_prob(out.probs[0], 0.0), ad::bce_prob(out.probs[1], 1.0));
    if (do_backward) tape.backward(loss);
    return static_cast<double>(loss.val()[0]);
  };
  run(true, false);

  // The last mask conv's bias shifts every softmax logit equally, so its true
  // gradient is identically zero (softmax shift invariance) and a finite
  // difference only measures roundoff. Check it is ~0 and exclude it from the
  // relative comparison.
  std::vector<ad::Param<double>*> checked;
  ad::Param<double>* shift_bias = nullptr;
  for (auto* p : net.params()) {
    if (p->name == "sap.mask2.b") shift_bias = p;
    else checked.push_back(p);
  }
  REQUIRE(shift_bias != nullptr);

  Rng pick(77);
  auto report = ad::finite_difference_check<double>(
      checked, [&] { return run(false, false); },
      [&] { run(false, true); }, 1e-5, 1e-5, 6, pick);
  std::string bad;
  for (const auto& n : report.failing) bad += n + " ";
  INFO("max rel err " << report.max_rel_err << " over " << report.checked << " entries; failing: "
                      << bad);
  CHECK(report.ok());

  shift_bias->zero_grad();
  run(false, true);
  for (std::size_t i = 0; i < shift_bias->grad.size(); ++i)
    CHECK(std::abs(shift_bias->grad[i]) < 1e-9);
}
