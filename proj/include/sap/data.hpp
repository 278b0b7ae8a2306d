#ifndef SAP_DATA_HPP_
#define SAP_DATA_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "sap/model.hpp"
#include "sap/rng.hpp"
#include "sap/tensor.hpp"

namespace sap {

/// Synthetic two-domain scene generator. Both domains share the same
/// geometry stream per (seed, index): the target domain differs only in
/// appearance (global color shift, additive noise, low-frequency haze), so
/// the label distributions coincide and the shift is purely covariate.
struct SceneSpec {
  std::uint64_t seed = 1;
  std::size_t width = 64;
  std::size_t height = 64;
  int min_shapes = 2;
  int max_shapes = 4;
  // target-domain severity knobs. The defaults make the color offset the
  // dominant shift, with mild haze and noise on top: the gap is large for a
  // source-only model yet closable by a feature extractor that learns
  // offset-invariant (zero-sum) filters.
  double color_shift = 0.5;   // strength of the additive cold-tint offset
  double noise_sigma = 0.01;  // additive Gaussian, [0,1] pixel scale
  double haze_alpha = 0.1;    // strength of the low-frequency fog blend

  void validate() const;
};

/// One stored sample: quantized u8 image (3×H×W), class-id label map (H×W)
/// and domain tag. Labels exist for both domains; training code withholds
/// them for the target domain.
struct StoredSample {
  Tensor<std::uint8_t> image;
  Tensor<std::uint8_t> labels;
  int domain = 0;
};

struct Dataset {
  std::vector<StoredSample> samples;
  std::vector<std::size_t> source_idx;
  std::vector<std::size_t> target_idx;

  void rebuild_index();
};

StoredSample generate_sample(const SceneSpec& spec, int domain, std::size_t index);
Dataset generate_dataset(const SceneSpec& spec, std::size_t per_domain);

/// Training-ready view of a stored sample: image scaled to [0,1]; target
/// labels dropped unless `keep_labels`.
template <typename S>
Sample<S> to_sample(const StoredSample& s, bool keep_labels = false) {
  Sample<S> out;
  out.image = Tensor<S>(s.image.shape());
  for (std::size_t i = 0; i < s.image.size(); ++i)
    out.image[i] = static_cast<S>(s.image[i]) / S(255);
  if (s.domain == 0 || keep_labels) out.labels = s.labels;
  out.domain = s.domain;
  return out;
}

// Directory layout: <name>.ppm / <name>_label.pgm plus manifest.txt with
// lines "<image> <label|-> <domain 0|1>".
void save_dataset(const std::string& dir, const Dataset& data);
Dataset load_dataset(const std::string& dir);

}  // namespace sap

#endif  // SAP_DATA_HPP_
