#ifndef SAP_RUN_CONFIG_HPP_
#define SAP_RUN_CONFIG_HPP_

#include <string>
#include <vector>

#include "sap/data.hpp"
#include "sap/train.hpp"

namespace sap {

/// Complete run description: model + pyramid + schedule + scene. Parsed from
/// line-oriented key=value text ('#' comments); unknown keys are errors. The
/// echo of every setting travels inside checkpoints so any result can be
/// reproduced from its artifacts alone.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SceneSpec scene;
  std::string dtype = "f32";  // training precision: f32 | f64

  void set(const std::string& key, const std::string& value);
  void apply_text(const std::string& text, const std::string& origin);
  static RunConfig from_file(const std::string& path);

  std::string echo() const;
  void validate() const;
};

}  // namespace sap

#endif  // SAP_RUN_CONFIG_HPP_
