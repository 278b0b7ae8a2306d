#include "sap/run_config.hpp"

#include <fstream>
#include <sstream>

namespace sap {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

template <typename T>
T parse_num(const std::string& key, const std::string& value) {
  std::istringstream ss(value);
  T v;
  char trailing;
  if (!(ss >> v) || ss >> trailing)
    throw ConfigError("config: bad value '" + value + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on") return true;
  if (value == "0" || value == "false" || value == "off") return false;
  throw ConfigError("config: bad boolean '" + value + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  for (const auto& part : split(value, ','))
    out.push_back(parse_num<T>(key, trim(part)));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) ss << ",";
    ss << v[i];
  }
  return ss.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  // pyramid
  if (key == "pyramid.pool_sizes") model.pyramid.pool_sizes = parse_list<int>(key, value);
  else if (key == "pyramid.levels") model.pyramid.pool_sizes =
      PyramidConfig::level_set(parse_num<int>(key, value));
  else if (key == "pyramid.channels") model.pyramid.channels = parse_num<std::size_t>(key, value);
  else if (key == "pyramid.compact_dim") model.pyramid.compact_dim = parse_num<std::size_t>(key, value);
  else if (key == "pyramid.pooling") {
    if (value == "avg") model.pyramid.pooling = Pooling::kAvg;
    else if (value == "max") model.pyramid.pooling = Pooling::kMax;
    else throw ConfigError("config: pooling must be avg or max, got '" + value + "'");
  }
  else if (key == "pyramid.use_guided_map") model.pyramid.use_guided_map = parse_bool(key, value);
  else if (key == "pyramid.use_spatial_attention")
    model.pyramid.use_spatial_attention = parse_bool(key, value);
  else if (key == "pyramid.use_channel_attention")
    model.pyramid.use_channel_attention = parse_bool(key, value);
  else if (key == "pyramid.detach_guided_map")
    model.pyramid.detach_guided_map = parse_bool(key, value);
  // model
  else if (key == "model.backbone_widths") model.backbone_widths = parse_list<std::size_t>(key, value);
  else if (key == "model.backbone_strides") model.backbone_strides = parse_list<int>(key, value);
  else if (key == "model.classes") model.classes = parse_num<std::size_t>(key, value);
  else if (key == "model.input_h") model.input_h = parse_num<std::size_t>(key, value);
  else if (key == "model.input_w") model.input_w = parse_num<std::size_t>(key, value);
  // training
  else if (key == "train.lambda") train.lambda = parse_num<double>(key, value);
  else if (key == "train.lr0") train.lr0 = parse_num<double>(key, value);
  else if (key == "train.milestones") train.milestones = parse_list<std::size_t>(key, value);
  else if (key == "train.total_iters") train.total_iters = parse_num<std::size_t>(key, value);
  else if (key == "train.pretrain_iters") train.pretrain_iters = parse_num<std::size_t>(key, value);
  else if (key == "train.n_source") train.n_source = parse_num<std::size_t>(key, value);
  else if (key == "train.n_target") train.n_target = parse_num<std::size_t>(key, value);
  else if (key == "train.seed") train.seed = parse_num<std::uint64_t>(key, value);
  else if (key == "train.beta1") train.beta1 = parse_num<double>(key, value);
  else if (key == "train.beta2") train.beta2 = parse_num<double>(key, value);
  else if (key == "train.eps") train.eps = parse_num<double>(key, value);
  else if (key == "train.log_every") train.log_every = parse_num<std::size_t>(key, value);
  else if (key == "train.adversarial") train.adversarial = parse_bool(key, value);
  else if (key == "train.grl_warmup") train.grl_warmup = parse_bool(key, value);
  else if (key == "train.dtype") {
    if (value != "f32" && value != "f64")
      throw ConfigError("config: dtype must be f32 or f64, got '" + value + "'");
    dtype = value;
  }
  // scene
  else if (key == "scene.seed") scene.seed = parse_num<std::uint64_t>(key, value);
  else if (key == "scene.width") scene.width = parse_num<std::size_t>(key, value);
  else if (key == "scene.height") scene.height = parse_num<std::size_t>(key, value);
  else if (key == "scene.min_shapes") scene.min_shapes = parse_num<int>(key, value);
  else if (key == "scene.max_shapes") scene.max_shapes = parse_num<int>(key, value);
  else if (key == "scene.color_shift") scene.color_shift = parse_num<double>(key, value);
  else if (key == "scene.noise_sigma") scene.noise_sigma = parse_num<double>(key, value);
  else if (key == "scene.haze_alpha") scene.haze_alpha = parse_num<double>(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                        t + "'");
    try {
      set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path + ": cannot open config file");
  std::ostringstream buf;
  buf << is.rdbuf();
  RunConfig cfg;
  cfg.apply_text(buf.str(), path);
  return cfg;
}

std::string RunConfig::echo() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "pyramid.pool_sizes=" << join(model.pyramid.pool_sizes) << "\n"
     << "pyramid.channels=" << model.pyramid.channels << "\n"
     << "pyramid.compact_dim=" << model.pyramid.compact_dim << "\n"
     << "pyramid.pooling=" << (model.pyramid.pooling == Pooling::kAvg ? "avg" : "max") << "\n"
     << "pyramid.use_guided_map=" << (model.pyramid.use_guided_map ? 1 : 0) << "\n"
     << "pyramid.use_spatial_attention=" << (model.pyramid.use_spatial_attention ? 1 : 0) << "\n"
     << "pyramid.use_channel_attention=" << (model.pyramid.use_channel_attention ? 1 : 0) << "\n"
     << "pyramid.detach_guided_map=" << (model.pyramid.detach_guided_map ? 1 : 0) << "\n"
     << "model.backbone_widths=" << join(model.backbone_widths) << "\n"
     << "model.backbone_strides=" << join(model.backbone_strides) << "\n"
     << "model.classes=" << model.classes << "\n"
     << "model.input_h=" << model.input_h << "\n"
     << "model.input_w=" << model.input_w << "\n"
     << "train.lambda=" << train.lambda << "\n"
     << "train.lr0=" << train.lr0 << "\n"
     << "train.milestones=" << join(train.milestones) << "\n"
     << "train.total_iters=" << train.total_iters << "\n"
     << "train.pretrain_iters=" << train.pretrain_iters << "\n"
     << "train.n_source=" << train.n_source << "\n"
     << "train.n_target=" << train.n_target << "\n"
     << "train.seed=" << train.seed << "\n"
     << "train.beta1=" << train.beta1 << "\n"
     << "train.beta2=" << train.beta2 << "\n"
     << "train.eps=" << train.eps << "\n"
     << "train.log_every=" << train.log_every << "\n"
     << "train.adversarial=" << (train.adversarial ? 1 : 0) << "\n"
     << "train.grl_warmup=" << (train.grl_warmup ? 1 : 0) << "\n"
     << "train.dtype=" << dtype << "\n"
     << "scene.seed=" << scene.seed << "\n"
     << "scene.width=" << scene.width << "\n"
     << "scene.height=" << scene.height << "\n"
     << "scene.min_shapes=" << scene.min_shapes << "\n"
     << "scene.max_shapes=" << scene.max_shapes << "\n"
     << "scene.color_shift=" << scene.color_shift << "\n"
     << "scene.noise_sigma=" << scene.noise_sigma << "\n"
     << "scene.haze_alpha=" << scene.haze_alpha << "\n";
  return ss.str();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  scene.validate();
}

}  // namespace sap
