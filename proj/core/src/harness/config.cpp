#include "s2v/harness/config.hpp"

#include <fstream>
#include <set>

namespace s2v::harness {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_threshold(const json& j, const char* key, SuccessThreshold& t) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::array<double, 2>>();
  t = {v[0], v[1]};
}

}  // namespace

void Config::Validate() const {
  const auto& d = dataset;
  if (d.n_cases < 1) throw ValidationError("dataset.n_cases must be >= 1");
  if (d.cases_per_volume < 1) throw ValidationError("dataset.cases_per_volume must be >= 1");
  for (int n : d.volume_dims)
    if (n < 16) throw ValidationError("dataset.volume_dims must be >= 16");
  for (int n : d.frame_dims)
    if (n < 16) throw ValidationError("dataset.frame_dims must be >= 16");
  CalibrationSpec{d.pixel_spacing_mm, d.voxel_spacing_mm}.Validate();
  if (d.min_rotation_deg < 0.0 || d.max_rotation_deg < d.min_rotation_deg || d.max_rotation_deg > 180.0)
    throw ValidationError("dataset rotation range must satisfy 0 <= min <= max <= 180");
  if (d.max_translation_mm < 0.0) throw ValidationError("dataset.max_translation_mm must be >= 0");
  if (!(matching.temperature > 0.0) || !(matching.tau > 0.0) || !(matching.fine_temperature > 0.0))
    throw ValidationError("matching temperatures must be positive");
  if (!(matching.threshold > 0.0 && matching.threshold < 1.0)) throw ValidationError("matching.threshold must lie in (0, 1)");
  if (matching.window < 3 || matching.window % 2 == 0) throw ValidationError("matching.window must be odd and >= 3");
  if (ransac.iterations < 1 || !(ransac.inlier_tol_mm > 0.0)) throw ValidationError("invalid RANSAC settings");
  mi.Validate();
  if (attention.layers.n_f < 0 || attention.layers.heads < 1) throw ValidationError("invalid attention settings");
  if (features.extractor.d_coarse < 1 || features.extractor.d_fine < 1) throw ValidationError("invalid descriptor dims");
  if (!(train.temperature > 0.0) || train.learning_rate < 0.0 || train.distractor_channels < 0)
    throw ValidationError("invalid train settings");
  if (train.iterations < 1 || train.pairs < 1) throw ValidationError("train.iterations and train.pairs must be >= 1");
  if (gradcheck.instances < 1 || !(gradcheck.step > 0.0)) throw ValidationError("invalid gradcheck settings");
}

json to_json(const DatasetConfig& d) {
  return {{"n_cases", d.n_cases},
          {"cases_per_volume", d.cases_per_volume},
          {"volume_dims", d.volume_dims},
          {"voxel_spacing_mm", d.voxel_spacing_mm},
          {"frame_dims", d.frame_dims},
          {"pixel_spacing_mm", d.pixel_spacing_mm},
          {"min_rotation_deg", d.min_rotation_deg},
          {"max_rotation_deg", d.max_rotation_deg},
          {"max_translation_mm", d.max_translation_mm},
          {"degrade", d.degrade},
          {"degradation",
           {{"gamma", d.degradation.gamma},
            {"speckle_shape", d.degradation.speckle_shape},
            {"attenuation_per_mm", d.degradation.attenuation_per_mm}}}};
}

DatasetConfig dataset_config_from_json(const json& d) {
  DatasetConfig o;
  read(d, "n_cases", o.n_cases);
  read(d, "cases_per_volume", o.cases_per_volume);
  read(d, "volume_dims", o.volume_dims);
  read(d, "voxel_spacing_mm", o.voxel_spacing_mm);
  read(d, "frame_dims", o.frame_dims);
  read(d, "pixel_spacing_mm", o.pixel_spacing_mm);
  read(d, "min_rotation_deg", o.min_rotation_deg);
  read(d, "max_rotation_deg", o.max_rotation_deg);
  read(d, "max_translation_mm", o.max_translation_mm);
  read(d, "degrade", o.degrade);
  if (d.contains("degradation")) {
    const auto& g = d.at("degradation");
    read(g, "gamma", o.degradation.gamma);
    read(g, "speckle_shape", o.degradation.speckle_shape);
    read(g, "attenuation_per_mm", o.degradation.attenuation_per_mm);
  }
  return o;
}

json to_json(const Config& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["dataset"] = to_json(c.dataset);
  const auto& f = c.features;
  j["features"] = {{"mode", f.mode == FeatureMode::kOracle ? "oracle" : "learned"},
                   {"d_c", f.extractor.d_coarse},
                   {"d_f", f.extractor.d_fine},
                   {"stage_channels", f.extractor.stage_channels},
                   {"nonlinearity", f.extractor.nonlinearity},
                   {"positional_encoding", f.positional_encoding},
                   {"us_weights", f.us_weights},
                   {"ct_weights", f.ct_weights},
                   {"weight_seed", f.weight_seed},
                   {"oracle",
                    {{"coarse_width_mm", f.oracle.coarse_width_mm},
                     {"fine_width_mm", f.oracle.fine_width_mm},
                     {"period_mm", f.oracle.period_mm},
                     {"gain", f.oracle.gain}}}};
  const auto& a = c.attention;
  j["attention"] = {{"n_f", a.layers.n_f},
                    {"heads", a.layers.heads},
                    {"ff_hidden_factor", a.layers.ff_hidden_factor},
                    {"token_norm", a.layers.token_norm},
                    {"init_scale", a.layers.init_scale},
                    {"weights", a.weights},
                    {"weight_seed", a.weight_seed}};
  const auto& m = c.matching;
  j["matching"] = {{"temperature", m.temperature},
                   {"tau", m.tau},
                   {"threshold", m.threshold},
                   {"window", m.window},
                   {"fine_temperature", m.fine_temperature},
                   {"min_row_confidence", m.min_row_confidence},
                   {"straight_through", m.straight_through},
                   {"gumbel_noise", m.gumbel_noise},
                   {"fine_refine", m.fine_refine}};
  j["ransac"] = {{"iterations", c.ransac.iterations}, {"inlier_tol_mm", c.ransac.inlier_tol_mm}};
  j["mi"] = {{"bins", c.mi.bins},
             {"max_iterations", c.mi.max_iterations},
             {"step_deg", c.mi.step_deg},
             {"step_mm", c.mi.step_mm},
             {"convergence_tol", c.mi.convergence_tol},
             {"restarts", c.mi.restarts}};
  j["loss"] = {{"lambda", c.loss.lambda}, {"translation_scale_mm", c.loss.translation_scale_mm}};
  j["thresholds"] = {{"loose", {c.loose_threshold.rotation_deg, c.loose_threshold.translation_mm}},
                     {"strict", {c.strict_threshold.rotation_deg, c.strict_threshold.translation_mm}}};
  j["train"] = {{"iterations", c.train.iterations},
                {"learning_rate", c.train.learning_rate},
                {"pairs", c.train.pairs},
                {"distractor_channels", c.train.distractor_channels},
                {"distractor_scale", c.train.distractor_scale},
                {"temperature", c.train.temperature}};
  j["gradcheck"] = {{"instances", c.gradcheck.instances}, {"rtol", c.gradcheck.rtol}, {"step", c.gradcheck.step}};
  return j;
}

Config config_from_json(const json& j) {
  static const std::set<std::string> kSections = {"seed",  "threads", "dataset", "features",   "attention",
                                                  "matching", "ransac", "mi", "loss", "thresholds", "train",
                                                  "gradcheck"};
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kSections.contains(key)) throw ValidationError("unknown config key: " + key);

  Config c;
  read(j, "seed", c.seed);
  read(j, "threads", c.threads);
  if (j.contains("dataset")) c.dataset = dataset_config_from_json(j.at("dataset"));
  if (j.contains("features")) {
    const auto& f = j.at("features");
    auto& o = c.features;
    if (f.contains("mode")) {
      const auto mode = f.at("mode").get<std::string>();
      if (mode == "oracle") o.mode = FeatureMode::kOracle;
      else if (mode == "learned") o.mode = FeatureMode::kLearned;
      else throw ValidationError("features.mode must be oracle or learned");
    }
    read(f, "d_c", o.extractor.d_coarse);
    read(f, "d_f", o.extractor.d_fine);
    read(f, "stage_channels", o.extractor.stage_channels);
    read(f, "nonlinearity", o.extractor.nonlinearity);
    read(f, "positional_encoding", o.positional_encoding);
    read(f, "us_weights", o.us_weights);
    read(f, "ct_weights", o.ct_weights);
    read(f, "weight_seed", o.weight_seed);
    if (f.contains("oracle")) {
      const auto& g = f.at("oracle");
      read(g, "coarse_width_mm", o.oracle.coarse_width_mm);
      read(g, "fine_width_mm", o.oracle.fine_width_mm);
      read(g, "period_mm", o.oracle.period_mm);
      read(g, "gain", o.oracle.gain);
    }
  }
  if (j.contains("attention")) {
    const auto& a = j.at("attention");
    auto& o = c.attention;
    read(a, "n_f", o.layers.n_f);
    read(a, "heads", o.layers.heads);
    read(a, "ff_hidden_factor", o.layers.ff_hidden_factor);
    read(a, "token_norm", o.layers.token_norm);
    read(a, "init_scale", o.layers.init_scale);
    read(a, "weights", o.weights);
    read(a, "weight_seed", o.weight_seed);
  }
  if (j.contains("matching")) {
    const auto& m = j.at("matching");
    auto& o = c.matching;
    read(m, "temperature", o.temperature);
    read(m, "tau", o.tau);
    read(m, "threshold", o.threshold);
    read(m, "window", o.window);
    read(m, "fine_temperature", o.fine_temperature);
    read(m, "min_row_confidence", o.min_row_confidence);
    read(m, "straight_through", o.straight_through);
    read(m, "gumbel_noise", o.gumbel_noise);
    read(m, "fine_refine", o.fine_refine);
  }
  if (j.contains("ransac")) {
    read(j.at("ransac"), "iterations", c.ransac.iterations);
    read(j.at("ransac"), "inlier_tol_mm", c.ransac.inlier_tol_mm);
  }
  if (j.contains("mi")) {
    const auto& m = j.at("mi");
    read(m, "bins", c.mi.bins);
    read(m, "max_iterations", c.mi.max_iterations);
    read(m, "step_deg", c.mi.step_deg);
    read(m, "step_mm", c.mi.step_mm);
    read(m, "convergence_tol", c.mi.convergence_tol);
    read(m, "restarts", c.mi.restarts);
  }
  if (j.contains("loss")) {
    read(j.at("loss"), "lambda", c.loss.lambda);
    read(j.at("loss"), "translation_scale_mm", c.loss.translation_scale_mm);
  }
  if (j.contains("thresholds")) {
    read_threshold(j.at("thresholds"), "loose", c.loose_threshold);
    read_threshold(j.at("thresholds"), "strict", c.strict_threshold);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    read(t, "iterations", c.train.iterations);
    read(t, "learning_rate", c.train.learning_rate);
    read(t, "pairs", c.train.pairs);
    read(t, "distractor_channels", c.train.distractor_channels);
    read(t, "distractor_scale", c.train.distractor_scale);
    read(t, "temperature", c.train.temperature);
  }
  if (j.contains("gradcheck")) {
    const auto& g = j.at("gradcheck");
    read(g, "instances", c.gradcheck.instances);
    read(g, "rtol", c.gradcheck.rtol);
    read(g, "step", c.gradcheck.step);
  }
  c.Validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace s2v::harness
