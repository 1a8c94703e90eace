#include "s2v/features.hpp"

#include "s2v/rng.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <numbers>

namespace s2v {

GridIndex FeatureMap::grid_of(int c) const {
  const int x = c % grid_dims[0];
  const int rest = c / grid_dims[0];
  return {x, rest % grid_dims[1], rest / grid_dims[1]};
}

bool FeatureMap::contains(const GridIndex& g) const {
  for (int a = 0; a < 3; ++a)
    if (g[a] < 0 || g[a] >= grid_dims[a]) return false;
  return true;
}

Vec3 FeatureMap::position_mm(const GridIndex& g) const {
  Vec3 p = Vec3::Zero();
  for (int a = 0; a < ndim; ++a) p[a] = g[a] * scale * input_spacing[a];
  return p;
}

GridIndex FeatureMap::nearest_cell(const Vec3& mm) const {
  GridIndex g{0, 0, 0};
  for (int a = 0; a < ndim; ++a) {
    const int i = static_cast<int>(std::lround(mm[a] / (scale * input_spacing[a])));
    g[a] = std::clamp(i, 0, grid_dims[a] - 1);
  }
  return g;
}

Vec3 TokenSequence::position_mm(int token) const {
  const GridIndex& g = index_map[static_cast<std::size_t>(token)];
  Vec3 p = Vec3::Zero();
  for (int a = 0; a < ndim; ++a) p[a] = g[a] * scale * input_spacing[a];
  return p;
}

void ExtractorWeights::Validate() const {
  if (ndim != 2 && ndim != 3) throw ValidationError("extractor ndim must be 2 or 3");
  int expected_in = 1;
  auto check = [&](const ConvLayer& l, int in, int kernel, const char* what) {
    int taps = 1;
    for (int a = 0; a < ndim; ++a) taps *= l.kernel;
    if (l.in_channels != in || l.kernel != kernel || l.out_channels <= 0 ||
        l.weights.rows() != l.out_channels || l.weights.cols() != l.in_channels * taps ||
        l.bias.size() != l.out_channels)
      throw ValidationError(std::string("inconsistent extractor layer: ") + what);
    if (!l.weights.allFinite() || !l.bias.allFinite())
      throw ValidationError(std::string("non-finite extractor weights: ") + what);
  };
  for (int s = 0; s < 3; ++s) {
    check(stages[s], expected_in, 3, "stage");
    if (stages[s].stride != 2) throw ValidationError("extractor stages must have stride 2");
    expected_in = stages[s].out_channels;
  }
  check(fine_head, stages[1].out_channels, 1, "fine head");
  check(coarse_head, stages[2].out_channels, 1, "coarse head");
}

namespace {

ConvLayer make_layer(int in, int out, int kernel, int stride, int ndim, Rng& rng) {
  ConvLayer l;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = kernel;
  l.stride = stride;
  int taps = 1;
  for (int a = 0; a < ndim; ++a) taps *= kernel;
  const double std_dev = std::sqrt(2.0 / (in * taps));
  l.weights.resize(out, in * taps);
  for (Eigen::Index i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = std_dev * normal01(rng);
  l.bias = Eigen::VectorXd::Zero(out);
  return l;
}

// channels x cells activation grid.
struct Activation {
  GridIndex dims{1, 1, 1};
  Eigen::MatrixXd values;
};

Activation convolve(const Activation& in, const ConvLayer& layer, int ndim, bool relu) {
  Activation out;
  const int stride = layer.stride;
  const int pad = layer.kernel / 2;
  int kdims[3] = {1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    if (a < ndim) {
      out.dims[a] = (in.dims[a] + stride - 1) / stride;
      kdims[a] = layer.kernel;
    } else {
      out.dims[a] = 1;
    }
  }
  const int taps = kdims[0] * kdims[1] * kdims[2];
  const Eigen::Index out_cells = static_cast<Eigen::Index>(out.dims[0]) * out.dims[1] * out.dims[2];
  const int in_ch = layer.in_channels;

  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in_ch) * taps, out_cells);
  for (int oz = 0; oz < out.dims[2]; ++oz)
    for (int oy = 0; oy < out.dims[1]; ++oy)
      for (int ox = 0; ox < out.dims[0]; ++ox) {
        const Eigen::Index oc = ox + static_cast<Eigen::Index>(out.dims[0]) * (oy + static_cast<Eigen::Index>(out.dims[1]) * oz);
        const int base[3] = {ox * (ndim > 0 ? stride : 1), oy * (ndim > 1 ? stride : 1), oz * (ndim > 2 ? stride : 1)};
        for (int tz = 0; tz < kdims[2]; ++tz) {
          const int iz = base[2] + tz - (ndim > 2 ? pad : 0);
          if (iz < 0 || iz >= in.dims[2]) continue;
          for (int ty = 0; ty < kdims[1]; ++ty) {
            const int iy = base[1] + ty - pad;
            if (iy < 0 || iy >= in.dims[1]) continue;
            for (int tx = 0; tx < kdims[0]; ++tx) {
              const int ix = base[0] + tx - pad;
              if (ix < 0 || ix >= in.dims[0]) continue;
              const Eigen::Index ic = ix + static_cast<Eigen::Index>(in.dims[0]) * (iy + static_cast<Eigen::Index>(in.dims[1]) * iz);
              const int tap = (tz * kdims[1] + ty) * kdims[0] + tx;
              for (int c = 0; c < in_ch; ++c) cols(static_cast<Eigen::Index>(c) * taps + tap, oc) = in.values(c, ic);
            }
          }
        }
      }
  out.values = layer.weights * cols;
  out.values.colwise() += layer.bias;
  if (relu) out.values = out.values.cwiseMax(0.0);
  return out;
}

FeatureMap to_feature_map(const Activation& act, int ndim, int scale, const std::array<double, 3>& spacing,
                          const GridIndex& target_dims, Modality source) {
  FeatureMap fm;
  fm.ndim = ndim;
  fm.grid_dims = target_dims;
  fm.scale = scale;
  fm.input_spacing = spacing;
  fm.source = source;
  fm.data.resize(fm.cell_count(), act.values.rows());
  for (int z = 0; z < target_dims[2]; ++z)
    for (int y = 0; y < target_dims[1]; ++y)
      for (int x = 0; x < target_dims[0]; ++x) {
        const Eigen::Index src = x + static_cast<Eigen::Index>(act.dims[0]) * (y + static_cast<Eigen::Index>(act.dims[1]) * z);
        fm.data.row(fm.cell({x, y, z})) = act.values.col(src).transpose();
      }
  return fm;
}

GridIndex ceil_dims(const GridIndex& dims, int ndim, int scale) {
  GridIndex out{1, 1, 1};
  for (int a = 0; a < ndim; ++a) out[a] = (dims[a] + scale - 1) / scale;
  return out;
}

FeaturePair run_extractor(const GridIndex& dims, int ndim, const std::array<double, 3>& spacing,
                          std::span<const float> data, const ExtractorWeights& w, Modality source) {
  if (w.ndim != ndim) throw ValidationError("extractor weights dimensionality does not match the input");
  w.Validate();
  for (int a = 0; a < ndim; ++a)
    if (dims[a] < 16) throw ValidationError("feature extraction needs >= 16 samples per axis");

  // Zero-pad to multiples of 8 so every stride-2 stage halves exactly.
  Activation in;
  for (int a = 0; a < 3; ++a) in.dims[a] = a < ndim ? (dims[a] + 7) / 8 * 8 : 1;
  in.values = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(in.dims[0]) * in.dims[1] * in.dims[2]);
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x)
        in.values(0, x + static_cast<Eigen::Index>(in.dims[0]) * (y + static_cast<Eigen::Index>(in.dims[1]) * z)) =
            data[x + static_cast<std::size_t>(dims[0]) * (y + static_cast<std::size_t>(dims[1]) * z)];

  const Activation s1 = convolve(in, w.stages[0], ndim, w.nonlinearity);
  const Activation s2 = convolve(s1, w.stages[1], ndim, w.nonlinearity);
  const Activation s3 = convolve(s2, w.stages[2], ndim, w.nonlinearity);
  const Activation fine = convolve(s2, w.fine_head, ndim, false);
  const Activation coarse = convolve(s3, w.coarse_head, ndim, false);

  FeaturePair out;
  out.fine = to_feature_map(fine, ndim, 4, spacing, ceil_dims(dims, ndim, 4), source);
  out.coarse = to_feature_map(coarse, ndim, 8, spacing, ceil_dims(dims, ndim, 8), source);
  return out;
}

}  // namespace

ExtractorWeights random_extractor_weights(int ndim, const ExtractorConfig& cfg, std::uint64_t seed) {
  if (ndim != 2 && ndim != 3) throw ValidationError("extractor ndim must be 2 or 3");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(ndim)));
  ExtractorWeights w;
  w.ndim = ndim;
  w.nonlinearity = cfg.nonlinearity;
  int in = 1;
  for (int s = 0; s < 3; ++s) {
    w.stages[s] = make_layer(in, cfg.stage_channels[s], 3, 2, ndim, rng);
    in = cfg.stage_channels[s];
  }
  w.fine_head = make_layer(cfg.stage_channels[1], cfg.d_fine, 1, 1, ndim, rng);
  w.coarse_head = make_layer(cfg.stage_channels[2], cfg.d_coarse, 1, 1, ndim, rng);
  return w;
}

FeaturePair extract_features(const Frame2D& frame, const ExtractorWeights& weights) {
  return run_extractor({frame.dims[0], frame.dims[1], 1}, 2, {frame.spacing[0], frame.spacing[1], 0.0}, frame.data,
                       weights, Modality::kUltrasound);
}

FeaturePair extract_features(const Volume3D& volume, const ExtractorWeights& weights) {
  return run_extractor({volume.dims[0], volume.dims[1], volume.dims[2]}, 3, volume.spacing, volume.data, weights,
                       Modality::kCt);
}

Eigen::MatrixXd positional_encoding(int ndim, const GridIndex& grid_dims, int channels) {
  if (ndim != 2 && ndim != 3) throw ValidationError("positional encoding supports 2 or 3 axes");
  if (channels <= 0 || channels % (2 * ndim) != 0)
    throw ValidationError("positional encoding channels must be divisible by 2 * axes");
  const int block = channels / ndim;
  const int freqs = block / 2;
  const int cells = grid_dims[0] * grid_dims[1] * grid_dims[2];
  Eigen::MatrixXd pe(cells, channels);
  for (int c = 0; c < cells; ++c) {
    const int g[3] = {c % grid_dims[0], (c / grid_dims[0]) % grid_dims[1], c / (grid_dims[0] * grid_dims[1])};
    for (int a = 0; a < ndim; ++a)
      for (int k = 0; k < freqs; ++k) {
        const double omega = std::pow(10000.0, -static_cast<double>(k) / freqs);
        pe(c, a * block + 2 * k) = std::sin(omega * g[a]);
        pe(c, a * block + 2 * k + 1) = std::cos(omega * g[a]);
      }
  }
  return pe;
}

TokenSequence tokenize(const FeatureMap& fm, bool add_pe) {
  TokenSequence ts;
  ts.tokens = fm.data;
  if (add_pe) ts.tokens += positional_encoding(fm.ndim, fm.grid_dims, fm.channels());
  ts.grid_dims = fm.grid_dims;
  ts.ndim = fm.ndim;
  ts.scale = fm.scale;
  ts.input_spacing = fm.input_spacing;
  ts.source = fm.source;
  ts.index_map.resize(static_cast<std::size_t>(fm.cell_count()));
  for (int c = 0; c < fm.cell_count(); ++c) ts.index_map[static_cast<std::size_t>(c)] = fm.grid_of(c);
  return ts;
}

FeatureMap untokenize(const TokenSequence& ts) {
  FeatureMap fm;
  fm.ndim = ts.ndim;
  fm.grid_dims = ts.grid_dims;
  fm.scale = ts.scale;
  fm.input_spacing = ts.input_spacing;
  fm.source = ts.source;
  if (static_cast<int>(ts.index_map.size()) != fm.cell_count() || ts.size() != fm.cell_count())
    throw ValidationError("token count does not match grid");
  fm.data.resize(ts.size(), ts.dim());
  for (int t = 0; t < ts.size(); ++t) fm.data.row(fm.cell(ts.index_map[static_cast<std::size_t>(t)])) = ts.tokens.row(t);
  return fm;
}

int oracle_channels(double width_mm, double period_mm) {
  if (!(width_mm > 0.0) || !(period_mm > 0.0)) throw ValidationError("oracle width and period must be positive");
  // Keep frequencies until the Gaussian spectrum weight drops below exp(-3.5^2 / 2).
  const double step = 2.0 * std::numbers::pi / period_mm;
  const int freqs = static_cast<int>(std::ceil(3.5 / (step * width_mm))) + 1;
  return 6 * freqs;
}

Eigen::MatrixXd oracle_descriptors(const std::vector<Vec3>& positions_mm, double width_mm, double period_mm,
                                   double gain) {
  const int channels = oracle_channels(width_mm, period_mm);
  const int freqs = channels / 6;
  const double step = 2.0 * std::numbers::pi / period_mm;
  std::vector<double> amp(static_cast<std::size_t>(freqs));
  double total = 0.0;
  for (int k = 0; k < freqs; ++k) {
    const double w = k * step * width_mm;
    amp[static_cast<std::size_t>(k)] = std::exp(-0.5 * w * w);
    total += 3.0 * amp[static_cast<std::size_t>(k)];
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(positions_mm.size()), channels);
  for (std::size_t i = 0; i < positions_mm.size(); ++i)
    for (int a = 0; a < 3; ++a)
      for (int k = 0; k < freqs; ++k) {
        const double s = std::sqrt(gain * amp[static_cast<std::size_t>(k)] / total);
        const double phase = k * step * positions_mm[i][a];
        out(static_cast<Eigen::Index>(i), a * 2 * freqs + 2 * k) = s * std::cos(phase);
        out(static_cast<Eigen::Index>(i), a * 2 * freqs + 2 * k + 1) = s * std::sin(phase);
      }
  return out;
}

namespace {

FeatureMap oracle_map(int ndim, const GridIndex& grid_dims, int scale, const std::array<double, 3>& spacing,
                      Modality source, const RigidPose& to_volume, double width, double period, double gain) {
  FeatureMap fm;
  fm.ndim = ndim;
  fm.grid_dims = grid_dims;
  fm.scale = scale;
  fm.input_spacing = spacing;
  fm.source = source;
  std::vector<Vec3> positions(static_cast<std::size_t>(fm.cell_count()));
  for (int c = 0; c < fm.cell_count(); ++c)
    positions[static_cast<std::size_t>(c)] = apply(to_volume, fm.position_mm(fm.grid_of(c)));
  fm.data = oracle_descriptors(positions, width, period, gain);
  return fm;
}

}  // namespace

FeaturePair oracle_features(const Frame2D& frame, const RigidPose& frame_to_volume, const OracleDescriptorConfig& cfg,
                            double period_mm) {
  const GridIndex dims{frame.dims[0], frame.dims[1], 1};
  const std::array<double, 3> spacing{frame.spacing[0], frame.spacing[1], 0.0};
  FeaturePair out;
  out.coarse = oracle_map(2, ceil_dims(dims, 2, 8), 8, spacing, Modality::kUltrasound, frame_to_volume,
                          cfg.coarse_width_mm, period_mm, cfg.gain);
  out.fine = oracle_map(2, ceil_dims(dims, 2, 4), 4, spacing, Modality::kUltrasound, frame_to_volume,
                        cfg.fine_width_mm, period_mm, cfg.gain);
  return out;
}

FeaturePair oracle_features(const Volume3D& volume, const OracleDescriptorConfig& cfg, double period_mm) {
  const GridIndex dims{volume.dims[0], volume.dims[1], volume.dims[2]};
  FeaturePair out;
  out.coarse = oracle_map(3, ceil_dims(dims, 3, 8), 8, volume.spacing, Modality::kCt, RigidPose::Identity(),
                          cfg.coarse_width_mm, period_mm, cfg.gain);
  out.fine = oracle_map(3, ceil_dims(dims, 3, 4), 4, volume.spacing, Modality::kCt, RigidPose::Identity(),
                        cfg.fine_width_mm, period_mm, cfg.gain);
  return out;
}

void append_tensors(const ExtractorWeights& w, const std::string& prefix, TensorBundle& bundle) {
  auto push = [&](const ConvLayer& l, const std::string& name) {
    NamedTensor k;
    k.name = prefix + name + ".kernel";
    k.shape = {l.out_channels, l.in_channels};
    for (int a = 0; a < w.ndim; ++a) k.shape.push_back(l.kernel);
    // Row-major (out, in, taps...) matches the row layout of ConvLayer::weights.
    k.values.reserve(static_cast<std::size_t>(l.weights.size()));
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) k.values.push_back(static_cast<float>(l.weights(r, c)));
    NamedTensor b;
    b.name = prefix + name + ".bias";
    b.shape = {l.out_channels};
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) b.values.push_back(static_cast<float>(l.bias[r]));
    bundle.tensors.push_back(std::move(k));
    bundle.tensors.push_back(std::move(b));
  };
  for (int s = 0; s < 3; ++s) push(w.stages[s], "stage" + std::to_string(s));
  push(w.fine_head, "fine_head");
  push(w.coarse_head, "coarse_head");
  bundle.meta[prefix + "ndim"] = w.ndim;
  bundle.meta[prefix + "nonlinearity"] = w.nonlinearity;
}

ExtractorWeights extractor_from_bundle(const TensorBundle& bundle, const std::string& prefix) {
  ExtractorWeights w;
  w.ndim = bundle.meta.at(prefix + "ndim").get<int>();
  w.nonlinearity = bundle.meta.value(prefix + "nonlinearity", true);
  auto pull = [&](const std::string& name, int stride) {
    const NamedTensor& k = bundle.get(prefix + name + ".kernel");
    const NamedTensor& b = bundle.get(prefix + name + ".bias");
    if (k.shape.size() != static_cast<std::size_t>(2 + w.ndim)) throw ValidationError("bad kernel rank for " + name);
    ConvLayer l;
    l.out_channels = k.shape[0];
    l.in_channels = k.shape[1];
    l.kernel = k.shape[2];
    l.stride = stride;
    const int cols = static_cast<int>(k.values.size()) / std::max(l.out_channels, 1);
    l.weights.resize(l.out_channels, cols);
    for (int r = 0; r < l.out_channels; ++r)
      for (int c = 0; c < cols; ++c) l.weights(r, c) = k.values[static_cast<std::size_t>(r) * cols + c];
    l.bias.resize(static_cast<Eigen::Index>(b.values.size()));
    for (std::size_t i = 0; i < b.values.size(); ++i) l.bias[static_cast<Eigen::Index>(i)] = b.values[i];
    return l;
  };
  for (int s = 0; s < 3; ++s) w.stages[s] = pull("stage" + std::to_string(s), 2);
  w.fine_head = pull("fine_head", 1);
  w.coarse_head = pull("coarse_head", 1);
  w.Validate();
  return w;
}

void write_extractor_weights(const std::filesystem::path& path, const ExtractorWeights& w) {
  TensorBundle bundle;
  append_tensors(w, "", bundle);
  write_tensor_bundle(path, bundle);
}

ExtractorWeights read_extractor_weights(const std::filesystem::path& path) {
  return extractor_from_bundle(read_tensor_bundle(path), "");
}

}  // namespace s2v
