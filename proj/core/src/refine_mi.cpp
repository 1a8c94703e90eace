#include "s2v/refine_mi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>

namespace s2v {

void MiConfig::Validate() const {
  if (bins < 8) throw ValidationError("MI needs at least 8 bins");
  if (max_iterations < 1) throw ValidationError("max_iterations must be positive");
  if (!(step_deg > 0.0) || !(step_mm > 0.0)) throw ValidationError("simplex steps must be positive");
  if (!(convergence_tol > 0.0)) throw ValidationError("convergence tolerance must be positive");
  if (restarts < 0) throw ValidationError("restarts must be >= 0");
}

namespace {

// Bin index per pixel; empty when the image is constant.
std::vector<int> bin_indices(const Frame2D& f, int bins) {
  const auto [lo_it, hi_it] = std::minmax_element(f.data.begin(), f.data.end());
  const double lo = *lo_it;
  const double range = static_cast<double>(*hi_it) - lo;
  if (!(range > 0.0)) return {};
  std::vector<int> idx(f.data.size());
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const int b = static_cast<int>((f.data[i] - lo) / range * bins);
    idx[i] = std::clamp(b, 0, bins - 1);
  }
  return idx;
}

}  // namespace

double entropy(const Frame2D& frame, int bins) {
  if (bins < 8) throw ValidationError("entropy needs at least 8 bins");
  const auto idx = bin_indices(frame, bins);
  if (idx.empty()) return 0.0;
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  for (int b : idx) hist[static_cast<std::size_t>(b)] += 1.0;
  const double n = static_cast<double>(idx.size());
  double h = 0.0;
  for (double c : hist)
    if (c > 0.0) h -= c / n * std::log(c / n);
  return h;
}

double mutual_information(const Frame2D& a, const Frame2D& b, int bins) {
  if (a.dims != b.dims) throw ValidationError("MI needs frames of equal dims");
  if (bins < 8) throw ValidationError("MI needs at least 8 bins");
  const auto ia = bin_indices(a, bins);
  const auto ib = bin_indices(b, bins);
  if (ia.empty() || ib.empty()) return 0.0;

  const auto nb = static_cast<std::size_t>(bins);
  std::vector<double> joint(nb * nb, 0.0), pa(nb, 0.0), pb(nb, 0.0);
  for (std::size_t i = 0; i < ia.size(); ++i) {
    joint[static_cast<std::size_t>(ia[i]) * nb + static_cast<std::size_t>(ib[i])] += 1.0;
    pa[static_cast<std::size_t>(ia[i])] += 1.0;
    pb[static_cast<std::size_t>(ib[i])] += 1.0;
  }
  const double n = static_cast<double>(ia.size());
  double mi = 0.0;
  for (std::size_t x = 0; x < nb; ++x) {
    if (pa[x] == 0.0) continue;
    for (std::size_t y = 0; y < nb; ++y) {
      const double c = joint[x * nb + y];
      if (c == 0.0) continue;
      // p(x,y) log(p(x,y) / (p(x) p(y))) with counts: c/n * log(c n / (a b))
      mi += c / n * std::log(c * n / (pa[x] * pb[y]));
    }
  }
  return std::max(mi, 0.0);
}

RigidPose euler_offset(const MiParams& params, const Vec3& frame_center_mm) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const Mat3 r = (Eigen::AngleAxisd(params[0] * kDeg, Vec3::UnitZ()) * Eigen::AngleAxisd(params[1] * kDeg, Vec3::UnitY()) *
                  Eigen::AngleAxisd(params[2] * kDeg, Vec3::UnitX()))
                     .toRotationMatrix();
  RigidPose p;
  p.rotation = r;
  p.translation = frame_center_mm - r * frame_center_mm + Vec3(params[3], params[4], params[5]);
  return p;
}

MiResult mi_refine(const Volume3D& vol, const Frame2D& frame, const RigidPose& init, const MiConfig& cfg) {
  cfg.Validate();
  const Vec3 center = frame.center_mm();
  MiResult result;

  auto pose_of = [&](const MiParams& x) { return compose(init, euler_offset(x, center)); };
  auto cost = [&](const MiParams& x) {
    ++result.evaluations;
    return -mutual_information(extract_slice(vol, pose_of(x), frame.dims, frame.spacing), frame, cfg.bins);
  };

  constexpr int kDim = 6;
  MiParams best_x{};
  double best_f = cost(best_x);
  result.initial_mi = -best_f;
  auto note = [&](const MiParams& x, double fx) {
    if (fx < best_f) {
      best_f = fx;
      best_x = x;
    }
  };

  // One Nelder-Mead run on a fresh simplex around the current best point.
  auto run = [&]() {
    std::array<MiParams, kDim + 1> simplex;
    std::array<double, kDim + 1> f{};
    simplex.fill(best_x);
    f[0] = best_f;
    for (int v = 1; v <= kDim; ++v) {
      simplex[v][v - 1] += v - 1 < 3 ? cfg.step_deg : cfg.step_mm;
      f[v] = cost(simplex[v]);
      note(simplex[v], f[v]);
    }

    std::array<int, kDim + 1> order{};
    int iteration = 0;
    for (; iteration < cfg.max_iterations; ++iteration) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });
      const int lo = order[0], hi = order[kDim], second = order[kDim - 1];
      if (cfg.record_trace) result.trace.push_back({result.iterations + iteration, -f[lo], simplex[lo]});
      if (std::abs(f[hi] - f[lo]) < cfg.convergence_tol) break;

      MiParams centroid{};
      for (int v = 0; v <= kDim; ++v) {
        if (v == hi) continue;
        for (int d = 0; d < kDim; ++d) centroid[d] += simplex[v][d] / kDim;
      }
      auto along = [&](double t) {
        MiParams x{};
        for (int d = 0; d < kDim; ++d) x[d] = centroid[d] + t * (simplex[hi][d] - centroid[d]);
        return x;
      };

      const MiParams xr = along(-1.0);
      const double fr = cost(xr);
      note(xr, fr);
      if (fr < f[lo]) {
        const MiParams xe = along(-2.0);
        const double fe = cost(xe);
        note(xe, fe);
        if (fe < fr) {
          simplex[hi] = xe;
          f[hi] = fe;
        } else {
          simplex[hi] = xr;
          f[hi] = fr;
        }
        continue;
      }
      if (fr < f[second]) {
        simplex[hi] = xr;
        f[hi] = fr;
        continue;
      }
      const bool outside = fr < f[hi];
      const MiParams xc = along(outside ? -0.5 : 0.5);
      const double fc = cost(xc);
      note(xc, fc);
      if (fc < (outside ? fr : f[hi])) {
        simplex[hi] = xc;
        f[hi] = fc;
        continue;
      }
      for (int v = 0; v <= kDim; ++v) {
        if (v == lo) continue;
        for (int d = 0; d < kDim; ++d) simplex[v][d] = simplex[lo][d] + 0.5 * (simplex[v][d] - simplex[lo][d]);
        f[v] = cost(simplex[v]);
        note(simplex[v], f[v]);
      }
    }
    result.iterations += iteration;
    if (iteration >= cfg.max_iterations) result.hit_iteration_limit = true;
  };

  run();
  for (int r = 0; r < cfg.restarts; ++r) {
    const double before = best_f;
    run();
    if (!(best_f < before)) break;
  }

  result.pose = pose_of(best_x);
  result.final_mi = -best_f;
  return result;
}

void write_mi_trace(const std::filesystem::path& path, const MiResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,mi,rot_z_deg,rot_y_deg,rot_x_deg,tx_mm,ty_mm,tz_mm\n" << std::setprecision(10);
  for (const auto& row : result.trace) {
    out << row.iteration << ',' << row.mi;
    for (double p : row.params) out << ',' << p;
    out << '\n';
  }
}

}  // namespace s2v
