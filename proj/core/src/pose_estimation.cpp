#include "s2v/pose_estimation.hpp"

#include "s2v/rng.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <fstream>

namespace s2v {

namespace {

constexpr double kMinTotalWeight = 1e-9;
constexpr double kRankTol = 1e-10;
constexpr double kConditionTol = 1e-8;

}  // namespace

ProcrustesSolution weighted_procrustes(std::span<const Vec3> us_points, std::span<const Vec3> ct_points,
                                       std::span<const double> weights) {
  const std::size_t n = us_points.size();
  if (ct_points.size() != n || weights.size() != n) throw ValidationError("point and weight counts differ");
  if (n < 3) throw DegenerateConfiguration("too few pairs: need at least 3");

  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw ValidationError("weights must be finite and non-negative");
    total += w;
  }
  if (!(total > kMinTotalWeight)) throw DegenerateConfiguration("zero total weight");

  ProcrustesSolution s;
  for (std::size_t i = 0; i < n; ++i) {
    s.us_centroid += weights[i] / total * us_points[i];
    s.ct_centroid += weights[i] / total * ct_points[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    s.cross_covariance += weights[i] / total * (us_points[i] - s.us_centroid) * (ct_points[i] - s.ct_centroid).transpose();
  }

  Eigen::JacobiSVD<Mat3> svd(s.cross_covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  s.u = svd.matrixU();
  s.v = svd.matrixV();
  s.singular_values = svd.singularValues();
  if (!(s.singular_values[1] > kRankTol * s.singular_values[0]) || !(s.singular_values[0] > 0.0))
    throw DegenerateConfiguration("degenerate configuration: cross-covariance rank < 2");

  s.reflection_sign = (s.v * s.u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 d = Vec3(1.0, 1.0, s.reflection_sign).asDiagonal();
  s.pose.rotation = s.v * d * s.u.transpose();
  s.pose.translation = s.ct_centroid - s.pose.rotation * s.us_centroid;
  return s;
}

namespace {

struct PairArrays {
  std::vector<Vec3> p, q;
  std::vector<double> w;
};

PairArrays unpack(const MatchSet& matches) {
  PairArrays a;
  a.p.reserve(matches.size());
  a.q.reserve(matches.size());
  a.w.reserve(matches.size());
  for (const auto& m : matches.pairs) {
    a.p.push_back(m.us_point);
    a.q.push_back(m.ct_point);
    a.w.push_back(m.weight);
  }
  return a;
}

}  // namespace

RigidPose dwp(const MatchSet& matches) {
  const PairArrays a = unpack(matches);
  return weighted_procrustes(a.p, a.q, a.w).pose;
}

double pose_loss(const RigidPose& est, const RigidPose& gt, const PoseLossConfig& cfg) {
  const double s2 = cfg.translation_scale_mm * cfg.translation_scale_mm;
  return (est.rotation - gt.rotation).squaredNorm() + cfg.lambda * (est.translation - gt.translation).squaredNorm() / s2;
}

DwpLoss dwp_loss_grad(const MatchSet& matches, const RigidPose& gt, const PoseLossConfig& cfg) {
  const PairArrays a = unpack(matches);
  const ProcrustesSolution s = weighted_procrustes(a.p, a.q, a.w);
  const Mat3& r = s.pose.rotation;
  const Vec3& t = s.pose.translation;
  const double s2 = cfg.translation_scale_mm * cfg.translation_scale_mm;

  DwpLoss out;
  out.pose = s.pose;
  out.loss = pose_loss(s.pose, gt, cfg);

  // Loss gradient with respect to R and t, folding in t = q - R p.
  const Vec3 g_t = 2.0 * cfg.lambda * (t - gt.translation) / s2;
  const Mat3 g_r = 2.0 * (r - gt.rotation) - g_t * s.us_centroid.transpose();

  // R maximizes tr(R H), so R H = V diag(lambda) V^T stays symmetric. Differentiating that
  // condition with dR = Omega R gives Omega_kl (lambda_k + lambda_l) = -(V^T (R dH - dH^T R^T) V)_kl.
  const Vec3 lambda(s.singular_values[0], s.singular_values[1], s.reflection_sign * s.singular_values[2]);
  const Mat3 a_tilde = s.v.transpose() * (g_r * r.transpose()) * s.v;
  Mat3 c = Mat3::Zero();
  for (int k = 0; k < 3; ++k)
    for (int l = 0; l < 3; ++l) {
      if (k == l) continue;
      const double denom = lambda[k] + lambda[l];
      if (std::abs(denom) < kConditionTol * s.singular_values[0])
        throw IllConditionedGradient("rotation derivative is ill-conditioned (lambda_k + lambda_l ~ 0)");
      c(k, l) = a_tilde(k, l) / denom;
    }
  const Mat3 e = s.v * c * s.v.transpose();
  const Mat3 g_h = -r.transpose() * (e - e.transpose());

  const Vec3 g_pbar = -r.transpose() * g_t - g_h * s.ct_centroid;
  const Vec3 g_qbar = g_t - g_h.transpose() * s.us_centroid;

  const std::size_t n = a.p.size();
  double total = 0.0;
  for (double w : a.w) total += w;
  std::vector<double> g_what(n);
  double mean = 0.0;
  out.grad.weight.resize(n);
  out.grad.us_point.resize(n);
  out.grad.ct_point.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w_hat = a.w[i] / total;
    g_what[i] = a.p[i].dot(g_h * a.q[i]) + g_pbar.dot(a.p[i]) + g_qbar.dot(a.q[i]);
    mean += w_hat * g_what[i];
    out.grad.us_point[i] = w_hat * (g_h * a.q[i] + g_pbar);
    out.grad.ct_point[i] = w_hat * (g_h.transpose() * a.p[i] + g_qbar);
  }
  for (std::size_t i = 0; i < n; ++i) out.grad.weight[i] = (g_what[i] - mean) / total;
  return out;
}

RansacResult ransac_pose(const MatchSet& matches, const RansacOptions& opts) {
  const std::size_t n = matches.size();
  if (n < 3) throw DegenerateConfiguration("too few pairs: need at least 3");
  if (opts.iterations < 1) throw ValidationError("RANSAC needs at least one iteration");
  if (!(opts.inlier_tol_mm > 0.0)) throw ValidationError("RANSAC inlier tolerance must be positive");

  const PairArrays a = unpack(matches);
  const double tol2 = opts.inlier_tol_mm * opts.inlier_tol_mm;
  const std::vector<double> uniform3(3, 1.0);

  RansacResult best;
  best.inlier_count = 0;
  RigidPose best_pose;
  for (int it = 0; it < opts.iterations; ++it) {
    Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(it)));
    std::size_t idx[3];
    idx[0] = rng() % n;
    do idx[1] = rng() % n; while (idx[1] == idx[0]);
    do idx[2] = rng() % n; while (idx[2] == idx[0] || idx[2] == idx[1]);

    const Vec3 p[3] = {a.p[idx[0]], a.p[idx[1]], a.p[idx[2]]};
    const Vec3 q[3] = {a.q[idx[0]], a.q[idx[1]], a.q[idx[2]]};
    RigidPose hypothesis;
    try {
      hypothesis = weighted_procrustes(p, q, uniform3).pose;
    } catch (const DegenerateConfiguration&) {
      if (opts.record_trace) best.trace.push_back(-1);
      continue;
    }
    int count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if ((apply(hypothesis, a.p[i]) - a.q[i]).squaredNorm() < tol2) ++count;
    if (opts.record_trace) best.trace.push_back(count);
    if (count > best.inlier_count) {
      best.inlier_count = count;
      best_pose = hypothesis;
    }
  }
  if (best.inlier_count < 3) throw DegenerateConfiguration("no hypothesis with at least 3 inliers");

  std::vector<Vec3> ip, iq;
  for (std::size_t i = 0; i < n; ++i) {
    if ((apply(best_pose, a.p[i]) - a.q[i]).squaredNorm() < tol2) {
      best.inliers.push_back(static_cast<int>(i));
      ip.push_back(a.p[i]);
      iq.push_back(a.q[i]);
    }
  }
  const std::vector<double> uniform(ip.size(), 1.0);
  try {
    best.pose = weighted_procrustes(ip, iq, uniform).pose;
  } catch (const DegenerateConfiguration&) {
    best.pose = best_pose;
  }
  return best;
}

void write_ransac_trace(const std::filesystem::path& path, const RansacResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,inliers\n";
  for (std::size_t i = 0; i < result.trace.size(); ++i) out << i << ',' << result.trace[i] << '\n';
}

}  // namespace s2v
