#include "s2v/harness/gradcheck.hpp"

#include "s2v/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace s2v::harness {

namespace {

constexpr double kErrorFloor = 1e-6;
constexpr int kMaxDrawsPerInstance = 20;
// Draws whose second singular value falls below this fraction of the first are replaced: the
// pose is then so sensitive that central differences measure curvature, not slope.
constexpr double kMinSingularRatio = 0.1;

double loss_of_matches(const MatchSet& ms, const ChainInstance& inst) { return pose_loss(dwp(ms), inst.gt, inst.loss); }

double loss_of_probs(const ConfidenceMatrix& cm, const ChainInstance& inst) {
  const GumbelSample s = gumbel_sample_with_noise(cm, inst.us_positions, inst.ct_positions, inst.noise, inst.gumbel);
  return loss_of_matches(s.matches, inst);
}

double loss_of_scores(const Eigen::MatrixXd& scores, double temperature, const ChainInstance& inst) {
  ConfidenceMatrix cm;
  cm.scores = scores;
  cm.temperature = temperature;
  return loss_of_probs(dual_softmax(std::move(cm)), inst);
}

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kErrorFloor}); }

// Richardson-extrapolated central difference of f at every entry of x against the analytic
// gradient g: (4 D(h/2) - D(h)) / 3 cancels the h^2 truncation term.
double check_matrix(Eigen::MatrixXd x, const Eigen::MatrixXd& g, double h,
                    const std::function<double(const Eigen::MatrixXd&)>& f, long& entries) {
  double worst = 0.0;
  auto central = [&](Eigen::Index i, Eigen::Index j, double step) {
    const double x0 = x(i, j);
    x(i, j) = x0 + step;
    const double fp = f(x);
    x(i, j) = x0 - step;
    const double fm = f(x);
    x(i, j) = x0;
    return (fp - fm) / (2.0 * step);
  };
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double numeric = (4.0 * central(i, j, 0.5 * h) - central(i, j, h)) / 3.0;
      worst = std::max(worst, rel_error(g(i, j), numeric));
      ++entries;
    }
  return worst;
}

}  // namespace

double chain_loss(const ChainInstance& inst) {
  return loss_of_scores(score_matrix(inst.us_tokens, inst.ct_tokens, inst.temperature).scores, inst.temperature, inst);
}

ChainGradients chain_gradients(const ChainInstance& inst) {
  ChainGradients g;
  g.cm = dual_softmax(score_matrix(inst.us_tokens, inst.ct_tokens, inst.temperature));
  g.sample = gumbel_sample_with_noise(g.cm, inst.us_positions, inst.ct_positions, inst.noise, inst.gumbel);
  const DwpLoss dl = dwp_loss_grad(g.sample.matches, inst.gt, inst.loss);
  g.loss = dl.loss;
  g.matches = dl.grad;
  g.probs = gumbel_backward(g.cm, g.sample, inst.ct_positions, g.matches, inst.gumbel);
  g.scores = dual_softmax_backward(g.cm, g.probs);
  const TokenGradient tg = score_backward(inst.us_tokens, inst.ct_tokens, inst.temperature, g.scores);
  g.us_tokens = tg.us;
  g.ct_tokens = tg.ct;
  return g;
}

ChainInstance random_chain_instance(std::uint64_t seed) {
  Rng rng(seed);
  const int n = 6 + static_cast<int>(rng() % 7);
  const int m = 8 + static_cast<int>(rng() % 9);
  const int d = 4 + static_cast<int>(rng() % 5);

  ChainInstance inst;
  inst.temperature = 1.0;
  inst.ct_tokens.resize(m, d);
  for (Eigen::Index i = 0; i < inst.ct_tokens.size(); ++i) inst.ct_tokens.data()[i] = normal01(rng);
  inst.us_tokens.resize(n, d);
  for (int i = 0; i < n; ++i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(m));
    for (int c = 0; c < d; ++c) inst.us_tokens(i, c) = inst.ct_tokens(j, c) + 0.3 * normal01(rng);
  }
  for (int i = 0; i < n; ++i) inst.us_positions.emplace_back(uniform(rng, 0.0, 60.0), uniform(rng, 0.0, 60.0), 0.0);
  for (int j = 0; j < m; ++j)
    inst.ct_positions.emplace_back(uniform(rng, 0.0, 100.0), uniform(rng, 0.0, 100.0), uniform(rng, 0.0, 100.0));
  inst.gumbel.tau = 0.5;
  inst.gumbel.min_row_confidence = 0.0;
  inst.gumbel.add_noise = true;
  inst.noise = gumbel_noise(n, m, derive_seed(seed, 1));

  Vec3 axis(normal01(rng), normal01(rng), normal01(rng));
  axis.normalize();
  inst.gt = RigidPose::FromAxisAngle(axis, uniform(rng, 0.0, 0.5),
                                     Vec3(uniform(rng, 0.0, 40.0), uniform(rng, 0.0, 40.0), uniform(rng, 0.0, 40.0)));
  return inst;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json stage_list = nlohmann::json::array();
  for (const auto& s : stages) {
    stage_list.push_back({{"stage", s.name},
                          {"max_rel_error", s.max_rel_error},
                          {"entries", s.entries},
                          {"passed", s.max_rel_error <= tolerance}});
  }
  return {{"seed", seed},
          {"instances", instances},
          {"resampled", resampled},
          {"tolerance", tolerance},
          {"perfect_fit_max_grad", perfect_fit_max_grad},
          {"stages", stage_list},
          {"passed", passed}};
}

GradcheckReport gradcheck(std::uint64_t seed, const GradcheckSettings& settings) {
  if (settings.instances < 1) throw ValidationError("gradcheck needs at least one instance");
  if (!(settings.step > 0.0)) throw ValidationError("finite-difference step must be positive");
  GradcheckReport report;
  report.seed = seed;
  report.instances = settings.instances;
  report.tolerance = settings.rtol;
  report.stages = {{"score", 0.0, 0}, {"dual_softmax", 0.0, 0}, {"gumbel", 0.0, 0}, {"dwp", 0.0, 0}};
  const double h = settings.step;

  for (int k = 0; k < settings.instances; ++k) {
    ChainInstance inst;
    ChainGradients g;
    bool ok = false;
    for (int draw = 0; draw < kMaxDrawsPerInstance && !ok; ++draw) {
      inst = random_chain_instance(derive_seed(seed, static_cast<std::uint64_t>(k) * kMaxDrawsPerInstance + draw));
      try {
        if (k == 0) inst.gt = dwp(gumbel_sample_with_noise(dual_softmax(score_matrix(inst.us_tokens, inst.ct_tokens,
                                                                                     inst.temperature)),
                                                           inst.us_positions, inst.ct_positions, inst.noise, inst.gumbel)
                                      .matches);
        g = chain_gradients(inst);
        std::vector<Vec3> p, q;
        std::vector<double> w;
        for (const auto& mt : g.sample.matches.pairs) {
          p.push_back(mt.us_point);
          q.push_back(mt.ct_point);
          w.push_back(mt.weight);
        }
        const Vec3 sv = weighted_procrustes(p, q, w).singular_values;
        ok = sv[1] >= kMinSingularRatio * sv[0];
        if (!ok) ++report.resampled;
      } catch (const DegenerateConfiguration&) {
        ++report.resampled;
      } catch (const IllConditionedGradient&) {
        ++report.resampled;
      }
    }
    if (!ok) throw std::runtime_error("could not draw a well-conditioned gradcheck instance");

    if (k == 0) {
      double worst = 0.0;
      worst = std::max(worst, g.us_tokens.cwiseAbs().maxCoeff());
      worst = std::max(worst, g.ct_tokens.cwiseAbs().maxCoeff());
      worst = std::max(worst, g.scores.cwiseAbs().maxCoeff());
      worst = std::max(worst, g.probs.cwiseAbs().maxCoeff());
      report.perfect_fit_max_grad = worst;
    }

    auto& score = report.stages[0];
    score.max_rel_error = std::max(
        score.max_rel_error, check_matrix(inst.us_tokens, g.us_tokens, h,
                                          [&](const Eigen::MatrixXd& u) {
                                            ChainInstance p = inst;
                                            p.us_tokens = u;
                                            return chain_loss(p);
                                          },
                                          score.entries));
    score.max_rel_error = std::max(
        score.max_rel_error, check_matrix(inst.ct_tokens, g.ct_tokens, h,
                                          [&](const Eigen::MatrixXd& c) {
                                            ChainInstance p = inst;
                                            p.ct_tokens = c;
                                            return chain_loss(p);
                                          },
                                          score.entries));

    auto& ds = report.stages[1];
    ds.max_rel_error = std::max(
        ds.max_rel_error,
        check_matrix(g.cm.scores, g.scores, h,
                     [&](const Eigen::MatrixXd& s) { return loss_of_scores(s, inst.temperature, inst); }, ds.entries));

    // Log-space perturbation: d L / d log p = p * d L / d p.
    auto& gs = report.stages[2];
    const Eigen::MatrixXd log_p = g.cm.probs.array().log().matrix();
    const Eigen::MatrixXd g_log_p = g.cm.probs.cwiseProduct(g.probs);
    gs.max_rel_error = std::max(gs.max_rel_error, check_matrix(log_p, g_log_p, h,
                                                               [&](const Eigen::MatrixXd& lp) {
                                                                 ConfidenceMatrix cm = g.cm;
                                                                 cm.probs = lp.array().exp().matrix();
                                                                 return loss_of_probs(cm, inst);
                                                               },
                                                               gs.entries));

    // Match weights and both point sets, laid out as n x 7 (w, us xyz, ct xyz).
    auto& dw = report.stages[3];
    const MatchSet& ms = g.sample.matches;
    const auto n = static_cast<Eigen::Index>(ms.size());
    Eigen::MatrixXd x(n, 7), gx(n, 7);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& mt = ms.pairs[static_cast<std::size_t>(i)];
      x(i, 0) = mt.weight;
      gx(i, 0) = g.matches.weight[static_cast<std::size_t>(i)];
      for (int a = 0; a < 3; ++a) {
        x(i, 1 + a) = mt.us_point[a];
        gx(i, 1 + a) = g.matches.us_point[static_cast<std::size_t>(i)][a];
        x(i, 4 + a) = mt.ct_point[a];
        gx(i, 4 + a) = g.matches.ct_point[static_cast<std::size_t>(i)][a];
      }
    }
    dw.max_rel_error = std::max(dw.max_rel_error, check_matrix(x, gx, h,
                                                               [&](const Eigen::MatrixXd& v) {
                                                                 MatchSet p = ms;
                                                                 for (Eigen::Index i = 0; i < n; ++i) {
                                                                   auto& mt = p.pairs[static_cast<std::size_t>(i)];
                                                                   mt.weight = v(i, 0);
                                                                   mt.us_point = v.row(i).segment<3>(1).transpose();
                                                                   mt.ct_point = v.row(i).segment<3>(4).transpose();
                                                                 }
                                                                 return loss_of_matches(p, inst);
                                                               },
                                                               dw.entries));
  }

  report.passed = report.perfect_fit_max_grad <= 1e-9;
  for (const auto& s : report.stages) report.passed = report.passed && s.max_rel_error <= report.tolerance;
  return report;
}

}  // namespace s2v::harness
