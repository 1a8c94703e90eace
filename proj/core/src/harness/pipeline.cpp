#include "s2v/harness/pipeline.hpp"

#include "s2v/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace s2v::harness {

namespace {

constexpr std::uint64_t kGumbelStream = 0x5000;
constexpr std::uint64_t kRansacStream = 0x6000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::string_view method_tag(Method m) {
  switch (m) {
    case Method::kBaselineMi: return "baseline-mi";
    case Method::kLoftrRansac: return "loftr-ransac";
    case Method::kLoftrDwp: return "loftr-dwp";
    case Method::kLoftrDwpMi: return "loftr-dwp+mi";
  }
  return "?";
}

std::string_view method_label(Method m) {
  switch (m) {
    case Method::kBaselineMi: return "Baseline";
    case Method::kLoftrRansac: return "LoFTR-RANSAC";
    case Method::kLoftrDwp: return "LoFTR-DWP";
    case Method::kLoftrDwpMi: return "LoFTR-DWP + Baseline";
  }
  return "?";
}

Method parse_method(std::string_view tag) {
  for (Method m : kAllMethods)
    if (method_tag(m) == tag) return m;
  throw ValidationError("unknown method '" + std::string(tag) +
                        "' (expected baseline-mi, loftr-ransac, loftr-dwp or loftr-dwp+mi)");
}

struct Pipeline::Coarse {
  FeaturePair us;
  FeaturePair ct;
  ConfidenceMatrix cm;
  std::vector<Vec3> us_pos;
  std::vector<Vec3> ct_pos;
};

Pipeline::Pipeline(Config cfg) : cfg_(std::move(cfg)) {
  cfg_.Validate();
  if (cfg_.features.mode == FeatureMode::kLearned) {
    const auto& fs = cfg_.features;
    us_weights_ = fs.us_weights.empty() ? random_extractor_weights(2, fs.extractor, derive_seed(fs.weight_seed, 2))
                                        : read_extractor_weights(fs.us_weights);
    ct_weights_ = fs.ct_weights.empty() ? random_extractor_weights(3, fs.extractor, derive_seed(fs.weight_seed, 3))
                                        : read_extractor_weights(fs.ct_weights);
    if (us_weights_.ndim != 2 || ct_weights_.ndim != 3) throw ValidationError("extractor weights have the wrong rank");
    if (us_weights_.coarse_channels() != ct_weights_.coarse_channels() ||
        us_weights_.fine_channels() != ct_weights_.fine_channels())
      throw ValidationError("US and CT extractors must produce matching descriptor sizes");
    const int dim = us_weights_.coarse_channels();
    attention_ = cfg_.attention.weights.empty()
                     ? random_attention_weights(dim, cfg_.attention.layers, cfg_.attention.weight_seed)
                     : read_attention_weights(cfg_.attention.weights);
    if (attention_.dim != dim) throw ValidationError("attention width does not match the coarse descriptors");
  }
}

Pipeline::Coarse Pipeline::coarse_stage(const CaseInput& in) const {
  Coarse c;
  TokenSequence us_tokens, ct_tokens;
  if (cfg_.features.mode == FeatureMode::kOracle) {
    const auto& oc = cfg_.features.oracle;
    const double period = oc.period_mm > 0.0 ? oc.period_mm : 2.0 * in.volume->extent_mm().maxCoeff();
    c.us = oracle_features(*in.frame, in.gt, oc, period);
    c.ct = oracle_features(*in.volume, oc, period);
    us_tokens = tokenize(c.us.coarse, false);
    ct_tokens = tokenize(c.ct.coarse, false);
    const auto attention = zero_attention_weights(us_tokens.dim(), cfg_.attention.layers);
    std::tie(us_tokens, ct_tokens) = loftr_transform(us_tokens, ct_tokens, attention);
  } else {
    c.us = extract_features(*in.frame, us_weights_);
    c.ct = extract_features(*in.volume, ct_weights_);
    us_tokens = tokenize(c.us.coarse, cfg_.features.positional_encoding);
    ct_tokens = tokenize(c.ct.coarse, cfg_.features.positional_encoding);
    std::tie(us_tokens, ct_tokens) = loftr_transform(us_tokens, ct_tokens, attention_);
  }
  c.cm = dual_softmax(score_matrix(us_tokens, ct_tokens, cfg_.matching.temperature));
  c.us_pos = token_positions(us_tokens);
  c.ct_pos = token_positions(ct_tokens);
  return c;
}

std::vector<CaseRecord> Pipeline::run(const CaseInput& in, std::span<const Method> methods,
                                      CaseArtifacts* artifacts) const {
  if (in.volume == nullptr || in.frame == nullptr) throw ValidationError("case input is missing its images");
  const auto wants = [&](Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  const bool need_coarse = wants(Method::kLoftrRansac) || wants(Method::kLoftrDwp) || wants(Method::kLoftrDwpMi);
  const bool need_dwp = wants(Method::kLoftrDwp) || wants(Method::kLoftrDwpMi);
  const auto& mc = cfg_.matching;
  const FineRefineOptions fine{mc.window, mc.fine_temperature};
  MiConfig mi = cfg_.mi;
  mi.record_trace = artifacts != nullptr;

  std::map<Method, CaseRecord> out;
  auto record = [&](Method m, const RigidPose& pose, double runtime, int matches) {
    CaseRecord r;
    r.case_id = in.case_id;
    r.method = m;
    r.pose = pose;
    r.error = pose_error(pose, in.gt, cfg_.loose_threshold, cfg_.strict_threshold);
    r.runtime_s = runtime;
    r.match_count = matches;
    out[m] = r;
  };
  auto fail = [&](Method m, const std::string& why, double runtime) {
    CaseRecord r;
    r.case_id = in.case_id;
    r.method = m;
    r.error = kFailureError;
    r.runtime_s = runtime;
    r.failed = true;
    r.failure = why;
    out[m] = r;
  };

  if (wants(Method::kBaselineMi)) {
    const auto t0 = Clock::now();
    try {
      MiResult res = mi_refine(*in.volume, *in.frame, center_aligning_pose(*in.volume, *in.frame), mi);
      record(Method::kBaselineMi, res.pose, seconds_since(t0), 0);
      if (artifacts) artifacts->mi_baseline = std::move(res);
    } catch (const std::exception& e) {
      fail(Method::kBaselineMi, e.what(), seconds_since(t0));
    }
  }

  if (need_coarse) {
    const auto t0 = Clock::now();
    std::optional<Coarse> coarse;
    std::string coarse_error;
    try {
      coarse = coarse_stage(in);
    } catch (const std::exception& e) {
      coarse_error = e.what();
    }
    const double coarse_time = seconds_since(t0);
    if (coarse && artifacts) artifacts->confidence = coarse->cm;

    if (wants(Method::kLoftrRansac)) {
      const auto t1 = Clock::now();
      try {
        if (!coarse) throw std::runtime_error(coarse_error);
        MatchSet hard = hard_matches(coarse->cm, mc.threshold, coarse->us_pos, coarse->ct_pos);
        if (mc.fine_refine) hard = fine_refine_all(hard, coarse->us.fine, coarse->ct.fine, fine);
        RansacOptions ro;
        ro.iterations = cfg_.ransac.iterations;
        ro.inlier_tol_mm = cfg_.ransac.inlier_tol_mm;
        ro.seed = derive_seed(cfg_.seed, kRansacStream + static_cast<std::uint64_t>(in.case_id));
        ro.record_trace = artifacts != nullptr;
        RansacResult res = ransac_pose(hard, ro);
        record(Method::kLoftrRansac, res.pose, coarse_time + seconds_since(t1), static_cast<int>(hard.size()));
        if (artifacts) {
          artifacts->hard_matches = std::move(hard);
          artifacts->ransac = std::move(res);
        }
      } catch (const std::exception& e) {
        fail(Method::kLoftrRansac, e.what(), coarse_time + seconds_since(t1));
      }
    }

    if (need_dwp) {
      const auto t1 = Clock::now();
      std::optional<RigidPose> dwp_pose;
      int count = 0;
      try {
        if (!coarse) throw std::runtime_error(coarse_error);
        GumbelOptions go;
        go.tau = mc.tau;
        go.seed = derive_seed(cfg_.seed, kGumbelStream + static_cast<std::uint64_t>(in.case_id));
        go.add_noise = mc.gumbel_noise;
        go.min_row_confidence = mc.min_row_confidence;
        go.straight_through = mc.straight_through;
        MatchSet soft = gumbel_sample(coarse->cm, coarse->us_pos, coarse->ct_pos, go).matches;
        if (mc.fine_refine) soft = fine_refine_all(soft, coarse->us.fine, coarse->ct.fine, fine);
        count = static_cast<int>(soft.size());
        dwp_pose = dwp(soft);
        if (artifacts) artifacts->soft_matches = std::move(soft);
      } catch (const std::exception& e) {
        coarse_error = e.what();
      }
      const double dwp_time = coarse_time + seconds_since(t1);
      if (wants(Method::kLoftrDwp)) {
        if (dwp_pose) record(Method::kLoftrDwp, *dwp_pose, dwp_time, count);
        else fail(Method::kLoftrDwp, coarse_error, dwp_time);
      }
      if (wants(Method::kLoftrDwpMi)) {
        const auto t2 = Clock::now();
        try {
          if (!dwp_pose) throw std::runtime_error(coarse_error);
          MiResult res = mi_refine(*in.volume, *in.frame, *dwp_pose, mi);
          record(Method::kLoftrDwpMi, res.pose, dwp_time + seconds_since(t2), count);
          if (artifacts) artifacts->mi_dwp = std::move(res);
        } catch (const std::exception& e) {
          fail(Method::kLoftrDwpMi, e.what(), dwp_time + seconds_since(t2));
        }
      }
    }
  }

  std::vector<CaseRecord> records;
  for (Method m : methods) records.push_back(out.at(m));
  return records;
}

CaseRecord Pipeline::run_case(const CaseInput& in, Method method) const {
  const std::array<Method, 1> one{method};
  return run(in, one).front();
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<CaseRecord> evaluate_dataset(const Dataset& ds, const Pipeline& pipeline, std::span<const Method> methods) {
  std::vector<Volume3D> volumes;
  volumes.reserve(ds.volumes.size());
  for (std::size_t v = 0; v < ds.volumes.size(); ++v) volumes.push_back(read_volume(ds.volume_path(static_cast<int>(v))));

  std::vector<std::vector<CaseRecord>> per_case(ds.cases.size());
  parallel_for(static_cast<int>(ds.cases.size()), pipeline.config().threads, [&](int i) {
    const CaseEntry& c = ds.cases[static_cast<std::size_t>(i)];
    const Frame2D frame = read_frame(ds.frame_path(c));
    CaseInput in;
    in.case_id = c.id;
    in.volume = &volumes[static_cast<std::size_t>(c.volume)];
    in.frame = &frame;
    in.gt = c.gt;
    per_case[static_cast<std::size_t>(i)] = pipeline.run(in, methods);
  });

  std::vector<CaseRecord> records;
  for (auto& rs : per_case) records.insert(records.end(), rs.begin(), rs.end());
  return records;
}

void write_records_csv(const std::filesystem::path& path, std::span<const CaseRecord> records, bool with_runtime) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "case_id,method,rotation_deg,translation_mm,success_15,success_5,match_count,failed";
  if (with_runtime) out << ",runtime_s";
  out << '\n' << std::setprecision(17);
  for (const auto& r : records) {
    out << r.case_id << ',' << method_tag(r.method) << ',' << r.error.rotation_deg << ',' << r.error.translation_mm << ','
        << int{r.error.success_15} << ',' << int{r.error.success_5} << ',' << r.match_count << ',' << int{r.failed};
    if (with_runtime) out << ',' << r.runtime_s;
    out << '\n';
  }
}

std::vector<CaseRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("case_id,method,rotation_deg,translation_mm", 0) != 0)
    throw ValidationError("unexpected records header in " + path.string());
  std::vector<CaseRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 8) throw ValidationError("short records row: " + line);
    CaseRecord r;
    try {
      r.case_id = std::stoi(f[0]);
      r.method = parse_method(f[1]);
      r.error.rotation_deg = std::stod(f[2]);
      r.error.translation_mm = std::stod(f[3]);
      r.error.success_15 = f[4] == "1";
      r.error.success_5 = f[5] == "1";
      r.match_count = std::stoi(f[6]);
      r.failed = f[7] == "1";
      if (f.size() > 8) r.runtime_s = std::stod(f[8]);
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ValidationError*>(&e)) throw;
      throw ValidationError("bad records row: " + line);
    }
    if (r.error.rotation_deg < 0.0 || r.error.translation_mm < 0.0) throw ValidationError("negative error in " + line);
    records.push_back(r);
  }
  return records;
}

}  // namespace s2v::harness
