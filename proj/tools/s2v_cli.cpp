// s2v command-line tool: dataset generation, registration, evaluation and diagnostics.
#include "s2v/harness/config.hpp"
#include "s2v/harness/dataset.hpp"
#include "s2v/harness/distribution.hpp"
#include "s2v/harness/gradcheck.hpp"
#include "s2v/harness/pipeline.hpp"
#include "s2v/harness/stats.hpp"
#include "s2v/harness/toy_train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace s2v;
using namespace s2v::harness;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
};

Config load(const Globals& g) {
  Config cfg = g.config_path.empty() ? Config{} : load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.Validate();
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

nlohmann::json record_json(const CaseRecord& r) {
  nlohmann::json j = {{"case_id", r.case_id},
                      {"method", method_tag(r.method)},
                      {"rotation_deg", r.error.rotation_deg},
                      {"translation_mm", r.error.translation_mm},
                      {"success_15", r.error.success_15},
                      {"success_5", r.error.success_5},
                      {"match_count", r.match_count},
                      {"failed", r.failed}};
  if (r.failed) j["failure"] = r.failure;
  else j["pose"] = pose_to_json(r.pose);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slice-to-volume registration toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--config", g.config_path, "Config JSON; missing keys keep their defaults")->check(CLI::ExistingFile);

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "Synthetic phantom datasets");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("gen", "Generate volumes, slices, gt poses and a manifest");
  fs::path gen_out;
  std::optional<int> gen_cases;
  std::optional<double> gen_min_rot, gen_max_rot, gen_max_trans;
  bool gen_clean = false;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n-cases", gen_cases, "Number of cases");
  gen->add_option("--min-rotation", gen_min_rot, "Smallest gt rotation angle (deg)");
  gen->add_option("--max-rotation", gen_max_rot, "Largest gt rotation angle (deg)");
  gen->add_option("--max-translation", gen_max_trans, "Largest per-axis center offset (mm)");
  gen->add_flag("--clean", gen_clean, "Skip the ultrasound degradation");

  // register
  auto* reg = app.add_subcommand("register", "Register one dataset case and write its artifacts");
  std::string reg_method;
  fs::path reg_dataset, reg_out;
  int reg_case = 0;
  reg->add_option("--method", reg_method, "baseline-mi | loftr-ransac | loftr-dwp | loftr-dwp+mi")->required();
  reg->add_option("--dataset", reg_dataset, "Dataset directory")->required();
  reg->add_option("--case", reg_case, "Case id");
  reg->add_option("--out", reg_out, "Output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Run methods over a dataset and write summary statistics");
  fs::path ev_dataset, ev_out;
  std::vector<std::string> ev_methods;
  bool ev_runtime = false;
  ev->add_option("--dataset", ev_dataset, "Dataset directory")->required();
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--methods", ev_methods, "Subset of methods (default: all four)")->delimiter(',');
  ev->add_flag("--with-runtime", ev_runtime, "Add wall-clock runtime to records.csv (not deterministic)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the differentiable chain");
  std::optional<int> gc_instances;
  fs::path gc_out;
  gc->add_option("--instances", gc_instances, "Number of random instances");
  gc->add_option("--out", gc_out, "Write the JSON report here");

  // train-demo
  auto* tr = app.add_subcommand("train-demo", "Toy end-to-end training of a token projection");
  std::optional<int> tr_iterations;
  std::optional<double> tr_lr;
  fs::path tr_out;
  tr->add_option("--iterations", tr_iterations, "Gradient steps");
  tr->add_option("--learning-rate", tr_lr, "Step size");
  tr->add_option("--out", tr_out, "Loss curve CSV")->required();

  // export-dist
  auto* ex = app.add_subcommand("export-dist", "Error distribution data (CSV, KDE JSON, SVG)");
  fs::path ex_records, ex_out;
  ex->add_option("--records", ex_records, "records.csv written by eval")->required()->check(CLI::ExistingFile);
  ex->add_option("--out", ex_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    Config cfg = load(g);

    if (*gen) {
      DatasetConfig dc = cfg.dataset;
      if (gen_cases) dc.n_cases = *gen_cases;
      if (gen_min_rot) dc.min_rotation_deg = *gen_min_rot;
      if (gen_max_rot) dc.max_rotation_deg = *gen_max_rot;
      if (gen_max_trans) dc.max_translation_mm = *gen_max_trans;
      if (gen_clean) dc.degrade = false;
      const Dataset ds = generate_dataset(gen_out, cfg.seed, dc);
      std::printf("wrote %zu cases over %zu volumes to %s\n", ds.cases.size(), ds.volumes.size(), gen_out.c_str());
      return kExitOk;
    }

    if (*reg) {
      const Method method = parse_method(reg_method);
      const Dataset ds = load_dataset(reg_dataset);
      const CaseEntry* entry = nullptr;
      for (const auto& c : ds.cases)
        if (c.id == reg_case) entry = &c;
      if (entry == nullptr) throw ValidationError("dataset has no case " + std::to_string(reg_case));
      const Pipeline pipeline(cfg);
      const Volume3D vol = read_volume(ds.volume_path(entry->volume));
      const Frame2D frame = read_frame(ds.frame_path(*entry));
      ensure_dir(reg_out);
      CaseArtifacts art;
      const std::array<Method, 1> one{method};
      const CaseRecord rec = pipeline.run({entry->id, &vol, &frame, entry->gt}, one, &art).front();
      write_json(reg_out / "record.json", record_json(rec));
      if (!rec.failed) write_pose(reg_out / "pose.json", rec.pose);
      if (art.confidence) write_confidence(reg_out / "confidence", *art.confidence);
      if (art.hard_matches) write_matches_csv(reg_out / "matches_hard.csv", *art.hard_matches);
      if (art.soft_matches) write_matches_csv(reg_out / "matches_soft.csv", *art.soft_matches);
      if (art.ransac) write_ransac_trace(reg_out / "ransac_trace.csv", *art.ransac);
      if (art.mi_baseline) write_mi_trace(reg_out / "mi_trace.csv", *art.mi_baseline);
      if (art.mi_dwp) write_mi_trace(reg_out / "mi_trace.csv", *art.mi_dwp);
      std::printf("%s case %d: rotation %.4f deg, translation %.4f mm%s\n", std::string(method_tag(method)).c_str(),
                  rec.case_id, rec.error.rotation_deg, rec.error.translation_mm, rec.failed ? " (failed)" : "");
      return rec.failed ? kExitRuntime : kExitOk;
    }

    if (*ev) {
      std::vector<Method> methods;
      for (const auto& t : ev_methods) methods.push_back(parse_method(t));
      if (methods.empty()) methods.assign(kAllMethods.begin(), kAllMethods.end());
      const Dataset ds = load_dataset(ev_dataset);
      const Pipeline pipeline(cfg);
      const auto records = evaluate_dataset(ds, pipeline, methods);
      ensure_dir(ev_out);
      write_json(ev_out / "config.json", to_json(cfg));
      write_records_csv(ev_out / "records.csv", records, ev_runtime);
      const StatsSummary stats = aggregate(records, cfg.loose_threshold, cfg.strict_threshold);
      write_stats(ev_out, stats);
      std::cout << stats_table(stats);
      return kExitOk;
    }

    if (*gc) {
      GradcheckSettings gs = cfg.gradcheck;
      if (gc_instances) gs.instances = *gc_instances;
      const GradcheckReport report = gradcheck(cfg.seed, gs);
      if (!gc_out.empty()) write_json(gc_out, report.to_json());
      for (const auto& s : report.stages)
        std::printf("%-13s max_rel_error %.3e over %ld entries  %s\n", s.name.c_str(), s.max_rel_error, s.entries,
                    s.max_rel_error <= report.tolerance ? "ok" : "FAIL");
      std::printf("perfect-fit max |grad| %.3e; %s\n", report.perfect_fit_max_grad, report.passed ? "PASS" : "FAIL");
      return report.passed ? kExitOk : kExitValidation;
    }

    if (*tr) {
      if (tr_iterations) cfg.train.iterations = *tr_iterations;
      if (tr_lr) cfg.train.learning_rate = *tr_lr;
      cfg.Validate();
      const TrainResult res = toy_train(cfg.seed, cfg);
      write_loss_curve(tr_out, res.loss);
      std::printf("loss %.6g -> %.6g over %zu iterations\n", res.loss.front(), res.loss.back(), res.loss.size());
      return kExitOk;
    }

    if (*ex) {
      const auto records = read_records_csv(ex_records);
      export_distribution(records, ex_out);
      std::printf("wrote errors.csv, density.json and violin.svg to %s\n", ex_out.c_str());
      return kExitOk;
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
