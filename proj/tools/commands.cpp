#include "commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pavad/curate.hpp"
#include "pavad/gradsuite.hpp"
#include "pavad/profiles.hpp"
#include "pavad/sim.hpp"
#include "pavad/train.hpp"
#include "pavad/vlm_client.hpp"

namespace pavad::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Profile name plus optional overrides; an override applies only when its flag
// (or config key) was given.
class ProfileFlags {
 public:
  explicit ProfileFlags(std::string default_profile) : name_(std::move(default_profile)) {}

  void add_profile(CLI::App* app) { app->add_option("--profile", name_, "sht | ucf | sim")->capture_default_str(); }

  template <class T>
  void add(CLI::App* app, const std::string& flag, const std::string& desc, std::function<void(RunProfile&, T)> set) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, desc);
    apply_.push_back([value, opt, set](RunProfile& p) {
      if (opt->count() > 0) set(p, *value);
    });
  }

  void add_training(CLI::App* app) {
    add<std::size_t>(app, "--steps", "optimiser steps", [](RunProfile& p, std::size_t v) { p.train.steps = v; });
    add<std::uint64_t>(app, "--seed", "random seed", [](RunProfile& p, std::uint64_t v) {
      p.train.seed = v;
      p.sim.seed = v;
    });
    add<double>(app, "--lambda1", "domain alignment weight",
                [](RunProfile& p, double v) { p.train.loss_weights.lambda1 = v; });
    add<double>(app, "--lambda2", "slot update weight",
                [](RunProfile& p, double v) { p.train.loss_weights.lambda2 = v; });
    add<double>(app, "--lambda-da", "gradient reversal strength",
                [](RunProfile& p, double v) { p.train.loss_weights.lambda_da = v; });
    add<double>(app, "--lambda-dist", "feature distance weight",
                [](RunProfile& p, double v) { p.train.loss_weights.lambda_dist = v; });
    add<double>(app, "--beta", "usage exponent", [](RunProfile& p, double v) { p.train.loss_weights.beta = v; });
    add<double>(app, "--epsilon", "usage guard", [](RunProfile& p, double v) { p.train.loss_weights.epsilon = v; });
    add<double>(app, "--tau", "assignment temperature", [](RunProfile& p, double v) { p.model.tau = v; });
    add<std::size_t>(app, "--topk", "MIL top-k", [](RunProfile& p, std::size_t v) { p.train.loss_weights.topk = v; });
    add<double>(app, "--learning-rate", "Adam step size", [](RunProfile& p, double v) { p.train.learning_rate = v; });
    add<double>(app, "--weight-decay", "decoupled weight decay",
                [](RunProfile& p, double v) { p.train.weight_decay = v; });
    add<std::size_t>(app, "--segment-number", "rows sampled per video",
                     [](RunProfile& p, std::size_t v) { p.train.segment_number = v; });
    add<std::size_t>(app, "--batch-videos-per-stream", "videos per stream per step",
                     [](RunProfile& p, std::size_t v) { p.train.batch_videos_per_stream = v; });
    add<std::size_t>(app, "--model-dim", "encoder width", [](RunProfile& p, std::size_t v) { p.model.model_dim = v; });
    add<std::size_t>(app, "--heads", "attention heads", [](RunProfile& p, std::size_t v) { p.model.heads = v; });
    add<std::size_t>(app, "--abnormal-slots", "abnormal memory slots",
                     [](RunProfile& p, std::size_t v) { p.model.abnormal_slots = v; });
    add<std::size_t>(app, "--normal-slots", "normal memory slots",
                     [](RunProfile& p, std::size_t v) { p.model.normal_slots = v; });
  }

  void add_sim(CLI::App* app) {
    add<std::size_t>(app, "--dim", "feature dimension", [](RunProfile& p, std::size_t v) { p.sim.dim = v; });
    add<std::size_t>(app, "--videos-per-stream", "training videos per stream",
                     [](RunProfile& p, std::size_t v) { p.sim.videos_per_stream = v; });
    add<std::size_t>(app, "--test-videos-per-class", "test videos per class",
                     [](RunProfile& p, std::size_t v) { p.sim.test_videos_per_class = v; });
    add<std::size_t>(app, "--rows-per-video", "rows per video",
                     [](RunProfile& p, std::size_t v) { p.sim.rows_per_video = v; });
    add<double>(app, "--pseudo-norm-scale", "pseudo/real norm ratio",
                [](RunProfile& p, double v) { p.sim.pseudo_norm_scale = v; });
    add<double>(app, "--anomaly-fraction", "burst length as a fraction of rows",
                [](RunProfile& p, double v) { p.sim.anomaly_fraction = v; });
    add<std::size_t>(app, "--n-abnormal-modes", "abnormal direction clusters",
                     [](RunProfile& p, std::size_t v) { p.sim.n_abnormal_modes = v; });
    add<double>(app, "--normal-spread", "spread of normal rows around the scene direction",
                [](RunProfile& p, double v) { p.sim.normal_spread = v; });
    add<double>(app, "--mode-spread", "spread of abnormal rows around their mode",
                [](RunProfile& p, double v) { p.sim.mode_spread = v; });
    add<double>(app, "--mode-scene-weight", "scene share of abnormal directions",
                [](RunProfile& p, double v) { p.sim.mode_scene_weight = v; });
    add<double>(app, "--test-mode-shift", "perturbation of test-time modes",
                [](RunProfile& p, double v) { p.sim.test_mode_shift = v; });
    add<double>(app, "--norm-jitter", "relative per-row norm noise",
                [](RunProfile& p, double v) { p.sim.norm_jitter = v; });
  }

  RunProfile resolve() const {
    RunProfile p = load_profile(name_);
    for (const auto& f : apply_) f(p);
    if (name_ == "sim") {
      p.model.input_dim = p.sim.dim;
    }
    p.sim.validate();
    p.model.validate();
    p.train.validate();
    return p;
  }

 private:
  std::string name_;
  std::vector<std::function<void(RunProfile&)>> apply_;
};

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

fs::path prepare_out(const std::string& out) {
  fs::path p(out);
  fs::create_directories(p);
  return p;
}

json selection_json(const std::vector<curate::ClassSelection>& sel) {
  json classes = json::array();
  for (const auto& s : sel) {
    json picks = json::array();
    for (const auto& p : s.picks)
      picks.push_back({{"id", p.id}, {"score", p.score}, {"scene_id", p.scene_id}, {"source_path", p.source_path}});
    classes.push_back({{"class_name", s.class_name}, {"picks", picks}});
  }
  return {{"classes", classes}};
}

std::vector<curate::ClassSelection> read_selections(const fs::path& path) {
  const auto doc = read_json(path);
  std::vector<curate::ClassSelection> out;
  for (const auto& c : doc.at("classes")) {
    curate::ClassSelection s;
    s.class_name = c.at("class_name").get<std::string>();
    for (const auto& p : c.at("picks")) {
      s.picks.push_back({p.at("id").get<std::string>(), p.at("score").get<double>(),
                         p.value("scene_id", std::string{}), p.value("source_path", std::string{})});
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<curate::RefinedPrompt> read_prompts(const fs::path& path) {
  std::vector<curate::RefinedPrompt> out;
  for (const auto& p : read_json(path)) {
    curate::RefinedPrompt r;
    r.class_name = p.at("class_name").get<std::string>();
    r.init_id = p.at("init_id").get<std::string>();
    r.phrase = p.at("phrase").get<std::string>();
    r.full_prompt = p.at("full_prompt").get<std::string>();
    r.provenance = p.at("provenance").get<std::string>() == "vlm" ? curate::PromptProvenance::vlm
                                                                  : curate::PromptProvenance::fallback;
    out.push_back(std::move(r));
  }
  return out;
}

model::ModelParams initial_params(const RunProfile& p, std::size_t feature_dim) {
  model::ModelConfig mc = p.model;
  mc.input_dim = feature_dim;
  return model::init_params(mc, p.train.seed);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pseudo-anomaly curation and domain-aligned memory training for video anomaly detection", "pavad"};
  app.set_config("--config", "", "key = value config file; [section] names match subcommands");
  app.require_subcommand(1);
  app.fallthrough(false);

  // select-inits
  auto* sel = app.add_subcommand("select-inits", "score and select init images per class");
  std::string sel_index, sel_classes, sel_out;
  double sel_alpha = 1.0, sel_scale = 0.0;
  std::size_t sel_quota = 0;
  bool sel_balance = false;
  sel->add_option("--index", sel_index, "embedding index JSON")->required()->check(CLI::ExistingFile);
  sel->add_option("--classes", sel_classes, "class spec JSON")->required()->check(CLI::ExistingFile);
  sel->add_option("--out", sel_out, "output directory")->required();
  auto* o_bal = sel->add_flag("--balance", sel_balance, "enable scene balancing");
  sel->add_option("--alpha", sel_alpha, "scene smoothing exponent")->needs(o_bal);
  sel->add_option("--quota", sel_quota, "minimum picks per scene")->needs(o_bal);
  sel->add_option("--balance-scale", sel_scale, "pool scale (0 = automatic)")->needs(o_bal);

  // refine-prompts
  auto* ref = app.add_subcommand("refine-prompts", "turn selected inits into generation prompts");
  std::string ref_sel, ref_classes, ref_out;
  double vlm_timeout = 60.0;
  std::size_t in_flight = 4;
  bool offline = false;
  ref->add_option("--selections", ref_sel, "selections.json from select-inits")->required()->check(CLI::ExistingFile);
  ref->add_option("--classes", ref_classes, "class spec JSON")->required()->check(CLI::ExistingFile);
  ref->add_option("--out", ref_out, "output directory")->required();
  auto* o_timeout = ref->add_option("--vlm-timeout-s", vlm_timeout, "VLM request timeout in seconds")
                        ->capture_default_str()
                        ->check(CLI::PositiveNumber);
  ref->add_option("--max-in-flight", in_flight, "concurrent VLM requests")->capture_default_str()->check(CLI::PositiveNumber);
  ref->add_flag("--offline", offline, "ignore PAVAD_VLM_URL and use the fallback phrase")->excludes(o_timeout);

  // gen-manifest
  auto* gen = app.add_subcommand("gen-manifest", "emit generation jobs");
  std::string gen_sel, gen_prompts, gen_out, gen_profile = "sht";
  gen->add_option("--selections", gen_sel, "selections.json")->required()->check(CLI::ExistingFile);
  gen->add_option("--prompts", gen_prompts, "prompts.json")->required()->check(CLI::ExistingFile);
  gen->add_option("--profile", gen_profile, "sht | ucf (guidance defaults)")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // simulate
  auto* simc = app.add_subcommand("simulate", "write a synthetic feature dataset");
  ProfileFlags sim_flags("sim");
  std::string sim_out;
  sim_flags.add_profile(simc);
  sim_flags.add<std::uint64_t>(simc, "--seed", "random seed", [](RunProfile& p, std::uint64_t v) { p.sim.seed = v; });
  sim_flags.add_sim(simc);
  simc->add_option("--out", sim_out, "output directory")->required();

  // train
  auto* trn = app.add_subcommand("train", "train a model on a dataset manifest");
  ProfileFlags train_flags("sim");
  std::string trn_manifest, trn_out;
  train_flags.add_profile(trn);
  train_flags.add_training(trn);
  trn->add_option("--manifest", trn_manifest, "training manifest")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", trn_out, "output directory")->required();

  // eval
  auto* evc = app.add_subcommand("eval", "score test videos and compute frame-level AUC");
  std::string ev_ckpt, ev_manifest, ev_masks, ev_out;
  evc->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  evc->add_option("--manifest", ev_manifest, "test manifest")->required()->check(CLI::ExistingFile);
  evc->add_option("--masks", ev_masks, "frame mask intervals")->required()->check(CLI::ExistingFile);
  evc->add_option("--out", ev_out, "output directory")->required();

  // ablate
  auto* abl = app.add_subcommand("ablate", "baseline vs full variants on fresh simulated data");
  ProfileFlags abl_flags("sim");
  std::string abl_out;
  std::size_t abl_seeds = 5;
  abl_flags.add_profile(abl);
  abl_flags.add_training(abl);
  abl_flags.add_sim(abl);
  abl->add_option("--seeds", abl_seeds, "number of seeds, starting at --seed")->capture_default_str()->check(CLI::PositiveNumber);
  abl->add_option("--out", abl_out, "output directory")->required();

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every loss term");
  ProfileFlags gc_flags("sim");
  std::size_t gc_configs = 20;
  gc_flags.add_profile(gc);
  gc_flags.add<std::uint64_t>(gc, "--seed", "random seed", [](RunProfile& p, std::uint64_t v) { p.train.seed = v; });
  gc->add_option("--configs", gc_configs, "random configurations")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    std::string msg = e.what();
    if (auto nl = msg.find('\n'); nl != std::string::npos) msg.resize(nl);
    err << "error: " << msg << "\n";
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    if (*sel) {
      curate::BalanceConfig bal;
      bal.enabled = sel_balance;
      bal.alpha = sel_alpha;
      bal.min_quota_per_scene = sel_quota;
      bal.scale = sel_scale;
      bal.validate();
      const fs::path index_path(sel_index);
      auto index = curate::EmbeddingIndex::load(index_path);
      for (auto& img : index.images) {
        if (!img.source_path.empty() && fs::path(img.source_path).is_relative())
          img.source_path = (index_path.parent_path() / img.source_path).lexically_normal().string();
      }
      std::vector<curate::ClassSelection> all;
      for (const auto& spec : curate::load_class_specs(sel_classes))
        all.push_back({spec.class_name, curate::select_topk(index, spec, bal)});
      const auto dir = prepare_out(sel_out);
      write_json(selection_json(all), dir / "selections.json");
      std::size_t n = 0;
      for (const auto& s : all) n += s.picks.size();
      out << "selected " << n << " inits over " << all.size() << " classes\n";
      return 0;
    }
    if (*ref) {
      const auto specs = curate::load_class_specs(ref_classes);
      const auto selections = read_selections(ref_sel);
      std::unique_ptr<curate::VlmClient> client = offline ? nullptr : curate::vlm_client_from_env(vlm_timeout);
      json arr = json::array();
      for (const auto& s : selections) {
        auto it = std::find_if(specs.begin(), specs.end(), [&](const auto& c) { return c.class_name == s.class_name; });
        if (it == specs.end()) throw std::runtime_error("no class spec for '" + s.class_name + "'");
        std::vector<curate::ImageRef> inits;
        for (const auto& p : s.picks) inits.push_back({p.id, p.source_path});
        for (const auto& r : curate::refine_prompts(inits, *it, client.get(), in_flight, &err)) {
          arr.push_back({{"class_name", r.class_name},
                         {"init_id", r.init_id},
                         {"phrase", r.phrase},
                         {"full_prompt", r.full_prompt},
                         {"provenance", curate::to_string(r.provenance)}});
        }
      }
      const auto dir = prepare_out(ref_out);
      write_json(arr, dir / "prompts.json");
      out << "wrote " << arr.size() << " prompts\n";
      return 0;
    }
    if (*gen) {
      const auto defaults = curate::GenerationDefaults::for_dataset(gen_profile);
      const auto jobs = curate::emit_generation_manifest(read_selections(gen_sel), read_prompts(gen_prompts), defaults);
      const auto dir = prepare_out(gen_out);
      std::ofstream f(dir / "generation_manifest.json");
      f << io::generation_manifest_json(jobs) << "\n";
      if (!f) throw std::runtime_error("cannot write generation_manifest.json");
      out << "wrote " << jobs.size() << " generation jobs\n";
      return 0;
    }
    if (*simc) {
      const auto p = sim_flags.resolve();
      const auto ds = sim::generate(p.sim);
      sim::write_dataset(ds, prepare_out(sim_out));
      out << "wrote " << ds.train.videos.size() << " training and " << ds.test.videos.size() << " test videos\n";
      return 0;
    }
    if (*trn) {
      const auto p = train_flags.resolve();
      const auto manifest = io::read_manifest(trn_manifest, io::ManifestPurpose::training);
      const auto data = train::Dataset::load(manifest);
      const auto dir = prepare_out(trn_out);
      std::ofstream log(dir / "loss_log.jsonl");
      const auto result = train::train(p.train, initial_params(p, data.feature_dim), data, &log);
      model::save_checkpoint(result.params, dir / "checkpoint");
      const auto& last = result.log.back().loss;
      out << json{{"steps", result.log.size()}, {"final_total", last.total}, {"da_skipped_steps", result.da_skipped_steps}}
                 .dump()
          << "\n";
      return 0;
    }
    if (*evc) {
      const auto params = model::load_checkpoint(ev_ckpt);
      const auto manifest = io::read_manifest(ev_manifest);
      const auto data = train::Dataset::load(manifest);
      const auto masks = io::compile_masks(io::read_mask_intervals(ev_masks), manifest);
      const auto r = train::evaluate(params, data, masks);
      train::write_eval_outputs(r, prepare_out(ev_out));
      out << json{{"auc_micro", r.auc_micro}, {"n_videos", r.n_videos}, {"n_frames", r.n_frames}}.dump() << "\n";
      return 0;
    }
    if (*abl) {
      const auto p = abl_flags.resolve();
      train::TrainConfig baseline = p.train;
      baseline.loss_weights.lambda1 = 0.0;
      baseline.loss_weights.lambda2 = 0.0;
      std::vector<sim::AblationVariant> variants{{"baseline", baseline}, {"full", p.train}};
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < abl_seeds; ++i) seeds.push_back(p.sim.seed + i);
      const auto rows = sim::run_ablation(p.sim, p.model, variants, seeds);
      const auto dir = prepare_out(abl_out);
      sim::write_ablation(rows, dir / "ablation.json");
      for (const auto& v : variants) {
        std::vector<double> aucs, ents;
        for (const auto& r : rows)
          if (r.variant == v.name) {
            aucs.push_back(r.auc_micro);
            ents.push_back(r.usage_entropy);
          }
        out << json{{"variant", v.name}, {"median_auc", sim::median(aucs)}, {"median_usage_entropy", sim::median(ents)}}
                   .dump()
            << "\n";
      }
      return 0;
    }
    if (*gc) {
      const auto p = gc_flags.resolve();
      ad::GradSuiteConfig cfg;
      cfg.configurations = gc_configs;
      cfg.seed = p.train.seed;
      cfg.weights = p.train.loss_weights;
      const auto result = ad::run_gradient_suite(cfg);
      bool ok = true;
      for (const auto& t : result.terms) {
        const bool pass = t.max_rel_error <= 1e-4;
        ok = ok && pass;
        out << t.term << " max_rel_error=" << t.max_rel_error << " checked=" << t.n_checked
            << (pass ? " ok" : " FAIL") << "\n";
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    if (auto nl = msg.find('\n'); nl != std::string::npos) msg.resize(nl);
    err << "error: " << msg << "\n";
    return 1;
  }
  return 1;
}

}  // namespace pavad::cli
