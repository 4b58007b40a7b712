#include "pavad/curate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "pavad/kernels.hpp"
#include "pavad/tensor_io.hpp"

namespace pavad::curate {

using nlohmann::json;

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("embedding dimension mismatch: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

double l2(std::span<const float> v) { return std::sqrt(dot(v, v)); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  std::size_t b = 0, e = s.size();
  while (b < e && ws(s[b])) ++b;
  while (e > b && ws(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

// ---- index ----

const EmbeddingRecord* EmbeddingIndex::text(std::string_view phrase) const {
  for (const auto& t : texts)
    if (t.id == phrase) return &t;
  return nullptr;
}

const EmbeddingRecord* EmbeddingIndex::image(std::string_view id) const {
  for (const auto& r : images)
    if (r.id == id) return &r;
  return nullptr;
}

void EmbeddingIndex::add(EmbeddingRecord r) {
  if (r.vector.empty()) throw std::invalid_argument("embedding '" + r.id + "' is empty");
  if (dim == 0) dim = r.vector.size();
  if (r.vector.size() != dim) {
    throw std::invalid_argument("embedding '" + r.id + "' has dimension " + std::to_string(r.vector.size()) +
                                ", index uses " + std::to_string(dim));
  }
  const double n = l2(r.vector);
  if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
    throw std::invalid_argument("embedding '" + r.id + "' is not unit norm (" + std::to_string(n) + ")");
  }
  (r.kind == EmbeddingKind::image ? images : texts).push_back(std::move(r));
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& index_json) {
  std::ifstream in(index_json);
  if (!in) throw std::runtime_error("cannot open embedding index " + index_json.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("embedding index " + index_json.string() + ": " + e.what());
  }
  const auto base = index_json.parent_path();
  EmbeddingIndex idx;
  if (doc.contains("dim")) idx.dim = doc.at("dim").get<std::size_t>();
  std::map<std::filesystem::path, io::PavfTensor> cache;
  for (const auto& e : doc.at("entries")) {
    EmbeddingRecord r;
    r.id = e.at("id").get<std::string>();
    const auto kind = e.at("kind").get<std::string>();
    if (kind == "image") {
      r.kind = EmbeddingKind::image;
    } else if (kind == "text") {
      r.kind = EmbeddingKind::text;
    } else {
      throw std::invalid_argument("embedding '" + r.id + "': unknown kind '" + kind + "'");
    }
    r.scene_id = e.value("scene_id", std::string{});
    r.source_path = e.value("source_path", std::string{});
    std::filesystem::path file = e.at("file").get<std::string>();
    if (file.is_relative()) file = base / file;
    auto it = cache.find(file);
    if (it == cache.end()) it = cache.emplace(file, io::read_tensor(file)).first;
    const auto& t = it->second;
    if (t.rank() == 1) {
      r.vector = t.data;
    } else {
      const auto row = e.value("row", std::size_t{0});
      if (row >= t.rows()) throw std::invalid_argument("embedding '" + r.id + "': row out of range");
      auto v = t.row(row);
      r.vector.assign(v.begin(), v.end());
    }
    idx.add(std::move(r));
  }
  return idx;
}

// ---- class specs ----

void ClassSpec::validate() const {
  if (class_name.empty()) throw std::invalid_argument("class_name must be non-empty");
  if (top_k < 1) throw std::invalid_argument("top_k must be >= 1 for class " + class_name);
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1] for class " + class_name);
}

std::string ClassSpec::positive_text() const {
  std::vector<std::string> parts{class_name};
  parts.insert(parts.end(), positive_phrases.begin(), positive_phrases.end());
  return join(parts, ", ");
}

std::string default_refinement_instruction(const std::string& class_name) {
  return "Describe in one short sentence how " + class_name +
         " could plausibly unfold in this scene, starting with \"Generate\".";
}

std::vector<ClassSpec> load_class_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open class specs " + path.string());
  json doc = json::parse(in);
  const json& arr = doc.is_array() ? doc : doc.at("classes");
  std::vector<ClassSpec> out;
  for (const auto& c : arr) {
    ClassSpec s;
    s.class_name = c.at("class_name").get<std::string>();
    s.positive_phrases = c.value("positive_phrases", std::vector<std::string>{});
    s.negative_phrases = c.value("negative_phrases", std::vector<std::string>{});
    s.lambda = c.value("lambda", 0.5);
    const auto k = c.value("top_k", std::int64_t{10});
    if (k < 1) throw std::invalid_argument("top_k must be >= 1 for class " + s.class_name);
    s.top_k = static_cast<std::size_t>(k);
    s.template_phrases = c.value("template_phrases", std::vector<std::string>{});
    s.refinement_instruction = c.value("refinement_instruction", default_refinement_instruction(s.class_name));
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

void BalanceConfig::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0) throw std::invalid_argument("alpha must be finite and >= 0");
  if (!std::isfinite(scale)) throw std::invalid_argument("balance scale must be finite");
}

// ---- scoring ----

double score_image(const EmbeddingRecord& img, const EmbeddingRecord& pos, std::span<const EmbeddingRecord> negs,
                   double lambda) {
  const double s_pos = dot(img.vector, pos.vector);
  double s_neg = 0.0;
  for (std::size_t i = 0; i < negs.size(); ++i) {
    const double s = dot(img.vector, negs[i].vector);
    s_neg = i == 0 ? s : std::max(s_neg, s);
  }
  return s_pos - lambda * s_neg;
}

std::vector<ScoredImage> score_images(std::span<const EmbeddingRecord> images, const EmbeddingRecord& pos,
                                      std::span<const EmbeddingRecord> negs, double lambda, bool parallel) {
  const std::size_t n = images.size();
  std::vector<ScoredImage> out(n);
  if (n == 0) return out;
  const std::size_t dim = pos.vector.size();
  std::vector<float> block;
  block.reserve(n * dim);
  for (const auto& img : images) {
    if (img.vector.size() != dim) throw std::invalid_argument("embedding dimension mismatch for image " + img.id);
    block.insert(block.end(), img.vector.begin(), img.vector.end());
  }
  auto run = parallel ? kernels::row_dots : kernels::row_dots_serial;
  std::vector<double> s_pos(n), s_neg(n, 0.0), tmp(n);
  run(block, dim, pos.vector, s_pos);
  for (std::size_t j = 0; j < negs.size(); ++j) {
    if (negs[j].vector.size() != dim) throw std::invalid_argument("embedding dimension mismatch for text " + negs[j].id);
    run(block, dim, negs[j].vector, tmp);
    for (std::size_t i = 0; i < n; ++i) s_neg[i] = j == 0 ? tmp[i] : std::max(s_neg[i], tmp[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = {images[i].id, s_pos[i] - lambda * s_neg[i], images[i].scene_id, images[i].source_path};
  }
  return out;
}

bool ranks_before(const ScoredImage& a, const ScoredImage& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

// ---- selection ----

std::vector<ScoredImage> balanced_pool(std::vector<ScoredImage> scored, const BalanceConfig& bal) {
  bal.validate();
  std::map<std::string, std::vector<ScoredImage>> scenes;
  for (auto& s : scored) scenes[s.scene_id].push_back(std::move(s));
  double scale = bal.scale;
  if (scale <= 0.0) {
    scale = std::numeric_limits<double>::infinity();
    for (const auto& [_, members] : scenes) {
      scale = std::min(scale, std::pow(static_cast<double>(members.size()), 1.0 - bal.alpha));
    }
  }
  std::vector<ScoredImage> pool;
  for (auto& [_, members] : scenes) {
    std::sort(members.begin(), members.end(), ranks_before);
    const double want = std::pow(static_cast<double>(members.size()), bal.alpha) * scale;
    // Guard against pow() landing a hair above an integer.
    const auto keep = static_cast<std::size_t>(std::max(1.0, std::ceil(want - 1e-9)));
    members.resize(std::min(members.size(), keep));
    for (auto& m : members) pool.push_back(std::move(m));
  }
  std::sort(pool.begin(), pool.end(), ranks_before);
  return pool;
}

std::vector<ScoredImage> select_from_scores(std::vector<ScoredImage> scored, std::size_t k, const BalanceConfig& bal) {
  std::vector<ScoredImage> pool;
  if (bal.enabled) {
    pool = balanced_pool(std::move(scored), bal);
  } else {
    pool = std::move(scored);
    std::sort(pool.begin(), pool.end(), ranks_before);
  }
  const std::size_t take = std::min(k, pool.size());
  if (!bal.enabled || bal.min_quota_per_scene == 0) {
    pool.resize(take);
    return pool;
  }
  // pool is globally ranked, so the first members seen per scene are its best.
  std::vector<char> chosen(pool.size(), 0);
  std::map<std::string, std::size_t> per_scene;
  std::size_t n_chosen = 0;
  for (std::size_t i = 0; i < pool.size() && n_chosen < take; ++i) {
    auto& c = per_scene[pool[i].scene_id];
    if (c < bal.min_quota_per_scene) {
      ++c;
      chosen[i] = 1;
      ++n_chosen;
    }
  }
  for (std::size_t i = 0; i < pool.size() && n_chosen < take; ++i) {
    if (!chosen[i]) {
      chosen[i] = 1;
      ++n_chosen;
    }
  }
  std::vector<ScoredImage> out;
  out.reserve(take);
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (chosen[i]) out.push_back(std::move(pool[i]));
  return out;
}

std::vector<ScoredImage> select_topk(const EmbeddingIndex& index, const ClassSpec& spec, const BalanceConfig& bal) {
  spec.validate();
  if (index.images.empty()) throw std::invalid_argument("no image embeddings to select from");
  const auto pos_text = spec.positive_text();
  const auto* pos = index.text(pos_text);
  if (!pos) throw std::invalid_argument("missing text embedding for '" + pos_text + "'");
  std::vector<EmbeddingRecord> negs;
  for (const auto& n : spec.negative_phrases) {
    const auto* r = index.text(n);
    if (!r) throw std::invalid_argument("missing text embedding for '" + n + "'");
    negs.push_back(*r);
  }
  auto scored = score_images(index.images, *pos, negs, spec.lambda);
  return select_from_scores(std::move(scored), spec.top_k, bal);
}

// ---- prompts ----

std::string to_string(PromptProvenance p) { return p == PromptProvenance::vlm ? "vlm" : "fallback"; }

std::string fallback_phrase(const std::string& class_name) {
  return "Generate " + class_name + " behavior consistent with the scene";
}

std::string first_sentence(std::string_view text) {
  const std::string t = trim(text);
  std::size_t end = t.size();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const char c = t[i];
    if (c == '\n' || c == '\r') {
      end = i;
      break;
    }
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == t.size() || t[i + 1] == ' ' || t[i + 1] == '\n' || t[i + 1] == '\r' || t[i + 1] == '\t')) {
      end = i;
      break;
    }
  }
  std::string s = trim(std::string_view(t).substr(0, end));
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.pop_back();
  return trim(s);
}

std::string compose_prompt(const std::string& phrase, const std::vector<std::string>& templates) {
  std::vector<std::string> parts{phrase};
  parts.insert(parts.end(), templates.begin(), templates.end());
  return join(parts, ", ");
}

RefinedPrompt refine_prompt(const ImageRef& init, const ClassSpec& spec, VlmClient* client, std::ostream* warnings) {
  spec.validate();
  RefinedPrompt out;
  out.class_name = spec.class_name;
  out.init_id = init.id;
  if (client) {
    const auto& instruction =
        spec.refinement_instruction.empty() ? default_refinement_instruction(spec.class_name) : spec.refinement_instruction;
    try {
      auto phrase = first_sentence(client->complete(init, instruction, spec.class_name));
      if (phrase.empty()) throw VlmError("empty response");
      out.phrase = std::move(phrase);
      out.provenance = PromptProvenance::vlm;
    } catch (const std::exception& e) {
      if (warnings) {
        *warnings << "warning: prompt refinement for " << spec.class_name << "/" << init.id
                  << " fell back: " << e.what() << "\n";
      }
    }
  }
  if (out.provenance == PromptProvenance::fallback) out.phrase = fallback_phrase(spec.class_name);
  out.full_prompt = compose_prompt(out.phrase, spec.template_phrases);
  return out;
}

namespace {

// Serializes warning lines from worker threads.
class LockedSink : public std::streambuf {
 public:
  LockedSink(std::ostream* target, std::mutex& mu) : target_(target), mu_(mu) {}

 protected:
  int overflow(int c) override {
    if (c != EOF) buffer_.push_back(static_cast<char>(c));
    return c;
  }
  int sync() override {
    if (target_ && !buffer_.empty()) {
      std::lock_guard lock(mu_);
      *target_ << buffer_;
      target_->flush();
    }
    buffer_.clear();
    return 0;
  }

 private:
  std::ostream* target_;
  std::mutex& mu_;
  std::string buffer_;
};

}  // namespace

std::vector<RefinedPrompt> refine_prompts(const std::vector<ImageRef>& inits, const ClassSpec& spec,
                                          VlmClient* client, std::size_t max_in_flight, std::ostream* warnings) {
  spec.validate();
  std::vector<RefinedPrompt> out(inits.size());
  if (inits.empty()) return out;
  const std::size_t workers = client ? std::clamp<std::size_t>(max_in_flight, 1, inits.size()) : 1;
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto work = [&] {
    LockedSink sink(warnings, mu);
    std::ostream local(&sink);
    for (std::size_t i = next++; i < inits.size(); i = next++) {
      out[i] = refine_prompt(inits[i], spec, client, warnings ? &local : nullptr);
      local.flush();
    }
  };
  if (workers == 1) {
    work();
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  return out;
}

// ---- generation manifest ----

GenerationDefaults GenerationDefaults::for_dataset(const std::string& profile) {
  GenerationDefaults d;
  if (profile == "sht" || profile == "sim") {
    d.guidance = {3.5, 3.5};
  } else if (profile == "ucf") {
    d.guidance = {6.5, 4.5};
  } else {
    throw std::invalid_argument("unknown dataset profile '" + profile + "'");
  }
  return d;
}

std::vector<io::GenerationJob> emit_generation_manifest(const std::vector<ClassSelection>& selections,
                                                        const std::vector<RefinedPrompt>& prompts,
                                                        const GenerationDefaults& defaults) {
  std::size_t n_picks = 0;
  for (const auto& s : selections) n_picks += s.picks.size();
  if (n_picks != prompts.size()) {
    throw std::invalid_argument("selection/prompt count mismatch: " + std::to_string(n_picks) + " selected inits, " +
                                std::to_string(prompts.size()) + " prompts");
  }
  std::map<std::pair<std::string, std::string>, const RefinedPrompt*> by_key;
  for (const auto& p : prompts) {
    if (!by_key.emplace(std::make_pair(p.class_name, p.init_id), &p).second) {
      throw std::invalid_argument("duplicate prompt for " + p.class_name + "/" + p.init_id);
    }
  }
  std::vector<io::GenerationJob> jobs;
  jobs.reserve(n_picks);
  for (const auto& s : selections) {
    for (const auto& pick : s.picks) {
      auto it = by_key.find({s.class_name, pick.id});
      if (it == by_key.end()) throw std::invalid_argument("no prompt for " + s.class_name + "/" + pick.id);
      io::GenerationJob job;
      job.class_name = s.class_name;
      job.init_image_path = pick.source_path.empty() ? pick.id : pick.source_path;
      job.prompt = it->second->full_prompt;
      job.resolution = defaults.resolution;
      job.frame_count = defaults.frame_count;
      job.fps = defaults.fps;
      job.sampling_steps = defaults.sampling_steps;
      job.guidance = defaults.guidance;
      io::validate(job);
      jobs.push_back(std::move(job));
    }
  }
  return jobs;
}

}  // namespace pavad::curate
