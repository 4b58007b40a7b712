#pragma once

#include <cstddef>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pavad/manifest.hpp"

namespace pavad::curate {

enum class EmbeddingKind { image, text };

struct EmbeddingRecord {
  std::string id;  // for text records: the phrase itself
  EmbeddingKind kind = EmbeddingKind::image;
  std::vector<float> vector;  // unit norm
  std::string scene_id;       // images only
  std::string source_path;
};

inline constexpr double kUnitNormTolerance = 1e-5;

// Index file: {"dim": D, "entries": [{id, kind, file, row?, scene_id?, source_path?}]}.
// Each entry's vector is read from a PAVF file (rank 1, or row `row` of a rank-2 file).
struct EmbeddingIndex {
  std::size_t dim = 0;
  std::vector<EmbeddingRecord> images;
  std::vector<EmbeddingRecord> texts;

  const EmbeddingRecord* text(std::string_view phrase) const;
  const EmbeddingRecord* image(std::string_view id) const;
  void add(EmbeddingRecord r);  // validates norm and dimension

  static EmbeddingIndex load(const std::filesystem::path& index_json);
};

struct ClassSpec {
  std::string class_name;
  std::vector<std::string> positive_phrases;
  std::vector<std::string> negative_phrases;
  double lambda = 0.5;
  std::size_t top_k = 10;
  std::vector<std::string> template_phrases;
  std::string refinement_instruction;

  void validate() const;
  // concat(class name, positive phrases), comma separated.
  std::string positive_text() const;
};

std::vector<ClassSpec> load_class_specs(const std::filesystem::path& path);
std::string default_refinement_instruction(const std::string& class_name);

struct BalanceConfig {
  double alpha = 1.0;
  std::size_t min_quota_per_scene = 0;
  bool enabled = false;
  // Per-scene pool size is ceil(count^alpha * scale), capped at count.
  // scale <= 0 picks the largest scale for which no scene needs the cap.
  double scale = 0.0;

  void validate() const;
};

struct ScoredImage {
  std::string id;
  double score = 0.0;
  std::string scene_id;
  std::string source_path;
};

// <img, pos> - lambda * max_n <img, neg_n>; the negative term is 0 when there are no negatives.
double score_image(const EmbeddingRecord& img, const EmbeddingRecord& pos, std::span<const EmbeddingRecord> negs,
                   double lambda);
// Scores every image; the parallel path uses the OpenMP row kernel.
std::vector<ScoredImage> score_images(std::span<const EmbeddingRecord> images, const EmbeddingRecord& pos,
                                      std::span<const EmbeddingRecord> negs, double lambda, bool parallel = true);

// Ordering used everywhere: score descending, then id ascending.
bool ranks_before(const ScoredImage& a, const ScoredImage& b);

// Pool after per-scene sub-sampling (highest-scoring members kept).
std::vector<ScoredImage> balanced_pool(std::vector<ScoredImage> scored, const BalanceConfig& bal);
// Top-K with optional scene balancing over already-scored images.
std::vector<ScoredImage> select_from_scores(std::vector<ScoredImage> scored, std::size_t k, const BalanceConfig& bal);
// Full selection for one class against an embedding index.
std::vector<ScoredImage> select_topk(const EmbeddingIndex& index, const ClassSpec& spec, const BalanceConfig& bal);

// ---- prompt refinement ----

struct ImageRef {
  std::string id;
  std::string path;
};

class VlmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VlmClient {
 public:
  virtual ~VlmClient() = default;
  // Returns the raw model text; throws VlmError on transport or protocol failure.
  virtual std::string complete(const ImageRef& image, const std::string& instruction,
                               const std::string& class_name) = 0;
};

enum class PromptProvenance { vlm, fallback };
std::string to_string(PromptProvenance p);

struct RefinedPrompt {
  std::string class_name;
  std::string init_id;
  std::string phrase;
  std::string full_prompt;  // phrase + ", " + template phrases joined by ", "
  PromptProvenance provenance = PromptProvenance::fallback;
};

std::string fallback_phrase(const std::string& class_name);
// First sentence of `text`, whitespace-trimmed, without its terminal punctuation.
std::string first_sentence(std::string_view text);
std::string compose_prompt(const std::string& phrase, const std::vector<std::string>& templates);

// Never throws for client failures: they fall back and emit a warning line.
RefinedPrompt refine_prompt(const ImageRef& init, const ClassSpec& spec, VlmClient* client,
                            std::ostream* warnings = nullptr);
// Up to max_in_flight concurrent client calls; output order follows `inits`.
std::vector<RefinedPrompt> refine_prompts(const std::vector<ImageRef>& inits, const ClassSpec& spec,
                                          VlmClient* client, std::size_t max_in_flight = 4,
                                          std::ostream* warnings = nullptr);

// ---- generation manifest ----

struct ClassSelection {
  std::string class_name;
  std::vector<ScoredImage> picks;
};

struct GenerationDefaults {
  std::pair<std::uint32_t, std::uint32_t> resolution{832, 480};
  std::uint32_t frame_count = 81;
  std::uint32_t fps = 16;
  std::uint32_t sampling_steps = 25;
  std::pair<double, double> guidance{3.5, 3.5};

  // "sht" -> guidance (3.5, 3.5), "ucf" -> (6.5, 4.5).
  static GenerationDefaults for_dataset(const std::string& profile);
};

std::vector<io::GenerationJob> emit_generation_manifest(const std::vector<ClassSelection>& selections,
                                                        const std::vector<RefinedPrompt>& prompts,
                                                        const GenerationDefaults& defaults);

}  // namespace pavad::curate
