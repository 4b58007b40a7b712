// Acceptance gate: one PASS/FAIL line per primary criterion. Exit code is the
// number of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "commands.hpp"
#include "json.hpp"
#include "pavad/curate.hpp"
#include "pavad/gradsuite.hpp"
#include "pavad/losses.hpp"
#include "pavad/manifest.hpp"
#include "pavad/metrics.hpp"
#include "pavad/model.hpp"
#include "pavad/profiles.hpp"
#include "pavad/sim.hpp"
#include "pavad/tensor_io.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace pavad;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ad::Tensor randn(ad::Shape s, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  ad::Tensor t(s, 0.0);
  for (auto& x : t.data()) x = nd(rng);
  return t;
}

std::vector<std::vector<double>> rows_of(const ad::Tensor& t) {
  std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t.at(r, c);
  return out;
}

// ---- gradient suite ----

Outcome gradient_suite() {
  ad::GradSuiteConfig cfg;  // 20 configurations, d = 8, K = 4, T = 6, B = 2, h = 1e-5
  const auto t0 = Clock::now();
  const auto r = ad::run_gradient_suite(cfg);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = r.configurations >= 20 && r.max_rel_error() <= 1e-4 && secs < 60.0;
  for (const auto& t : r.terms) {
    o.detail += t.term + "=" + fmt("%.2e", t.max_rel_error) + " ";
    o.pass = o.pass && t.n_checked > 0;
  }
  o.detail += "configs=" + std::to_string(r.configurations) + " " + fmt("%.1fs", secs);
  return o;
}

// ---- gradient reversal ----

Outcome grl_contract() {
  std::mt19937_64 rng(11);
  Outcome o;
  std::size_t checked = 0;
  for (double lambda : {0.0, 0.1, 0.2}) {
    // Bare layer: the post-reversal gradient is the weight vector itself.
    const ad::Tensor x = randn({3, 5}, rng), w = randn({3, 5}, rng);
    ad::Graph g;
    ad::Var xv = g.leaf(x, true);
    ad::Var y = ad::grad_reverse(xv, lambda);
    g.backward(ad::sum(ad::mul(y, g.constant(w))));
    for (std::size_t i = 0; i < x.numel(); ++i, ++checked)
      if (g.grad(xv)[i] != -lambda * w[i]) o.pass = false;
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (g.value(y)[i] != x[i]) o.pass = false;

    // Inside the domain loss: reversed gradients are -lambda times the unreversed ones.
    loss::LossWeights lw;
    lw.lambda_da = lambda;
    lw.lambda_dist = 0.0;
    const ad::Tensor a = randn({1, 6}, rng), b = randn({1, 6}, rng), w1 = randn({6, 3}, rng), w2 = randn({3, 1}, rng);
    auto grads = [&](bool reverse) {
      ad::Graph gg;
      ad::Var ra = gg.leaf(a, true), rb = gg.leaf(b, true);
      model::DiscriminatorVars d{gg.constant(w1), gg.constant(ad::Tensor({3}, 0.1)), gg.constant(w2),
                                 gg.constant(ad::Tensor({1}, -0.2))};
      gg.backward(loss::domain_alignment_loss(ra, rb, d, lw, reverse));
      return std::pair{gg.grad(ra), gg.grad(rb)};
    };
    const auto [pre_a, pre_b] = grads(true);
    const auto [post_a, post_b] = grads(false);
    for (std::size_t i = 0; i < 6; ++i, checked += 2)
      if (pre_a[i] != -lambda * post_a[i] || pre_b[i] != -lambda * post_b[i]) o.pass = false;
  }
  o.detail = "lambda_da in {0, 0.1, 0.2}, " + std::to_string(checked) + " exact comparisons";
  return o;
}

// ---- assignments and usage ----

Outcome assignment_oracle() {
  std::mt19937_64 rng(12);
  Outcome o;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 20, k = 1 + rng() % 8, d = 2 + rng() % 10;
    const double tau = trial % 2 ? 0.1 : 1.0;
    const auto [q, u] = model::assignment_values(randn({n, d}, rng, 3.0), randn({k, d}, rng), tau);
    double us = 0;
    for (std::size_t j = 0; j < k; ++j) us += u[j];
    worst_sum = std::max(worst_sum, std::abs(us - 1.0));
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < k; ++j) s += q.at(r, j);
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  if (worst_sum > 1e-12) o.pass = false;

  std::size_t agree = 0;
  double worst_usage = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 10, k = 2 + rng() % 5, d = 3 + rng() % 6;
    const ad::Tensor z = randn({n, d}, rng), m = randn({k, d}, rng);
    const auto [q, u] = model::assignment_values(z, m, 1e-6);
    const auto slots = rows_of(m);
    std::vector<double> hard(k, 0.0);
    bool ok = true;
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<double> row(d);
      for (std::size_t c = 0; c < d; ++c) row[c] = z.at(r, c);
      const auto nearest = oracle::nearest_cosine(row, slots);
      hard[nearest] += 1.0 / static_cast<double>(n);
      std::size_t arg = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (q.at(r, j) > q.at(r, arg)) arg = j;
      ok = ok && arg == nearest;
    }
    for (std::size_t j = 0; j < k; ++j) worst_usage = std::max(worst_usage, std::abs(u[j] - hard[j]));
    agree += ok;
  }
  if (agree != 50 || worst_usage > 1e-6) o.pass = false;
  o.detail = "max |sum - 1| = " + fmt("%.1e", worst_sum) + ", hard-limit agreement " + std::to_string(agree) +
             "/50, max usage gap " + fmt("%.1e", worst_usage);
  return o;
}

// ---- usage-aware update ----

Outcome usage_update_closed_form() {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> beta_dist(0.0, 2.0);
  Outcome o;
  double worst_grad = 0.0, worst_zero = 0.0, worst_beta0 = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng() % 12, k = 2 + rng() % 5, d = 2 + rng() % 7;
    loss::LossWeights w;
    w.beta = beta_dist(rng);
    const ad::Tensor z = randn({n, d}, rng, 2.0), m = randn({k, d}, rng);
    const auto [q, u] = model::assignment_values(z, m, 0.1);
    const auto targets = loss::usage_targets(q, z);

    ad::Graph g;
    ad::Var mv = g.leaf(m, true);
    g.backward(loss::usage_update_loss(mv, targets, w));
    const auto expect = oracle::slot_update_grad(rows_of(m), rows_of(targets.centers), targets.usage.data(), w.beta,
                                                 w.epsilon);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c) worst_grad = std::max(worst_grad, std::abs(g.grad(mv).at(j, c) - expect[j][c]));

    ad::Graph g0;
    worst_zero = std::max(worst_zero, std::abs(loss::usage_update_loss(g0.constant(targets.centers), targets, w).value().item()));

    w.beta = 0.0;
    double mean_sq = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = m.at(j, c) - targets.centers.at(j, c);
        mean_sq += diff * diff;
      }
    mean_sq /= static_cast<double>(k);
    ad::Graph g1;
    worst_beta0 = std::max(worst_beta0, std::abs(loss::usage_update_loss(g1.constant(m), targets, w).value().item() - mean_sq));
  }
  o.pass = worst_grad <= 1e-10 && worst_zero == 0.0 && worst_beta0 <= 1e-10;
  o.detail = "grad gap " + fmt("%.1e", worst_grad) + ", at-centers " + fmt("%.1e", worst_zero) + ", beta=0 gap " +
             fmt("%.1e", worst_beta0);
  return o;
}

// ---- init selection ----

std::vector<float> unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<float> nd;
  std::vector<float> v(d);
  double n = 0;
  for (auto& x : v) {
    x = nd(rng);
    n += static_cast<double>(x) * x;
  }
  for (auto& x : v) x = static_cast<float>(x / std::sqrt(n));
  return v;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return s / std::sqrt(na * nb);
}

Outcome selection_oracle() {
  std::mt19937_64 rng(14);
  Outcome o;
  std::size_t sorted_ok = 0, sorted_n = 0, lambda0_ok = 0, quota_ok = 0, quota_n = 0;
  for (std::size_t n = 1; n <= 20; ++n)
    for (int rep = 0; rep < 5; ++rep) {
      const std::size_t d = 8;
      curate::EmbeddingIndex index;
      index.dim = d;
      curate::ClassSpec spec;
      spec.class_name = "fighting";
      spec.positive_phrases = {"people punching"};
      spec.negative_phrases = {"dancing", "hugging"};
      spec.lambda = rep == 0 ? 0.0 : 0.5;
      spec.top_k = 1 + rng() % (n + 3);
      index.add({spec.positive_text(), curate::EmbeddingKind::text, unit(rng, d), "", ""});
      for (const auto& p : spec.negative_phrases) index.add({p, curate::EmbeddingKind::text, unit(rng, d), "", ""});
      for (std::size_t i = 0; i < n; ++i)
        index.add({"im" + std::to_string(1000 + i), curate::EmbeddingKind::image, unit(rng, d),
                   "scene" + std::to_string(i % 3), ""});
      if (n > 2) index.images[2].vector = index.images[1].vector;  // exact tie

      // Independent ranking: cosine to the positive text minus lambda times the closest negative.
      std::vector<std::pair<double, std::string>> ref;
      for (const auto& img : index.images) {
        double worst = -1e300;
        for (const auto& p : spec.negative_phrases) worst = std::max(worst, cosine(img.vector, index.text(p)->vector));
        const double base = cosine(img.vector, index.text(spec.positive_text())->vector);
        ref.push_back({spec.lambda == 0.0 ? base : base - spec.lambda * worst, img.id});
      }
      std::sort(ref.begin(), ref.end(), [](const auto& a, const auto& b) {
        return std::abs(a.first - b.first) > 1e-12 ? a.first > b.first : a.second < b.second;
      });
      ref.resize(std::min(spec.top_k, n));
      const auto got = curate::select_topk(index, spec, {});
      bool same = got.size() == ref.size();
      for (std::size_t i = 0; same && i < ref.size(); ++i) same = got[i].id == ref[i].second;
      ++sorted_n;
      sorted_ok += same;
      if (rep == 0) lambda0_ok += same;
    }

  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 6 + rng() % 7, quota = 1 + rng() % 2;
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    std::vector<curate::ScoredImage> pool;
    std::vector<oracle::Candidate> cands;
    std::map<std::string, std::size_t> sizes;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string scene = "s" + std::to_string(rng() % 3);
      pool.push_back({"x" + std::to_string(100 + i), ud(rng), scene, ""});
      cands.push_back({pool.back().id, scene, pool.back().score});
      ++sizes[scene];
    }
    std::size_t need = 0;
    for (const auto& [_, c] : sizes) need += std::min(quota, c);
    const std::size_t k = need + rng() % 3;
    curate::BalanceConfig bal;
    bal.enabled = true;
    bal.min_quota_per_scene = quota;
    std::vector<std::string> got;
    for (const auto& s : curate::select_from_scores(pool, k, bal)) got.push_back(s.id);
    std::sort(got.begin(), got.end());
    ++quota_n;
    quota_ok += got == oracle::best_quota_subset(cands, k, quota);
  }
  o.pass = sorted_ok == sorted_n && lambda0_ok == 20 && quota_ok == quota_n;
  o.detail = "exhaustive sort " + std::to_string(sorted_ok) + "/" + std::to_string(sorted_n) + ", lambda=0 " +
             std::to_string(lambda0_ok) + "/20, quota brute force " + std::to_string(quota_ok) + "/" +
             std::to_string(quota_n);
  return o;
}

// ---- AUC ----

Outcome auc_oracle() {
  std::mt19937_64 rng(15);
  Outcome o;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 200;
    const int levels = trial % 4 == 0 ? 5 : 100000;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % levels) / levels;
      y[i] = static_cast<std::uint8_t>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    worst = std::max(worst, std::abs(eval::auc(s, y) - oracle::auc_trapezoid(s, y)));
  }
  const std::vector<double> s1{0.1, 0.2, 0.8, 0.9}, s2{0.5, 0.5, 0.5, 0.5}, s3{0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> y1{0, 0, 1, 1}, y2{0, 1, 0, 1};
  const bool hand = eval::auc(s1, y1) == 1.0 && eval::auc(s2, y2) == 0.5 && eval::auc(s3, y1) == 0.75;
  o.pass = worst <= 1e-9 && hand;
  o.detail = "max gap vs trapezoid " + fmt("%.1e", worst) + " over 100 cases, hand cases " + (hand ? "exact" : "WRONG");
  return o;
}

// ---- simulator bias experiment ----

Outcome simulator_bias() {
  const auto profile = load_profile("sim");
  auto full = profile.train;
  auto baseline = profile.train;
  baseline.loss_weights.lambda1 = 0.0;
  baseline.loss_weights.lambda2 = 0.0;
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
  const auto t0 = Clock::now();
  const auto rows = sim::run_ablation(profile.sim, profile.model, {{"baseline", baseline}, {"full", full}}, seeds);
  const double secs = seconds_since(t0);
  std::map<std::string, std::vector<double>> auc, ent;
  for (const auto& r : rows) {
    auc[r.variant].push_back(r.auc_micro);
    ent[r.variant].push_back(r.usage_entropy);
  }
  const double ab = sim::median(auc["baseline"]), af = sim::median(auc["full"]);
  const double hb = sim::median(ent["baseline"]), hf = sim::median(ent["full"]);
  Outcome o;
  o.pass = af >= ab + 0.02 && hf >= hb && secs < 600.0;
  o.detail = "pseudo_norm_scale " + fmt("%.3f", profile.sim.pseudo_norm_scale) + ", 10 seeds, median AUC baseline " +
             fmt("%.4f", ab) + " full " + fmt("%.4f", af) + ", median H(u) baseline " + fmt("%.3f", hb) + " full " +
             fmt("%.3f", hf) + ", " + fmt("%.1fs", secs);
  return o;
}

// ---- determinism ----

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pavad");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return pavad::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return files;
}

Outcome determinism() {
  TempDir dir("accept_det");
  Outcome o;
  for (const char* run : {"a", "b"}) {
    const fs::path root = dir / run;
    const int rc = cli({"simulate", "--seed", "3", "--out", (root / "data").string()}) +
                   cli({"train", "--seed", "3", "--steps", "100", "--manifest", (root / "data/train_manifest.json").string(),
                        "--out", (root / "run").string()}) +
                   cli({"eval", "--checkpoint", (root / "run/checkpoint").string(), "--manifest",
                        (root / "data/test_manifest.json").string(), "--masks", (root / "data/test_masks.json").string(),
                        "--out", (root / "eval").string()});
    if (rc != 0) {
      o.pass = false;
      o.detail = "a command failed";
      return o;
    }
  }
  const auto a = snapshot(dir / "a"), b = snapshot(dir / "b");
  std::size_t bytes = 0;
  for (const auto& [_, v] : a) bytes += v.size();
  o.pass = !a.empty() && a == b && a.count("run/loss_log.jsonl") && a.count("eval/metrics.json");
  o.detail = std::to_string(a.size()) + " files, " + std::to_string(bytes) + " bytes compared across two runs";
  return o;
}

// ---- formats ----

Outcome format_round_trip() {
  std::mt19937_64 rng(16);
  TempDir dir("accept_fmt");
  Outcome o;
  std::size_t tensors = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint32_t rows = 1 + rng() % 9, cols = 1 + rng() % 9;
    std::vector<float> v(rows * cols);
    std::normal_distribution<float> nd(0.f, 100.f);
    for (auto& x : v) x = nd(rng);
    v[0] = -0.0f;
    if (v.size() > 1) v[1] = std::numeric_limits<float>::denorm_min();
    const auto t = trial % 5 == 0 ? io::PavfTensor::vector(v) : io::PavfTensor::matrix(rows, cols, v);
    const auto path = dir / ("t" + std::to_string(trial) + ".pavf");
    io::write_tensor(t, path);
    std::ifstream in(path, std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto parsed = oracle::parse_pavf(bytes);
    const auto back = io::read_tensor(path);
    bool same = back.dims == t.dims && parsed.dims == t.dims && io::encode_pavf(back) == bytes;
    for (std::size_t i = 0; same && i < v.size(); ++i)
      same = std::memcmp(&back.data[i], &v[i], 4) == 0 && std::memcmp(&parsed.values[i], &v[i], 4) == 0;
    if (!same) o.pass = false;
    ++tensors;
  }

  for (const char* id : {"a", "b"}) io::write_tensor(io::PavfTensor::matrix(3, 4, std::vector<float>(12, 1.f)), dir / (std::string(id) + ".pavf"));
  io::write_tensor(io::PavfTensor::vector({1, 2, 3}), dir / "vec.pavf");
  { std::ofstream(dir / "junk.pavf", std::ios::binary) << "PAVFxxxx"; }
  auto entry = [](const std::string& id, const std::string& label = "normal", const std::string& domain = "real") {
    return json{{"path", id + ".pavf"}, {"video_id", id},        {"label", label},     {"domain", domain},
                {"scene_id", "s0"},     {"frames_per_row", 16}, {"total_frames", 40}};
  };
  auto without = [&](const char* field) {
    auto e = entry("a");
    e.erase(field);
    return json{{"entries", {e}}};
  };
  auto with = [&](const char* field, json value) {
    auto e = entry("a");
    e[field] = std::move(value);
    return json{{"entries", {e}}};
  };
  using C = io::ManifestErrorCode;
  const std::vector<std::tuple<std::string, json, C, io::ManifestPurpose>> cases{
      {"unparseable", json("text"), C::parse, io::ManifestPurpose::any},
      {"no entries", json::object(), C::missing_field, io::ManifestPurpose::any},
      {"missing path", without("path"), C::missing_field, io::ManifestPurpose::any},
      {"missing scene", without("scene_id"), C::missing_field, io::ManifestPurpose::any},
      {"bad label", with("label", "weird"), C::bad_value, io::ManifestPurpose::any},
      {"bad domain", with("domain", "synthetic"), C::bad_value, io::ManifestPurpose::any},
      {"zero frames per row", with("frames_per_row", 0), C::bad_value, io::ManifestPurpose::any},
      {"negative total", with("total_frames", -4), C::bad_value, io::ManifestPurpose::any},
      {"duplicate id", json{{"entries", {entry("a"), entry("a")}}}, C::duplicate_video_id, io::ManifestPurpose::any},
      {"missing tensor", with("path", "nowhere.pavf"), C::missing_tensor, io::ManifestPurpose::any},
      {"corrupt tensor", with("path", "junk.pavf"), C::bad_tensor, io::ManifestPurpose::any},
      {"rank-1 features", with("path", "vec.pavf"), C::bad_tensor, io::ManifestPurpose::any},
      {"frame count", with("total_frames", 49), C::frame_count_mismatch, io::ManifestPurpose::any},
      {"real abnormal in training", json{{"entries", {entry("a", "abnormal", "real")}}}, C::real_abnormal_in_training,
       io::ManifestPurpose::training},
  };
  std::size_t rejected = 0;
  for (const auto& [name, doc, code, purpose] : cases) {
    try {
      io::parse_manifest(doc.dump(), dir.path(), purpose);
    } catch (const io::ManifestError& e) {
      if (e.code() == code) {
        ++rejected;
        continue;
      }
    } catch (...) {
    }
    o.pass = false;
    o.detail += "[" + name + " not rejected as " + io::to_string(code) + "] ";
  }
  o.detail += std::to_string(tensors) + " tensors bitwise identical, " + std::to_string(rejected) + "/" +
              std::to_string(cases.size()) + " malformations rejected with their code";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"grl-contract", grl_contract},
      {"assignment-usage-oracle", assignment_oracle},
      {"usage-update-closed-form", usage_update_closed_form},
      {"selection-oracle", selection_oracle},
      {"auc-oracle", auc_oracle},
      {"simulator-bias", simulator_bias},
      {"determinism", determinism},
      {"format-round-trip", format_round_trip},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
