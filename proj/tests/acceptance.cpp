// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
//
//   acceptance [--only name[,name...]] [--work dir] [--strict]
//
// Exit status is 0 unless --strict is given and a criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "dense_oracle.hpp"
#include "gradcheck.hpp"
#include "model_fixture.hpp"
#include "nmcdr/cli/experiment.hpp"
#include "nmcdr/util/io.hpp"
#include "primitive_cases.hpp"

using namespace nmcdr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum Status { Pass, Fail, Skip } status = Fail;
  std::string detail;
};

std::string fmt_sci(double x) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(2);
  s << x;
  return s.str();
}

std::string fmt_double(double x, int precision = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << x;
  return s.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------- gradients

model::ModelConfig grad_config() {
  model::ModelConfig c;
  c.dim = c.d_hge = c.d_igm = c.d_cgm = c.d_ref = 3;
  c.mlp_hidden = {3};
  return c;
}

std::array<training::Batch, 2> labeled_batches(const testing::World& w) {
  std::array<training::Batch, 2> out;
  for (std::size_t d = 0; d < 2; ++d) {
    const auto& dom = w.dataset.domain(d);
    for (data::Id u = 0; u < dom.user_count(); ++u)
      for (data::Id i = u % 2; i < dom.item_count(); i += 2) {
        out[d].users.push_back(u);
        out[d].items.push_back(i);
        out[d].labels.push_back(dom.has_interaction(u, i) ? 1.0 : 0.0);
      }
  }
  return out;
}

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  std::size_t failures = 0;
  std::size_t checks = 0;
  double worst = 0;
  for (const auto& c : testing::primitive_cases()) {
    failures += testing::run_primitive_trials(c, 100, 17, &worst);
    checks += 100;
  }
  testing::WorldSpec spec;
  spec.users = 5;
  spec.items = 6;
  spec.min_degree = 3;
  spec.max_degree = 5;
  spec.k_head = 3;
  spec.overlap = 0.6;
  const auto w = testing::make_world(spec);
  if (w.dataset.domain(0).user_count() != 5 || w.dataset.domain(0).item_count() != 6)
    return {Outcome::Fail, "fixture is not a 5-user, 6-item instance"};
  auto cfg = grad_config();
  for (std::uint64_t seed : {1, 2}) {
    for (const auto& variant : model::ablation_variant_names()) {
      const auto ps = testing::random_params(cfg, w, seed);
      num::Tape t;
      model::BoundParams p(t, ps);
      auto terms = training::total_loss(t, p, cfg, w.structure, model::ablation_variant(variant), {}, labeled_batches(w));
      const auto r = testing::check_gradients(t, terms.total);
      worst = std::max(worst, r.worst_relative);
      failures += r.ok() ? 0 : 1;
      ++checks;
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = failures == 0 && seconds < 60.0;
  return {ok ? Outcome::Pass : Outcome::Fail,
          std::to_string(checks) + " checks, " + std::to_string(failures) + " failing, " +
              (worst > 0 ? "worst relative error " + fmt_sci(worst) : "no difference above the 1e-7 floor") + ", " + fmt_double(seconds, 1) + " s (limit 60 s)"};
}

// ------------------------------------------------------------- dense oracle

double max_diff(const num::Tensor& t, const testing::oracle::Mat& m) {
  if (t.rows() != m.size()) return INFINITY;
  double worst = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (t.cols() != m[r].size()) return INFINITY;
    for (std::size_t c = 0; c < t.cols(); ++c) worst = std::max(worst, std::abs(t(r, c) - m[r][c]));
  }
  return worst;
}

Outcome dense_oracle() {
  double worst = 0;
  std::size_t cases = 0;
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    testing::WorldSpec spec;
    spec.users = 10 + 10 * seed;
    spec.items = 25;
    spec.seed = seed;
    spec.overlap = 0.25 * static_cast<double>(seed);
    const auto w = testing::make_world(spec);
    model::ModelConfig cfg;
    cfg.dim = cfg.d_hge = cfg.d_igm = cfg.d_cgm = cfg.d_ref = 4;
    cfg.mlp_hidden = {5, 3};
    const auto ps = testing::random_params(cfg, w, seed);
    const testing::oracle::Model ref(ps);
    for (int mask = 0; mask < 8; ++mask) {
      model::AblationFlags f;
      f.use_intra_matching = mask & 1;
      f.use_inter_matching = mask & 2;
      f.use_complementing = mask & 4;
      const auto got = model::stage_outputs(ps, w.structure, f);
      const auto want = ref.run(w.oracle_input(), {f.use_intra_matching, f.use_inter_matching, f.use_complementing});
      for (std::size_t d = 0; d < 2; ++d) {
        worst = std::max({worst, max_diff(got[d].g1, want[d].g1), max_diff(got[d].g2, want[d].g2),
                          max_diff(got[d].g3, want[d].g3), max_diff(got[d].g4, want[d].g4)});
      }
      ++cases;
    }
  }
  return {worst <= 1e-10 ? Outcome::Pass : Outcome::Fail,
          std::to_string(cases) + " fixture/variant cases (20 to 50 users), max deviation " + fmt_sci(worst) +
              " (limit 1e-10)"};
}

// ------------------------------------------------------------ metric oracle

eval::Scorer random_scorer(std::uint64_t seed, double quantum) {
  return [seed, quantum](std::size_t d, const std::vector<std::size_t>& users, const std::vector<std::size_t>& items) {
    std::vector<double> out(users.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
      num::Rng rng(num::derive_seed(seed, d, users[k], items[k]));
      out[k] = quantum > 0 ? std::floor(num::uniform01(rng) / quantum) * quantum : num::uniform01(rng);
    }
    return out;
  };
}

// 1-based rank by sorting; tied candidates share the average of their positions.
double sorted_rank(const std::vector<double>& scores, std::size_t positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double first = 0, last = 0;
  bool found = false;
  for (std::size_t p = 0; p < order.size(); ++p) {
    if (scores[order[p]] != scores[positive]) continue;
    if (!found) first = static_cast<double>(p + 1);
    last = static_cast<double>(p + 1);
    found = true;
  }
  return (first + last) / 2;
}

testing::WorldSpec metric_world(std::size_t users, std::size_t max_degree) {
  testing::WorldSpec s;
  s.users = users;
  s.items = 260;
  s.min_degree = 3;
  s.max_degree = max_degree;
  s.matching = {8, false};
  return s;
}

Outcome metric_oracle() {
  // Exact agreement with an independent sort-based evaluation, ties included.
  const auto w = testing::make_world(metric_world(50, 40));
  eval::EvalOptions opt;
  opt.seed = 5;
  const auto scorer = random_scorer(3, 0.02);
  const auto report = eval::evaluate(w.dataset, w.split, scorer, opt);
  std::size_t mismatches = 0;
  std::size_t compared = 0;
  for (std::size_t d = 0; d < 2; ++d) {
    double hits = 0, ndcg = 0;
    std::size_t users = 0;
    const auto& dom = w.dataset.domain(d);
    for (data::Id u = 0; u < dom.user_count(); ++u) {
      const auto& s = w.split.domains[d].users[u];
      if (!s) continue;
      std::vector<std::size_t> items{s->test};
      for (auto i : data::eval_negatives(dom, d, u, opt.negatives, opt.seed)) items.push_back(i);
      const auto scores = scorer(d, std::vector<std::size_t>(items.size(), u), items);
      const double rank = sorted_rank(scores, 0);
      const bool hit = rank <= 10;
      const double g = hit ? 1.0 / std::log2(rank + 1) : 0.0;
      hits += hit;
      ndcg += g;
      ++users;
      const auto it = std::find_if(report.per_user.begin(), report.per_user.end(),
                                   [&](const auto& r) { return r.domain == d && r.user == u; });
      if (it == report.per_user.end() || it->rank != rank || it->hit != hit || it->ndcg != g) ++mismatches;
      ++compared;
    }
    const auto& m = report.domains[d];
    if (m.users != users || std::abs(m.hr - hits / users) > 1e-15 || std::abs(m.ndcg - ndcg / users) > 1e-15) ++mismatches;
  }

  // Random scores: a held-out item lands in the top 10 of 200 with probability 0.05.
  const auto big = testing::make_world(metric_world(700, 10));
  const auto rr = eval::evaluate(big.dataset, big.split, random_scorer(11, 0), opt);
  std::size_t users = 0;
  double hits = 0;
  for (const auto& m : rr.domains) {
    users += m.users;
    hits += m.hr * static_cast<double>(m.users);
  }
  const double hr = hits / static_cast<double>(users);
  const double sigma = std::sqrt(0.05 * 0.95 / static_cast<double>(users));
  const bool ok = mismatches == 0 && compared >= 50 && users >= 500 && std::abs(hr - 0.05) <= 3 * sigma;
  return {ok ? Outcome::Pass : Outcome::Fail,
          std::to_string(compared) + " users compared with a sort-based ranking, " + std::to_string(mismatches) +
              " mismatches; random HR@10 " + fmt_double(hr) + " over " + std::to_string(users) + " users (0.05 +/- " +
              fmt_double(3 * sigma) + ")"};
}

// ---------------------------------------------------------- synthetic runs

struct RunCache {
  cli::ExperimentConfig base;
  fs::path work;
  std::map<std::string, double> ndcg;  // key: variant|overlap|seed
  double cpu = 0;

  double get(const std::string& variant, double overlap, std::uint64_t seed) {
    const std::string key = variant + "|" + fmt_double(overlap, 2) + "|" + std::to_string(seed);
    if (auto it = ndcg.find(key); it != ndcg.end()) return it->second;
    auto c = base;
    c.variant = variant;
    c.data.overlap_ratio = overlap;
    c.seed = seed;
    std::string leaf = variant;
    std::replace(leaf.begin(), leaf.end(), '/', '-');
    const auto dir = work / ("ku" + fmt_double(overlap, 2)) / leaf / ("seed-" + std::to_string(seed));
    const double t0 = cpu_seconds();
    const auto out = cli::cmd_run(c, dir);
    cpu += cpu_seconds() - t0;
    const double v = (out.report.domains[0].ndcg + out.report.domains[1].ndcg) / 2;
    std::cout << "  " << variant << " overlap " << overlap << " seed " << seed << ": NDCG@10 " << fmt_double(v) << "\n"
              << std::flush;
    return ndcg[key] = v;
  }
};

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

Outcome ablation_ordering(RunCache& runs) {
  const double cpu0 = runs.cpu;
  std::map<std::string, double> means;
  for (const auto& v : model::ablation_variant_names()) {
    std::vector<double> xs;
    for (auto s : kSeeds) xs.push_back(runs.get(v, 0.5, s));
    means[v] = mean(xs);
  }
  const double cpu = runs.cpu - cpu0;
  std::string lowest;
  for (const auto& v : model::ablation_variant_names())
    if (v != "full" && (lowest.empty() || means[v] < means[lowest])) lowest = v;
  const bool ok = means["full"] > means["w/o-Cgm"] && lowest == "w/o-Cgm" && cpu <= 600.0;
  std::string detail;
  for (const auto& v : model::ablation_variant_names()) detail += v + " " + fmt_double(means[v]) + ", ";
  detail += "lowest ablation " + lowest + ", " + fmt_double(cpu, 0) + " s CPU (limit 600 s)";
  return {ok ? Outcome::Pass : Outcome::Fail, detail};
}

Outcome overlap_trend(RunCache& runs) {
  const std::vector<double> ratios{0.1, 0.5, 0.9};
  std::vector<double> m, sd;
  for (double k : ratios) {
    std::vector<double> xs;
    for (auto s : kSeeds) xs.push_back(runs.get("full", k, s));
    m.push_back(mean(xs));
    sd.push_back(sample_std(xs));
  }
  std::size_t inversions = 0;
  bool within = true;
  for (std::size_t k = 0; k + 1 < m.size(); ++k) {
    if (m[k + 1] >= m[k]) continue;
    ++inversions;
    within = within && m[k] - m[k + 1] <= std::max(sd[k], sd[k + 1]);
  }
  const bool ok = inversions == 0 || (inversions == 1 && within);
  std::string detail;
  for (std::size_t k = 0; k < m.size(); ++k)
    detail += "overlap " + fmt_double(ratios[k], 1) + ": " + fmt_double(m[k]) + " +/- " + fmt_double(sd[k]) + ", ";
  detail += std::to_string(inversions) + " inversion(s)";
  return {ok ? Outcome::Pass : Outcome::Fail, detail};
}

// ---------------------------------------------------------------- stability

Outcome stability(const cli::ExperimentConfig& base, const fs::path& work) {
  auto c = base;
  c.stability = {};
  c.stability.configurations = 100;
  c.stability.nodes = 10;
  c.stability.trials = 1000;
  const auto r = cli::cmd_stability(c, work / "stability");
  std::size_t within = 0;
  for (const auto& d : r["diagnostics"]) within += d["within_bound"].get<bool>();
  const bool ok = within == 100;
  return {ok ? Outcome::Pass : Outcome::Fail,
          std::to_string(within) + "/100 configurations within the bound over 1000 trials each, max ratio/bound " +
              fmt_double(r["max_ratio_over_bound"].get<double>())};
}

// -------------------------------------------------------------- determinism

Outcome determinism(const cli::ExperimentConfig& base, const fs::path& work) {
  auto c = base;
  c.train.epochs = 5;
  c.data.validation = true;
  c.train.patience = 2;
  cli::cmd_run(c, work / "determinism" / "a");
  cli::cmd_run(c, work / "determinism" / "b");
  std::string differing;
  for (const char* f : {"history.jsonl", "checkpoint.nmcdr", "report.json", "peruser.csv", "manifest.json"}) {
    if (io::read_file(work / "determinism" / "a" / f) != io::read_file(work / "determinism" / "b" / f))
      differing += std::string(differing.empty() ? "" : ", ") + f;
  }
  return {differing.empty() ? Outcome::Pass : Outcome::Fail,
          differing.empty() ? "history, checkpoint, report, per-user and manifest files identical byte for byte"
                            : "differing: " + differing};
}

// --------------------------------------------------------------- real data

struct PairStats {
  std::string z, zbar;
  std::array<std::array<double, 3>, 2> counts;  // users, items, ratings
};

Outcome real_data(const cli::ExperimentConfig& base, const fs::path& work) {
  const char* dir = std::getenv("NMCDR_AMAZON_DIR");
  if (!dir) return {Outcome::Skip, "NMCDR_AMAZON_DIR is not set"};
  const std::vector<PairStats> table{
      {"music", "movie", {{{50841, 43858, 713740}, {87875, 38643, 1184889}}}},
      {"cloth", "sport", {{{27519, 9481, 161010}, {107984, 40460, 851553}}}},
      {"phone", "elec", {{{41829, 17943, 194121}, {27328, 12655, 170426}}}},
  };
  std::string detail;
  bool any = false;
  bool pass = false;
  for (const auto& p : table) {
    const fs::path z = fs::path(dir) / (p.z + ".csv");
    const fs::path zbar = fs::path(dir) / (p.zbar + ".csv");
    if (!fs::exists(z) || !fs::exists(zbar)) continue;
    any = true;
    auto c = base;
    c.data = {};
    c.data.source = "files";
    c.data.z = z.string();
    c.data.zbar = zbar.string();
    c.data.format = data::InputFormat::CsvRatings;
    const auto prepared = cli::cmd_prepare(c, work / "amazon" / (p.z + "-" + p.zbar));
    for (std::size_t d = 0; d < 2; ++d) {
      const auto s = prepared.dataset.domain(d).stats();
      const std::array<double, 3> got{static_cast<double>(s.users), static_cast<double>(s.items),
                                      static_cast<double>(s.ratings)};
      bool close = true;
      for (std::size_t k = 0; k < 3; ++k) close = close && std::abs(got[k] - p.counts[d][k]) <= 0.02 * p.counts[d][k];
      pass = pass || close;
      detail += (d == 0 ? p.z : p.zbar) + " " + std::to_string(s.users) + "/" + std::to_string(s.items) + "/" +
                std::to_string(s.ratings) + (close ? " (within 2%)" : " (outside 2%)") + "; ";
    }
  }
  if (!any) return {Outcome::Skip, "no <domain>.csv pairs found in NMCDR_AMAZON_DIR"};
  return {pass ? Outcome::Pass : Outcome::Fail, detail + "see stats.json for the preprocessing order"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only;
  std::string work = (fs::temp_directory_path() / "nmcdr-acceptance").string();
  bool strict = false;
  app.add_option("--only", only, "Comma-separated subset of criteria to run");
  app.add_option("--work", work, "Scratch directory for run artifacts");
  app.add_flag("--strict", strict, "Exit nonzero when a criterion fails");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  cli::ExperimentConfig base;
  try {
    base = cli::load_config(fs::path(NMCDR_ACCEPTANCE_CONFIG), {});
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  fs::remove_all(work);
  RunCache runs{base, fs::path(work) / "runs", {}, 0};

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"dense-oracle", dense_oracle},
      {"metric-oracle", metric_oracle},
      {"ablation-ordering", [&] { return ablation_ordering(runs); }},
      {"overlap-trend", [&] { return overlap_trend(runs); }},
      {"stability", [&] { return stability(base, fs::path(work)); }},
      {"determinism", [&] { return determinism(base, fs::path(work)); }},
      {"real-data", [&] { return real_data(base, fs::path(work)); }},
  };
  std::vector<std::string> selected;
  std::stringstream ss(only);
  for (std::string part; std::getline(ss, part, ',');) selected.push_back(part);
  for (const auto& name : selected) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::cerr << "error: unknown criterion '" << name << "'\n";
      return 2;
    }
  }

  std::size_t failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("error: ") + e.what()};
    }
    const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Skip ? "SKIP" : "FAIL";
    failed += o.status == Outcome::Fail;
    std::cout << tag << " " << name << ": " << o.detail << "\n" << std::flush;
  }
  return strict && failed > 0 ? 1 : 0;
}
