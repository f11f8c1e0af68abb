#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "nmcdr/cli/experiment.hpp"
#include "nmcdr/model/checkpoint.hpp"
#include "nmcdr/util/io.hpp"

namespace nmcdr::cli {

using nlohmann::json;

namespace {

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Only the inputs that shape the prepared data.
std::string data_config_hash(const ExperimentConfig& c) {
  auto j = c.to_json();
  json d{{"data", j["data"]}, {"seed", j["seed"]}};
  if (c.data.source == "synthetic") d["synthetic"] = j["synthetic"];
  return io::content_hash(d.dump());
}

std::array<std::vector<data::RawInteraction>, 2> read_sources(const ExperimentConfig& c) {
  if (c.data.source == "synthetic") {
    auto spec = c.synthetic;
    spec.seed = c.seed;
    return generate_synthetic(spec).interactions;
  }
  if (c.data.z.empty() || c.data.zbar.empty()) throw ConfigError("data.z and data.zbar must name the two rating files");
  return {data::read_interactions(c.data.z, c.data.format), data::read_interactions(c.data.zbar, c.data.format)};
}

json split_stats(const data::SplitSpec& split) {
  json j;
  for (std::size_t d = 0; d < 2; ++d) {
    std::size_t users = 0;
    std::size_t train = 0;
    for (const auto& u : split.domains[d].users) {
      if (!u) continue;
      ++users;
      train += u->train.size();
    }
    j[std::string(data::kDomainNames[d])] = {
        {"evaluated_users", users}, {"excluded_users", split.domains[d].excluded}, {"train_edges", train}};
  }
  j["validation"] = split.with_validation;
  return j;
}

}  // namespace

Prepared cmd_prepare(const ExperimentConfig& c, const fs::path& out) {
  const auto raw = read_sources(c);
  std::array<data::DomainIndex, 2> idx;
  for (std::size_t d = 0; d < 2; ++d) {
    idx[d] = data::DomainIndex::from_raw(raw[d], c.data.min_interactions);
    if (idx[d].user_count() == 0) {
      const std::string src = c.data.source == "files" ? (d == 0 ? c.data.z : c.data.zbar) : "synthetic data";
      throw data::DataError(src + ": no users left after filtering (min interactions " +
                            std::to_string(c.data.min_interactions) + ")");
    }
  }
  Prepared p;
  p.dataset = data::build_cross(std::move(idx[0]), std::move(idx[1]), c.data.overlap_ratio,
                                num::stream_seed(c.seed, "ingest"));
  if (c.data.density < 1.0) p.dataset = data::apply_density(p.dataset, c.data.density, num::stream_seed(c.seed, "density"));
  p.split = data::split(p.dataset, {c.data.split, c.data.validation, 3}, num::stream_seed(c.seed, "split"));

  const auto dataset_json = data::to_json(p.dataset);
  const auto split_json = data::to_json(p.split);
  p.data_hash = io::content_hash(dataset_json.dump() + split_json.dump());
  const auto config_hash = c.hash();
  const auto data_cfg = data_config_hash(c);

  json stats = p.dataset.stats_json();
  stats["split"] = split_stats(p.split);
  stats["source"] = c.data.source;
  stats["min_interactions"] = c.data.min_interactions;
  stats["preprocessing"] =
      "per domain: keep the latest of duplicate (user, item) pairs, drop users below min_interactions, "
      "expose round(overlap_ratio x intersection) overlapped users, keep a density fraction of edges (users left with fewer "
      "than 3 removed), then hold out one test item per user (and one validation item when enabled)";
  if (c.data.source == "files") stats["files"] = {c.data.z, c.data.zbar};
  stats["config_hash"] = config_hash;
  stats["data_hash"] = p.data_hash;

  fs::create_directories(out);
  io::write_file_atomic(out / "dataset.json",
                        json{{"data_config_hash", data_cfg}, {"data_hash", p.data_hash}, {"dataset", dataset_json}}.dump());
  io::write_file_atomic(out / "split.json", json{{"data_hash", p.data_hash}, {"split", split_json}}.dump());
  io::write_file_atomic(out / "stats.json", dump(stats));
  spdlog::info("prepared {} ({} + {} users, {} overlapped)", out.string(), p.dataset.domain(0).user_count(),
               p.dataset.domain(1).user_count(), p.dataset.overlap().size());
  return p;
}

Prepared load_or_prepare(const ExperimentConfig& c, const fs::path& dir) {
  const auto ds_path = dir / "dataset.json";
  const auto sp_path = dir / "split.json";
  if (fs::exists(ds_path) && fs::exists(sp_path)) {
    const auto ds = json::parse(io::read_file(ds_path));
    const auto sp = json::parse(io::read_file(sp_path));
    if (ds.value("data_config_hash", "") == data_config_hash(c) && sp.value("data_hash", "") == ds.value("data_hash", "")) {
      Prepared p;
      p.dataset = data::dataset_from_json(ds.at("dataset"));
      p.split = data::split_from_json(sp.at("split"));
      p.data_hash = ds.at("data_hash").get<std::string>();
      return p;
    }
    spdlog::info("prepared data in {} does not match the config; rebuilding", dir.string());
  }
  return cmd_prepare(c, dir);
}

void cmd_synth(const data::SyntheticSpec& spec, const fs::path& out) {
  const auto gen = data::generate_synthetic(spec);
  fs::create_directories(out);
  io::write_file_atomic(out / "z.tsv", data::to_tsv(gen.interactions[0]));
  io::write_file_atomic(out / "zbar.tsv", data::to_tsv(gen.interactions[1]));
  io::write_file_atomic(out / "truth.json", gen.truth.to_json().dump());
  io::write_file_atomic(out / "spec.json", dump(spec.to_json()));
}

RunOutputs cmd_run(const ExperimentConfig& c, const fs::path& out) {
  const auto prepared = load_or_prepare(c, out);
  const auto& ds = prepared.dataset;
  const auto& split = prepared.split;
  const auto td = training::prepare_training_data(ds, split, c.k_head, c.matching);
  std::array<model::DomainShape, 2> shapes;
  for (std::size_t d = 0; d < 2; ++d) shapes[d] = {ds.domain(d).user_count(), ds.domain(d).item_count()};
  auto params = model::init_params(c.model, shapes, num::stream_seed(c.seed, "init"));
  const auto flags = c.flags();
  const bool nmcdr = c.model.kind == model::ModelKind::Nmcdr;
  model::Structure eval_structure;
  if (nmcdr) eval_structure = training::evaluation_structure(td, c.seed);

  eval::EvalOptions val_opt;
  val_opt.negatives = c.eval.negatives;
  val_opt.k = c.eval.k;
  val_opt.target = eval::Target::Validation;
  val_opt.seed = num::stream_seed(c.seed, "val-negatives");
  training::Validator validator;
  if (split.with_validation && c.train.eval_every > 0) {
    validator = [&](const num::ParamStore& p) {
      const auto r = eval::evaluate(ds, split, eval::model_scorer(c.model, p, eval_structure, flags), val_opt);
      return std::array<double, 2>{r.domains[0].ndcg, r.domains[1].ndcg};
    };
  }
  RunOutputs outputs;
  outputs.train = training::train(td, params, c.model, flags, c.loss, c.train, c.seed, validator);

  eval::EvalOptions test_opt = val_opt;
  test_opt.target = eval::Target::Test;
  test_opt.seed = num::stream_seed(c.seed, "eval-negatives");
  outputs.report =
      eval::evaluate(ds, split, eval::model_scorer(c.model, outputs.train.params, eval_structure, flags), test_opt);
  const auto popularity = eval::evaluate(ds, split, eval::popularity_scorer(td.graphs), test_opt);

  const auto config_hash = c.hash();
  std::size_t param_count = 0;
  for (const auto& [name, t] : outputs.train.params) param_count += t.size();
  auto& meta = outputs.report.metadata;
  meta["config_hash"] = config_hash;
  meta["data_hash"] = prepared.data_hash;
  meta["variant"] = c.variant;
  meta["model"] = model::model_kind_name(c.model.kind);
  const auto flag_json = model::to_json(flags);
  for (const auto& [k, v] : flag_json.items()) meta[k] = v;
  meta["seed"] = c.seed;
  meta["epochs_run"] = outputs.train.epochs_run;
  meta["best_epoch"] = outputs.train.best_epoch ? json(*outputs.train.best_epoch) : json(nullptr);
  meta["parameters"] = param_count;
  meta["overlap_ratio"] = c.data.overlap_ratio;
  meta["matching_size"] = c.matching.sample_size;
  json report = outputs.report.to_json();
  report["popularity_baseline"] = popularity.to_json()["domains"];
  report["ndcg_mean"] = 0.5 * (outputs.report.domains[0].ndcg + outputs.report.domains[1].ndcg);
  report["hr_mean"] = 0.5 * (outputs.report.domains[0].hr + outputs.report.domains[1].hr);

  std::string history;
  for (const auto& h : outputs.train.history) history += h.dump() + "\n";
  const std::string report_text = dump(report);
  const std::string per_user = outputs.report.per_user_csv(ds);
  model::Checkpoint ck{outputs.train.params, config_hash,
                       json{{"data_hash", prepared.data_hash}, {"variant", c.variant}, {"seed", c.seed},
                            {"model", c.model.to_json()}}};
  const std::string checkpoint = model::encode_checkpoint(ck);

  fs::create_directories(out);
  io::write_file_atomic(out / "history.jsonl", history);
  io::write_file_atomic(out / "report.json", report_text);
  io::write_file_atomic(out / "peruser.csv", per_user);
  io::write_file_atomic(out / "checkpoint.nmcdr", checkpoint);
  json manifest{{"config_hash", config_hash},
                {"data_hash", prepared.data_hash},
                {"config", c.to_json()},
                {"files",
                 {{"history.jsonl", io::content_hash(history)},
                  {"report.json", io::content_hash(report_text)},
                  {"peruser.csv", io::content_hash(per_user)},
                  {"checkpoint.nmcdr", io::content_hash(checkpoint)}}}};
  io::write_file_atomic(out / "manifest.json", dump(manifest));
  spdlog::info("{}: NDCG@10 Z {:.4f}, Zbar {:.4f}", out.string(), outputs.report.domains[0].ndcg,
               outputs.report.domains[1].ndcg);
  return outputs;
}

namespace {

std::string value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string safe_dir(std::string s) {
  for (char& ch : s)
    if (ch == '/' || ch == ' ' || ch == '"') ch = '_';
  return s;
}

std::string leaf(const std::string& key) {
  const auto dot = key.rfind('.');
  return dot == std::string::npos ? key : key.substr(dot + 1);
}

std::string column_name(const std::string& key) {
  const auto l = leaf(key);
  if (l == "matching_size") return "S";
  if (l == "overlap_ratio") return "K_u";
  if (l == "density") return "D_s";
  return l;
}

double report_ndcg(const fs::path& dir) {
  const auto r = json::parse(io::read_file(dir / "report.json"));
  return r.at("ndcg_mean").get<double>();
}

}  // namespace

std::vector<SweepPoint> cmd_sweep(const ExperimentConfig& c, const fs::path& out, std::size_t jobs) {
  if (c.sweep.key.empty() || c.sweep.values.empty()) throw ConfigError("sweep.key and sweep.values must be set");
  if (c.sweep.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
  struct Task {
    ExperimentConfig config;
    fs::path dir;
  };
  std::vector<Task> tasks;
  for (const auto& v : c.sweep.values) {
    for (auto seed : c.sweep.seeds) {
      auto j = c.to_json();
      apply_override(j, c.sweep.key + "=" + (v.is_string() ? v.get<std::string>() : v.dump()));
      j["seed"] = seed;
      auto cfg = config_from_json(j);
      tasks.push_back({cfg, out / safe_dir(leaf(c.sweep.key) + "=" + value_label(v)) / ("seed-" + std::to_string(seed))});
    }
  }
  if (jobs <= 1) {
    for (const auto& t : tasks) cmd_run(t.config, t.dir);
  } else {
    // Independent processes with disjoint output directories.
    std::size_t next = 0;
    std::size_t running = 0;
    std::size_t failed = 0;
    while (next < tasks.size() || running > 0) {
      while (running < jobs && next < tasks.size()) {
        const pid_t pid = fork();
        if (pid < 0) throw std::runtime_error("fork failed");
        if (pid == 0) {
          int code = 0;
          try {
            cmd_run(tasks[next].config, tasks[next].dir);
          } catch (const std::exception& e) {
            spdlog::error("{}: {}", tasks[next].dir.string(), e.what());
            code = 1;
          }
          std::fflush(nullptr);
          _exit(code);
        }
        ++next;
        ++running;
      }
      int status = 0;
      if (wait(&status) > 0) {
        --running;
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failed;
      }
    }
    if (failed > 0) throw std::runtime_error(std::to_string(failed) + " sweep run(s) failed");
  }

  std::vector<SweepPoint> points;
  std::size_t k = 0;
  for (const auto& v : c.sweep.values) {
    SweepPoint p;
    p.value = v;
    for (std::size_t s = 0; s < c.sweep.seeds.size(); ++s) p.ndcg.push_back(report_ndcg(tasks[k++].dir));
    const double n = static_cast<double>(p.ndcg.size());
    p.mean = std::accumulate(p.ndcg.begin(), p.ndcg.end(), 0.0) / n;
    double ss = 0;
    for (double x : p.ndcg) ss += (x - p.mean) * (x - p.mean);
    p.std = p.ndcg.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    p.best = *std::max_element(p.ndcg.begin(), p.ndcg.end());
    points.push_back(p);
  }

  std::ostringstream csv;
  csv.precision(17);
  csv << column_name(c.sweep.key) << ",ndcg_mean,ndcg_std\n";
  json summary{{"key", c.sweep.key}, {"seeds", c.sweep.seeds}, {"config_hash", c.hash()}, {"points", json::array()}};
  for (const auto& p : points) {
    csv << value_label(p.value) << ',' << p.mean << ',' << p.std << '\n';
    summary["points"].push_back({{"value", p.value}, {"ndcg", p.ndcg}, {"mean", p.mean}, {"std", p.std}, {"best", p.best}});
  }
  fs::create_directories(out / "plotdata");
  io::write_file_atomic(out / "plotdata" / (safe_dir(leaf(c.sweep.key)) + ".csv"), csv.str());
  io::write_file_atomic(out / "sweep.json", dump(summary));
  return points;
}

json cmd_stability(const ExperimentConfig& c, const fs::path& out) {
  const auto& s = c.stability;
  std::optional<model::Checkpoint> ck;
  if (s.source == "checkpoint") {
    if (s.checkpoint.empty()) throw ConfigError("stability.checkpoint must name a checkpoint archive");
    ck = model::load_checkpoint(s.checkpoint);
  }
  const auto root = num::stream_seed(c.seed, "stability");
  json diags = json::array();
  bool all_within = true;
  double worst = 0;
  for (std::size_t k = 0; k < s.configurations; ++k) {
    eval::RandomStabilitySpec spec;
    spec.nodes = s.nodes;
    spec.feature_dim = s.feature_dim;
    spec.hidden_dim = s.hidden_dim;
    spec.output_dim = s.output_dim;
    spec.edge_probability = s.edge_probability;
    spec.weight_scale = s.weight_scale;
    std::optional<eval::CompressedModel> trained;
    if (ck) {
      trained = eval::compress_trained(ck->params, k % 2);
      spec.feature_dim = trained->wa1.cols();
      spec.hidden_dim = trained->wa1.rows();
      spec.output_dim = trained->wa3.rows();
    }
    auto [m, g] = eval::random_stability_instance(spec, num::derive_seed(root, k));
    if (trained) m = *trained;
    eval::StabilityOptions opt{s.trials, s.perturbation_scale, s.c_sf, s.c_sp, num::derive_seed(root, k, 1)};
    const auto d = eval::stability_check(m, g, opt);
    auto j = d.to_json();
    j["configuration"] = k;
    if (ck) j["domain"] = data::kDomainNames[k % 2];
    diags.push_back(j);
    all_within = all_within && d.within_bound;
    if (d.gamma_hat > 0) worst = std::max(worst, d.empirical_ratio / d.gamma_hat);
  }
  json result{{"config_hash", c.hash()},
              {"source", s.source},
              {"nodes", s.nodes},
              {"trials", s.trials},
              {"c_sf", s.c_sf},
              {"c_sp", s.c_sp},
              {"configurations", s.configurations},
              {"all_within_bound", all_within},
              {"max_ratio_over_bound", worst},
              {"diagnostics", diags}};
  fs::create_directories(out);
  io::write_file_atomic(out / "stability.json", dump(result));
  return result;
}

std::vector<json> cmd_report(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error(root.string() + " is not a directory");
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "report.json") found.push_back(e.path());
  std::sort(found.begin(), found.end());
  std::vector<json> rows;
  std::ostringstream csv;
  csv.precision(17);
  csv << "run,variant,seed,hr_Z,ndcg_Z,hr_Zbar,ndcg_Zbar,ndcg_mean\n";
  for (const auto& p : found) {
    const auto r = json::parse(io::read_file(p));
    const auto& m = r.at("metadata");
    const auto& d = r.at("domains");
    json row{{"run", fs::relative(p.parent_path(), root).generic_string()},
             {"variant", m.value("variant", "")},
             {"seed", m.value("seed", 0)},
             {"hr_Z", d.at("Z").at("hr@10")},
             {"ndcg_Z", d.at("Z").at("ndcg@10")},
             {"hr_Zbar", d.at("Zbar").at("hr@10")},
             {"ndcg_Zbar", d.at("Zbar").at("ndcg@10")},
             {"ndcg_mean", r.value("ndcg_mean", 0.0)}};
    csv << row["run"].get<std::string>() << ',' << row["variant"].get<std::string>() << ',' << row["seed"] << ','
        << row["hr_Z"].get<double>() << ',' << row["ndcg_Z"].get<double>() << ',' << row["hr_Zbar"].get<double>()
        << ',' << row["ndcg_Zbar"].get<double>() << ',' << row["ndcg_mean"].get<double>() << '\n';
    rows.push_back(std::move(row));
  }
  io::write_file_atomic(root / "summary.csv", csv.str());
  return rows;
}

}  // namespace nmcdr::cli
