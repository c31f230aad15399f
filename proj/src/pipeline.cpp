#include "ftattr/pipeline.hpp"

#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "ftattr/error.hpp"
#include "ftattr/io.hpp"
#include "ftattr/svg.hpp"
#include "ftattr/training.hpp"

namespace ftattr {

namespace {

std::map<std::int64_t, std::size_t> id_index(const Dataset& ds) {
  std::map<std::int64_t, std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out[ds.ids()[i]] = i;
  return out;
}

std::string loss_log_csv(const Trajectory& traj, const ModelState& init, const Dataset& train) {
  std::ostringstream os;
  os << "epoch,objective,train_loss\n";
  os << 0 << ",," << format_double(mean_loss(init, train)) << '\n';
  for (std::size_t e = 0; e < traj.epoch_objective.size(); ++e) {
    os << e + 1 << ',' << format_double(traj.epoch_objective[e]) << ',';
    if (e + 1 == traj.epoch_objective.size()) os << format_double(mean_loss(traj.final_state, train));
    os << '\n';
  }
  return os.str();
}

ModelState load_final_model(const RunConfig& cfg, const Dataset& train) {
  const OutputLayout out(cfg.output);
  if (!std::filesystem::exists(out.final_model())) {
    throw ValidationError("model file not found: " + out.final_model().string() + " (run 'train' first)");
  }
  ModelState m = load_model(out.final_model());
  if (!(m.arch() == architecture_for(cfg, train))) {
    throw DimensionError("model file architecture does not match the config");
  }
  return m;
}

void write_flip_mask(const std::filesystem::path& path, const Dataset& train, const std::vector<std::uint8_t>& mask) {
  std::ostringstream os;
  os << "train_id,flipped\n";
  for (std::size_t i = 0; i < train.size(); ++i) os << train.ids()[i] << ',' << int(mask[i]) << '\n';
  write_text_file(path, os.str());
}

std::string subsets_json(const PreparedData& data) {
  std::vector<std::int64_t> loo, test;
  for (std::size_t i : data.subsets.train_subset) loo.push_back(data.train.ids()[i]);
  for (std::size_t j : data.subsets.test_indices) test.push_back(data.test.ids()[j]);
  nlohmann::json j = {{"train_subset", loo}, {"test_instances", test}, {"subset_seed", data.subsets.subset_seed}};
  return j.dump(2) + "\n";
}

PlotSeries curve_series(const std::string& label, const std::vector<CurvePoint>& points) {
  PlotSeries s;
  s.label = label;
  for (const CurvePoint& p : points) {
    s.x.push_back(static_cast<double>(p.step));
    s.y.push_back(p.mean);
    s.err.push_back(p.se);
  }
  return s;
}

}  // namespace

// ---- data ------------------------------------------------------------------

PreparedData prepare_data(const RunConfig& cfg) {
  cfg.validate();
  Dataset full;
  if (cfg.dataset.source == DatasetConfig::Source::csv) {
    full = load_csv(cfg.dataset.path, cfg.dataset.schema);
  } else {
    full = make_synthetic(cfg.dataset.synthetic).data;
  }
  TrainTestSplit tts = split(full, cfg.split);
  PreparedData out;
  out.train = tts.train;
  out.test = tts.test;
  if (cfg.dataset.standardize) {
    std::vector<std::size_t> rows(out.train.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    const StandardizationStats stats = fit_standardization(out.train.features(), rows);
    out.train = out.train.with_features(apply_standardization(out.train.features(), stats));
    out.test = out.test.with_features(apply_standardization(out.test.features(), stats));
  }
  if (cfg.l > out.train.size()) {
    throw ValidationError("config: eval.l = " + std::to_string(cfg.l) + " exceeds the " +
                          std::to_string(out.train.size()) + " training instances");
  }
  if (cfg.m > out.test.size()) {
    throw ValidationError("config: eval.m = " + std::to_string(cfg.m) + " exceeds the " +
                          std::to_string(out.test.size()) + " test instances");
  }
  out.subsets = choose_subsets(out.train.size(), out.test.size(), cfg.l, cfg.m, cfg.subset_seed);
  if (cfg.dataset.flip_fraction > 0.0) {
    FlipResult flip;
    if (cfg.dataset.flip_within_subset) {
      flip = flip_labels_among(out.train, out.subsets.train_subset, cfg.dataset.flip_fraction, cfg.dataset.flip_seed);
    } else {
      flip = flip_labels(out.train, cfg.dataset.flip_fraction, cfg.dataset.flip_seed);
    }
    out.train = flip.data;
    out.flipped = flip.flipped;
  }
  return out;
}

Architecture architecture_for(const RunConfig& cfg, const Dataset& train) {
  return Architecture::mlp(train.dim(), cfg.hidden, train.task());
}

// ---- attribution files ---------------------------------------------------------

void write_attributions_csv(const std::filesystem::path& path, const std::string& method,
                            const std::vector<AttributionVector>& vectors, const EvalSubsets& subsets,
                            const Dataset& train, const Dataset& test) {
  std::ostringstream os;
  os << "method,test_id,loo_id,score\n";
  for (const AttributionVector& v : vectors) {
    for (std::size_t k = 0; k < subsets.train_subset.size(); ++k) {
      os << method << ',' << test.ids()[v.test_index] << ',' << train.ids()[subsets.train_subset[k]] << ','
         << format_double(v.scores(static_cast<Eigen::Index>(k))) << '\n';
    }
  }
  write_text_file(path, os.str());
}

MethodScores read_attributions_csv(const std::filesystem::path& path, const Dataset& train, const Dataset& test) {
  const CsvTable table = read_csv_table(path);
  const std::size_t c_method = table.column("method"), c_test = table.column("test_id"),
                    c_loo = table.column("loo_id"), c_score = table.column("score");
  const auto train_ids = id_index(train);
  const auto test_ids = id_index(test);
  MethodScores out;
  std::map<std::size_t, std::size_t> test_pos, loo_pos;
  std::vector<std::vector<std::pair<std::size_t, double>>> cells;
  for (const auto& row : table.rows) {
    if (out.method.empty()) out.method = row[c_method];
    const auto tid = test_ids.find(static_cast<std::int64_t>(parse_double(row[c_test])));
    const auto lid = train_ids.find(static_cast<std::int64_t>(parse_double(row[c_loo])));
    if (tid == test_ids.end() || lid == train_ids.end()) {
      throw AlignmentError(path.string() + ": id not present in the prepared data");
    }
    if (!test_pos.count(tid->second)) {
      test_pos[tid->second] = out.test_ids.size();
      out.test_ids.push_back(tid->second);
      cells.emplace_back();
    }
    if (!loo_pos.count(lid->second)) {
      loo_pos[lid->second] = out.loo_ids.size();
      out.loo_ids.push_back(lid->second);
    }
    cells[test_pos[tid->second]].emplace_back(loo_pos[lid->second], parse_double(row[c_score]));
  }
  for (const auto& c : cells) {
    if (c.size() != out.loo_ids.size()) throw AlignmentError(path.string() + ": ragged attribution table");
    Eigen::VectorXd v(static_cast<Eigen::Index>(out.loo_ids.size()));
    for (const auto& [pos, score] : c) v(static_cast<Eigen::Index>(pos)) = score;
    out.scores.push_back(v);
  }
  return out;
}

std::vector<AttributionVector> run_attributor(const AttributionProblem& prob, const Dataset& test,
                                              const EvalSubsets& subsets, const AttributorConfig& a,
                                              std::size_t workers) {
  const std::size_t m = subsets.test_indices.size();
  std::vector<AttributionVector> out(m);
  std::optional<TrakProjector> trak;
  std::optional<DataInfAttributor> dinf;
  if (a.method == "trak") trak.emplace(prob, a.trak);
  if (a.method == "datainf") dinf.emplace(prob, a.datainf);
  parallel_for(m, workers, [&](std::size_t j) {
    const std::size_t t = subsets.test_indices[j];
    const Eigen::VectorXd g = test_gradient(prob.model(), test, t);
    AttributionVector v;
    if (a.method == "grad_dot") {
      v = grad_dot(prob, g, a.damping);
    } else if (a.method == "grad_cos") {
      v = grad_cos(prob, g);
    } else if (a.method == "influence") {
      v = influence_attr(prob, g, a.influence);
    } else if (a.method == "generalized_influence") {
      v = generalized_influence_attr(prob, g, a.influence, a.variant);
    } else if (a.method == "trak") {
      v = trak->attribute(g);
    } else if (a.method == "datainf") {
      v = dinf->attribute(g);
    } else {
      throw ValidationError("unknown attribution method '" + a.method + "'");
    }
    if (!v.scores.allFinite()) throw NumericalError(a.name + ": non-finite attribution scores");
    v.test_index = t;
    out[j] = std::move(v);
  });
  return out;
}

// ---- commands --------------------------------------------------------------

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const PreparedData data = prepare_data(cfg);
  const OutputLayout out(cfg.output);
  write_text_file(out.root / "config.json", config_to_json(cfg));
  write_dataset_csv(out.data() / "train.csv", data.train);
  write_dataset_csv(out.data() / "test.csv", data.test);
  write_text_file(out.data() / "subsets.json", subsets_json(data));
  if (data.flipped) write_flip_mask(out.data() / "flip_mask.csv", data.train, *data.flipped);

  const ModelState init = ModelState::initialize(architecture_for(cfg, data.train), cfg.init_seed);
  save_model(out.init_model(), init);
  log << "train: n=" << data.train.size() << " d=" << data.train.dim() << " p=" << init.num_params()
      << " epochs=" << cfg.train.epochs << '\n';
  const Trajectory traj = train(init, data.train, cfg.train);
  save_model(out.final_model(), traj.final_state);
  write_text_file(out.models() / "train_log.csv", loss_log_csv(traj, init, data.train));
  log << "train: final mean training loss " << format_double(mean_loss(traj.final_state, data.train)) << '\n';
  log << "train: wrote " << out.final_model().string() << '\n';
  return 0;
}

int cmd_gold(const RunConfig& cfg, std::ostream& log) {
  const PreparedData data = prepare_data(cfg);
  const OutputLayout out(cfg.output);
  const ModelState theta_f = load_final_model(cfg, data.train);
  const std::size_t runs = (cfg.l + 1) * cfg.seeds;
  log << "gold: " << runs << " runs (" << cfg.l + 1 << " x " << cfg.seeds << " seeds)\n";
  SweepOptions opts;
  opts.workers = cfg.workers;
  const GoldRunRecord rec = run_gold_sweep(theta_f, data.train, data.test, data.subsets, cfg.further_train,
                                           cfg.seeds, opts);
  write_gold_record(out.gold_record(), out.gold_meta(), rec, data.train, data.test);
  for (Adjustment a : {Adjustment::mean_subtract, Adjustment::full_subtract}) {
    write_gold_scores(out.gold(), to_string(a), adjust(rec, a), data.train, data.test);
  }
  log << "gold: wrote " << out.gold().string() << '\n';
  return 0;
}

int cmd_attribute(const RunConfig& cfg, std::ostream& log) {
  const PreparedData data = prepare_data(cfg);
  const OutputLayout out(cfg.output);
  const ModelState theta_f = load_final_model(cfg, data.train);
  const AttributionProblem prob(theta_f, data.train, data.subsets.train_subset);
  int code = 0;
  for (const AttributorConfig& a : cfg.attributors) {
    nlohmann::json meta = {{"name", a.name}, {"method", a.method}};
    try {
      const std::vector<AttributionVector> vectors = run_attributor(prob, data.test, data.subsets, a, cfg.workers);
      write_attributions_csv(out.attribution_csv(a.name), a.name, vectors, data.subsets, data.train, data.test);
      if (!vectors.empty()) {
        nlohmann::json hp = nlohmann::json::object();
        for (const auto& [k, v] : vectors.front().hyperparameters) hp[k] = v;
        meta["hyperparameters"] = hp;
        nlohmann::json reports = nlohmann::json::array();
        for (const AttributionVector& v : vectors) {
          if (!v.report) continue;
          reports.push_back({{"test_id", data.test.ids()[v.test_index]},
                             {"iterations", v.report->iterations},
                             {"residual_norm", v.report->residual_norm},
                             {"scale", v.report->scale}});
        }
        if (!reports.empty()) meta["solver"] = reports;
      }
      meta["status"] = "ok";
      log << "attribute: " << a.name << " ok\n";
    } catch (const NumericalError& e) {
      meta["status"] = "failed";
      meta["error"] = e.what();
      std::filesystem::remove(out.attribution_csv(a.name));
      log << "attribute: " << a.name << " FAILED: " << e.what() << '\n';
      code = 2;
    }
    write_text_file(out.attribution_meta(a.name), meta.dump(2) + "\n");
  }
  return code;
}

int cmd_report(const RunConfig& cfg, std::ostream& log) {
  const PreparedData data = prepare_data(cfg);
  const OutputLayout out(cfg.output);
  if (!std::filesystem::exists(out.gold_record())) {
    throw ValidationError("gold record not found: " + out.gold_record().string() + " (run 'gold' first)");
  }
  const GoldRunRecord rec = read_gold_record(out.gold_record(), out.gold_meta(), data.train, data.test);
  const GoldScores gold = adjust(rec, cfg.adjustment);

  std::vector<MethodScores> methods;
  for (const AttributorConfig& a : cfg.attributors) {
    if (!std::filesystem::exists(out.attribution_csv(a.name))) {
      log << "report: no attributions for " << a.name << ", skipped\n";
      continue;
    }
    MethodScores ms = read_attributions_csv(out.attribution_csv(a.name), data.train, data.test);
    ms.method = a.name;
    methods.push_back(std::move(ms));
  }

  const std::vector<SimilarityCurve> curves = similarity_curves(gold, methods, cfg.metric, cfg.workers);
  write_curves_csv(out.reports() / "curves.csv", curves);
  std::vector<PlotSeries> series;
  for (const SimilarityCurve& c : curves) {
    series.push_back(curve_series(c.method, c.points));
    std::size_t undefined = 0;
    for (const CurvePoint& p : c.points) undefined += p.undefined;
    if (undefined) log << "report: " << c.method << ": " << undefined << " undefined similarities dropped\n";
  }
  write_text_file(out.reports() / "curves.svg",
                  line_plot_svg(series, {"Similarity to further-training gold scores", "further-training step",
                                         "mean " + to_string(cfg.metric) + " similarity", false, 640, 400}));

  const std::vector<std::size_t> sizes = cfg.seed_groups.empty() ? divisors(cfg.seeds) : cfg.seed_groups;
  const std::vector<SeedGroupCurve> groups =
      seed_group_curves(rec, methods, cfg.metric, sizes, cfg.adjustment, cfg.workers);
  write_seed_group_csv(out.reports() / "seed_groups.csv", groups);
  series.clear();
  for (const SeedGroupCurve& g : groups) series.push_back(curve_series(g.method, g.points));
  write_text_file(out.reports() / "seed_groups.svg",
                  line_plot_svg(series, {"Maximum similarity by number of seeds", "seeds per group",
                                         "max " + to_string(cfg.metric) + " similarity", true, 640, 400}));

  // Top-k by gold score at the final checkpoint.
  const std::size_t last = gold.checkpoint_steps.size() - 1;
  std::ostringstream top;
  top << "test_id,kind,rank,loo_id,score\n";
  for (std::size_t j = 0; j < gold.test_ids.size(); ++j) {
    const Eigen::VectorXd& s = gold.scores[last][j];
    const TopK tk = top_k(s, cfg.top_k);
    for (const auto& [kind, list] : {std::pair{"helpful", &tk.helpful}, std::pair{"harmful", &tk.harmful}}) {
      for (std::size_t r = 0; r < list->size(); ++r) {
        const std::size_t pos = (*list)[r];
        top << data.test.ids()[gold.test_ids[j]] << ',' << kind << ',' << r + 1 << ','
            << data.train.ids()[gold.loo_ids[pos]] << ',' << format_double(s(static_cast<Eigen::Index>(pos)))
            << '\n';
      }
    }
  }
  write_text_file(out.reports() / "topk.csv", top.str());

  std::ostringstream summary;
  summary << "gold runs: " << (rec.num_loo() + 1) * rec.num_seeds << "\n";
  summary << "adjustment: " << to_string(cfg.adjustment) << "\nmetric: " << to_string(cfg.metric) << "\n";
  for (const SimilarityCurve& c : curves) {
    summary << c.method << ": first " << format_double(c.points.front().mean) << ", final "
            << format_double(c.points.back().mean) << ", max " << format_double(c.max_point().mean) << " at step "
            << c.max_point().step << "\n";
  }

  if (data.flipped) {
    std::vector<std::uint8_t> mask;
    for (std::size_t i : gold.loo_ids) mask.push_back((*data.flipped)[i]);
    std::ostringstream auc;
    auc << "checkpoint,auc\n";
    bool both = false;
    for (std::uint8_t v : mask) both = both || v != mask.front();
    if (both) {
      for (std::size_t t = 0; t < gold.checkpoint_steps.size(); ++t) {
        Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(gold.loo_ids.size()));
        for (const Eigen::VectorXd& s : gold.scores[t]) total += s;
        const double a = mislabel_auc(-total, mask);
        auc << gold.checkpoint_steps[t] << ',' << format_double(a) << '\n';
        summary << "mislabel AUC at step " << gold.checkpoint_steps[t] << ": " << format_double(a) << "\n";
      }
    } else {
      log << "report: flip mask over L has a single class, AUC skipped\n";
    }
    write_text_file(out.reports() / "mislabel_auc.csv", auc.str());
  }
  write_text_file(out.reports() / "summary.txt", summary.str());
  log << summary.str();
  log << "report: wrote " << out.reports().string() << '\n';
  return 0;
}

int cmd_all(const RunConfig& cfg, std::ostream& log) {
  int code = cmd_train(cfg, log);
  if (code) return code;
  code = cmd_gold(cfg, log);
  if (code) return code;
  const int attr = cmd_attribute(cfg, log);
  code = cmd_report(cfg, log);
  return attr ? attr : code;
}

}  // namespace ftattr
