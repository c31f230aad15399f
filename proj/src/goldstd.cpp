#include "ftattr/goldstd.hpp"

#include <map>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "ftattr/error.hpp"
#include "ftattr/io.hpp"
#include "ftattr/rng.hpp"

namespace ftattr {

std::string to_string(Adjustment a) { return a == Adjustment::mean_subtract ? "mean_subtract" : "full_subtract"; }

Adjustment parse_adjustment(const std::string& s) {
  if (s == "mean_subtract") return Adjustment::mean_subtract;
  if (s == "full_subtract") return Adjustment::full_subtract;
  throw ValidationError("unknown adjustment '" + s + "'");
}

void GoldRunRecord::validate() const {
  if (num_seeds == 0 || loo_ids.empty() || test_ids.empty() || checkpoint_steps.empty()) {
    throw ValidationError("gold record: empty axis");
  }
  if (values.size() != (num_loo() + 1) * num_seeds * num_checkpoints() * num_tests()) {
    throw ValidationError("gold record: incomplete grid");
  }
}

GoldRunRecord GoldRunRecord::select_seeds(const std::vector<std::size_t>& seeds) const {
  GoldRunRecord out;
  out.loo_ids = loo_ids;
  out.test_ids = test_ids;
  out.checkpoint_steps = checkpoint_steps;
  out.num_seeds = seeds.size();
  out.plan = plan;
  out.values.resize((num_loo() + 1) * seeds.size() * num_checkpoints() * num_tests());
  for (std::size_t run = 0; run <= num_loo(); ++run) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      if (seeds[s] >= num_seeds) throw ValidationError("gold record: seed out of range");
      for (std::size_t t = 0; t < num_checkpoints(); ++t) {
        for (std::size_t j = 0; j < num_tests(); ++j) {
          out.values[out.index(run, s, t, j)] = at(run, seeds[s], t, j);
        }
      }
    }
  }
  return out;
}

std::uint64_t sweep_shuffle_seed(std::uint64_t base, std::size_t seed_index) {
  return derive_key(base, {static_cast<std::uint64_t>(seed_index)});
}

namespace {

GoldRunRecord sweep(const ModelState& start, const Dataset& train, const Dataset& test, const EvalSubsets& subsets,
                    const TrainPlan& plan, std::size_t num_seeds, const SweepOptions& options) {
  plan.validate();
  if (num_seeds < 1) throw ValidationError("gold sweep: need at least one seed");
  if (subsets.train_subset.empty()) throw ValidationError("gold sweep: empty training subset");
  for (std::size_t i : subsets.train_subset) {
    if (i >= train.size()) throw ValidationError("gold sweep: training subset index out of range");
  }
  for (std::size_t j : subsets.test_indices) {
    if (j >= test.size()) throw ValidationError("gold sweep: test index out of range");
  }

  GoldRunRecord rec;
  rec.loo_ids = subsets.train_subset;
  rec.test_ids = subsets.test_indices;
  rec.num_seeds = num_seeds;
  rec.plan = plan;
  const std::size_t l = rec.num_loo();
  const std::size_t runs_per_seed = l + 1;
  const std::size_t total = runs_per_seed * num_seeds;

  TrainOptions topt;
  topt.evaluator = [&](const ModelState& m) {
    const Eigen::VectorXd g = losses(m, test, rec.test_ids);
    return std::vector<double>(g.data(), g.data() + g.size());
  };

  // Task k: seed k / (l+1); within a seed the FULL run comes first.
  std::vector<std::vector<Checkpoint>> results(total);
  std::mutex progress_mutex;
  std::size_t completed = 0;
  parallel_for(total, options.workers, [&](std::size_t k) {
    const std::size_t s = k / runs_per_seed;
    const std::size_t slot = k % runs_per_seed;
    const std::optional<std::size_t> loo =
        slot == 0 ? std::nullopt : std::optional<std::size_t>(rec.loo_ids[slot - 1]);
    TrainPlan run_plan = plan;
    run_plan.shuffle_seed = sweep_shuffle_seed(plan.shuffle_seed, s);
    try {
      results[k] = ftattr::train(start, train, run_plan, loo, topt).checkpoints;
    } catch (const DivergedError& e) {
      const std::string which = loo ? "loo=" + std::to_string(*loo) : std::string("FULL");
      throw DivergedError("gold sweep run (" + which + ", seed=" + std::to_string(s) + "): " + e.what(), e.step());
    }
    if (options.progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      options.progress(++completed, total);
    }
  });

  for (const Checkpoint& cp : results.front()) rec.checkpoint_steps.push_back(cp.step);
  rec.values.assign(total * rec.num_checkpoints() * rec.num_tests(), 0.0);
  for (std::size_t k = 0; k < total; ++k) {
    const std::size_t s = k / runs_per_seed;
    const std::size_t slot = k % runs_per_seed;
    const std::size_t run = slot == 0 ? rec.full_run() : slot - 1;
    if (results[k].size() != rec.num_checkpoints()) throw Error("gold sweep: checkpoint grids differ between runs");
    for (std::size_t t = 0; t < rec.num_checkpoints(); ++t) {
      for (std::size_t j = 0; j < rec.num_tests(); ++j) {
        rec.values[rec.index(run, s, t, j)] = results[k][t].values[j];
      }
    }
  }
  return rec;
}

GoldScores empty_scores(const GoldRunRecord& rec, Adjustment a) {
  rec.validate();
  GoldScores out;
  out.adjustment = a;
  out.loo_ids = rec.loo_ids;
  out.test_ids = rec.test_ids;
  out.checkpoint_steps = rec.checkpoint_steps;
  out.scores.assign(rec.num_checkpoints(),
                    std::vector<Eigen::VectorXd>(rec.num_tests(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rec.num_loo()))));
  return out;
}

}  // namespace

GoldRunRecord run_gold_sweep(const ModelState& theta_f, const Dataset& train, const Dataset& test,
                             const EvalSubsets& subsets, const TrainPlan& plan, std::size_t num_seeds,
                             const SweepOptions& options) {
  return sweep(theta_f, train, test, subsets, plan, num_seeds, options);
}

GoldRunRecord retrain_gold(const ModelState& theta_0, const Dataset& train, const Dataset& test,
                           const EvalSubsets& subsets, const TrainPlan& plan, std::size_t num_seeds,
                           const SweepOptions& options) {
  return sweep(theta_0, train, test, subsets, plan, num_seeds, options);
}

GoldScores adjust_mean_subtract(const GoldRunRecord& rec) {
  GoldScores out = empty_scores(rec, Adjustment::mean_subtract);
  const std::size_t l = rec.num_loo();
  const double inv_r = 1.0 / static_cast<double>(rec.num_seeds);
  Eigen::VectorXd per_seed(static_cast<Eigen::Index>(l));
  for (std::size_t t = 0; t < rec.num_checkpoints(); ++t) {
    for (std::size_t j = 0; j < rec.num_tests(); ++j) {
      Eigen::VectorXd& a = out.scores[t][j];
      for (std::size_t s = 0; s < rec.num_seeds; ++s) {
        for (std::size_t i = 0; i < l; ++i) per_seed(static_cast<Eigen::Index>(i)) = rec.at(i, s, t, j);
        a += (per_seed.array() - per_seed.mean()).matrix();
      }
      a *= inv_r;
      // Re-centre so the entries sum to zero to rounding of a single pass.
      a.array() -= a.mean();
    }
  }
  return out;
}

GoldScores adjust_full_subtract(const GoldRunRecord& rec) {
  GoldScores out = empty_scores(rec, Adjustment::full_subtract);
  const std::size_t l = rec.num_loo();
  const double inv_r = 1.0 / static_cast<double>(rec.num_seeds);
  for (std::size_t t = 0; t < rec.num_checkpoints(); ++t) {
    for (std::size_t j = 0; j < rec.num_tests(); ++j) {
      Eigen::VectorXd& v = out.scores[t][j];
      for (std::size_t s = 0; s < rec.num_seeds; ++s) {
        const double base = rec.full(s, t, j);
        for (std::size_t i = 0; i < l; ++i) v(static_cast<Eigen::Index>(i)) += rec.at(i, s, t, j) - base;
      }
      v *= inv_r;
    }
  }
  return out;
}

GoldScores adjust(const GoldRunRecord& rec, Adjustment adjustment) {
  return adjustment == Adjustment::mean_subtract ? adjust_mean_subtract(rec) : adjust_full_subtract(rec);
}

// ---- persistence -----------------------------------------------------------

namespace {

nlohmann::json plan_to_json(const TrainPlan& p) {
  return {{"optimizer", to_string(p.optimizer)},
          {"lr", p.lr},
          {"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"shuffle_seed", p.shuffle_seed},
          {"weight_decay", p.weight_decay},
          {"checkpoint_every", p.checkpoint_every},
          {"checkpoint_unit", p.checkpoint_unit == CheckpointUnit::epochs ? "epochs" : "steps"}};
}

TrainPlan plan_from_json(const nlohmann::json& j) {
  TrainPlan p;
  p.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  p.lr = j.at("lr").get<double>();
  p.epochs = j.at("epochs").get<std::size_t>();
  p.batch_size = j.at("batch_size").get<std::size_t>();
  p.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
  p.weight_decay = j.at("weight_decay").get<double>();
  p.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  p.checkpoint_unit = j.at("checkpoint_unit").get<std::string>() == "steps" ? CheckpointUnit::steps : CheckpointUnit::epochs;
  return p;
}

std::unordered_map<std::int64_t, std::size_t> id_lookup(const Dataset& ds) {
  std::unordered_map<std::int64_t, std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.emplace(ds.ids()[i], i);
  return out;
}

}  // namespace

void write_gold_record(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path,
                       const GoldRunRecord& rec, const Dataset& train, const Dataset& test) {
  rec.validate();
  std::ostringstream out;
  out << "loo_id,seed,checkpoint,test_id,g_value\n";
  for (std::size_t s = 0; s < rec.num_seeds; ++s) {
    for (std::size_t run = 0; run <= rec.num_loo(); ++run) {
      const std::size_t r = run == 0 ? rec.full_run() : run - 1;
      const std::string loo = r == rec.full_run() ? std::string("FULL") : std::to_string(train.ids()[rec.loo_ids[r]]);
      for (std::size_t t = 0; t < rec.num_checkpoints(); ++t) {
        for (std::size_t j = 0; j < rec.num_tests(); ++j) {
          out << loo << ',' << s << ',' << rec.checkpoint_steps[t] << ',' << test.ids()[rec.test_ids[j]] << ','
              << format_double(rec.at(r, s, t, j)) << '\n';
        }
      }
    }
  }
  write_text_file(csv_path, out.str());

  nlohmann::json meta;
  std::vector<std::int64_t> loo_ids, test_ids;
  for (std::size_t i : rec.loo_ids) loo_ids.push_back(train.ids()[i]);
  for (std::size_t j : rec.test_ids) test_ids.push_back(test.ids()[j]);
  meta["loo_ids"] = loo_ids;
  meta["test_ids"] = test_ids;
  meta["checkpoint_steps"] = rec.checkpoint_steps;
  meta["num_seeds"] = rec.num_seeds;
  meta["plan"] = plan_to_json(rec.plan);
  meta["runs"] = (rec.num_loo() + 1) * rec.num_seeds;
  write_text_file(meta_path, meta.dump(2) + "\n");
}

GoldRunRecord read_gold_record(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path,
                               const Dataset& train, const Dataset& test) {
  const nlohmann::json meta = nlohmann::json::parse(read_text_file(meta_path));
  const auto train_lookup = id_lookup(train);
  const auto test_lookup = id_lookup(test);
  GoldRunRecord rec;
  std::map<std::int64_t, std::size_t> loo_pos, test_pos;
  std::map<std::size_t, std::size_t> step_pos;
  for (auto id : meta.at("loo_ids").get<std::vector<std::int64_t>>()) {
    if (!train_lookup.count(id)) throw AlignmentError("gold record: unknown training id " + std::to_string(id));
    loo_pos[id] = rec.loo_ids.size();
    rec.loo_ids.push_back(train_lookup.at(id));
  }
  for (auto id : meta.at("test_ids").get<std::vector<std::int64_t>>()) {
    if (!test_lookup.count(id)) throw AlignmentError("gold record: unknown test id " + std::to_string(id));
    test_pos[id] = rec.test_ids.size();
    rec.test_ids.push_back(test_lookup.at(id));
  }
  rec.checkpoint_steps = meta.at("checkpoint_steps").get<std::vector<std::size_t>>();
  for (std::size_t t = 0; t < rec.checkpoint_steps.size(); ++t) step_pos[rec.checkpoint_steps[t]] = t;
  rec.num_seeds = meta.at("num_seeds").get<std::size_t>();
  rec.plan = plan_from_json(meta.at("plan"));
  rec.values.assign((rec.num_loo() + 1) * rec.num_seeds * rec.num_checkpoints() * rec.num_tests(), 0.0);
  std::vector<std::uint8_t> seen(rec.values.size(), 0);

  const CsvTable table = read_csv_table(csv_path);
  const std::size_t c_loo = table.column("loo_id"), c_seed = table.column("seed"), c_cp = table.column("checkpoint"),
                    c_test = table.column("test_id"), c_g = table.column("g_value");
  for (const auto& row : table.rows) {
    std::size_t run = rec.full_run();
    if (row[c_loo] != "FULL") {
      const auto it = loo_pos.find(static_cast<std::int64_t>(parse_double(row[c_loo])));
      if (it == loo_pos.end()) throw AlignmentError("gold record: loo id not in metadata: " + row[c_loo]);
      run = it->second;
    }
    const auto s = static_cast<std::size_t>(parse_double(row[c_seed]));
    const auto cp = step_pos.find(static_cast<std::size_t>(parse_double(row[c_cp])));
    const auto tj = test_pos.find(static_cast<std::int64_t>(parse_double(row[c_test])));
    if (s >= rec.num_seeds || cp == step_pos.end() || tj == test_pos.end()) {
      throw AlignmentError("gold record: cell outside the metadata grid");
    }
    const std::size_t idx = rec.index(run, s, cp->second, tj->second);
    rec.values[idx] = parse_double(row[c_g]);
    seen[idx] = 1;
  }
  for (std::uint8_t v : seen) {
    if (!v) throw ValidationError("gold record: incomplete grid in " + csv_path.string());
  }
  return rec;
}

std::vector<std::filesystem::path> write_gold_scores(const std::filesystem::path& dir, const std::string& prefix,
                                                     const GoldScores& scores, const Dataset& train,
                                                     const Dataset& test) {
  std::vector<std::filesystem::path> paths;
  for (std::size_t t = 0; t < scores.checkpoint_steps.size(); ++t) {
    std::ostringstream out;
    out << "test_id,loo_id,score\n";
    for (std::size_t j = 0; j < scores.test_ids.size(); ++j) {
      for (std::size_t i = 0; i < scores.loo_ids.size(); ++i) {
        out << test.ids()[scores.test_ids[j]] << ',' << train.ids()[scores.loo_ids[i]] << ','
            << format_double(scores.scores[t][j](static_cast<Eigen::Index>(i))) << '\n';
      }
    }
    const auto path = dir / (prefix + "_step" + std::to_string(scores.checkpoint_steps[t]) + ".csv");
    write_text_file(path, out.str());
    paths.push_back(path);
  }
  return paths;
}

}  // namespace ftattr
