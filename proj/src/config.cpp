#include "ftattr/config.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "ftattr/error.hpp"
#include "ftattr/io.hpp"

namespace ftattr {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ValidationError("config: unknown key '" + it.key() + "' in '" + where + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: '" + where + "." + key + "' has the wrong type");
  }
}

void read_size(const json& obj, const char* key, std::size_t& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ValidationError("config: '" + where + "." + key + "' must be a non-negative integer");
  }
  out = v.get<std::size_t>();
}

void read_seed(const json& obj, const char* key, std::uint64_t& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ValidationError("config: '" + where + "." + key + "' must be a non-negative integer");
  }
  out = v.get<std::uint64_t>();
}

TrainPlan parse_plan(const json& obj, TrainPlan plan, const std::string& where) {
  check_keys(obj, where,
             {"optimizer", "lr", "epochs", "batch_size", "seed", "weight_decay", "checkpoint_every", "checkpoint_unit"});
  if (obj.contains("optimizer")) {
    std::string s;
    read(obj, "optimizer", s, where);
    plan.optimizer = parse_optimizer(s);
  }
  read(obj, "lr", plan.lr, where);
  read_size(obj, "epochs", plan.epochs, where);
  read_size(obj, "batch_size", plan.batch_size, where);
  read_seed(obj, "seed", plan.shuffle_seed, where);
  read(obj, "weight_decay", plan.weight_decay, where);
  read_size(obj, "checkpoint_every", plan.checkpoint_every, where);
  if (obj.contains("checkpoint_unit")) {
    std::string s;
    read(obj, "checkpoint_unit", s, where);
    if (s == "epochs") {
      plan.checkpoint_unit = CheckpointUnit::epochs;
    } else if (s == "steps") {
      plan.checkpoint_unit = CheckpointUnit::steps;
    } else {
      throw ValidationError("config: '" + where + ".checkpoint_unit' must be 'epochs' or 'steps'");
    }
  }
  return plan;
}

json plan_json(const TrainPlan& p) {
  return {{"optimizer", to_string(p.optimizer)},
          {"lr", p.lr},
          {"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"seed", p.shuffle_seed},
          {"weight_decay", p.weight_decay},
          {"checkpoint_every", p.checkpoint_every},
          {"checkpoint_unit", p.checkpoint_unit == CheckpointUnit::epochs ? "epochs" : "steps"}};
}

const std::set<std::string> kMethods = {"grad_dot", "grad_cos", "influence", "generalized_influence", "trak",
                                        "datainf"};

AttributorConfig parse_attributor(const json& obj, std::size_t index) {
  const std::string where = "attributors[" + std::to_string(index) + "]";
  AttributorConfig a;
  if (obj.is_string()) {
    a.method = obj.get<std::string>();
  } else {
    check_keys(obj, where,
               {"method", "name", "damping", "curvature", "solver", "cg_tol", "cg_max_iter", "lissa_depth",
                "lissa_scale", "epsilon", "variant", "projection_dim", "projection_seed", "lambda_const",
                "layer_damping"});
    read(obj, "method", a.method, where);
    read(obj, "name", a.name, where);
    read(obj, "damping", a.damping, where);
    a.influence.damping = a.damping;
    if (obj.contains("curvature")) a.influence.curvature = parse_curvature(obj.at("curvature").get<std::string>());
    if (obj.contains("solver")) a.influence.solver = parse_solver(obj.at("solver").get<std::string>());
    read(obj, "cg_tol", a.influence.cg_tol, where);
    read_size(obj, "cg_max_iter", a.influence.cg_max_iter, where);
    read_size(obj, "lissa_depth", a.influence.lissa_depth, where);
    if (obj.contains("lissa_scale")) {
      double s = 0;
      read(obj, "lissa_scale", s, where);
      a.influence.lissa_scale = s;
    }
    read(obj, "epsilon", a.influence.epsilon, where);
    if (obj.contains("variant")) a.variant = parse_generalized_variant(obj.at("variant").get<std::string>());
    read_size(obj, "projection_dim", a.trak.projection_dim, where);
    read_seed(obj, "projection_seed", a.trak.projection_seed, where);
    read(obj, "lambda_const", a.datainf.lambda_const, where);
    if (obj.contains("layer_damping")) {
      std::vector<double> v;
      read(obj, "layer_damping", v, where);
      a.datainf.layer_damping = v;
    }
  }
  a.influence.damping = a.damping;
  if (a.name.empty()) a.name = a.method;
  return a;
}

json attributor_json(const AttributorConfig& a) {
  json j = {{"method", a.method}, {"name", a.name}};
  if (a.method == "grad_dot" || a.method == "influence" || a.method == "generalized_influence") {
    j["damping"] = a.damping;
  }
  if (a.method == "influence" || a.method == "generalized_influence") {
    j["curvature"] = to_string(a.influence.curvature);
    j["solver"] = to_string(a.influence.solver);
    j["epsilon"] = a.influence.epsilon;
    j["cg_tol"] = a.influence.cg_tol;
    j["cg_max_iter"] = a.influence.cg_max_iter;
    j["lissa_depth"] = a.influence.lissa_depth;
    if (a.influence.lissa_scale) j["lissa_scale"] = *a.influence.lissa_scale;
  }
  if (a.method == "generalized_influence") j["variant"] = to_string(a.variant);
  if (a.method == "trak") {
    j["projection_dim"] = a.trak.projection_dim;
    j["projection_seed"] = a.trak.projection_seed;
  }
  if (a.method == "datainf") {
    j["lambda_const"] = a.datainf.lambda_const;
    if (a.datainf.layer_damping) j["layer_damping"] = *a.datainf.layer_damping;
  }
  return j;
}

}  // namespace

std::vector<std::size_t> divisors(std::size_t r) {
  std::vector<std::size_t> out;
  for (std::size_t d = 1; d <= r; ++d) {
    if (r % d == 0) out.push_back(d);
  }
  return out;
}

RunConfig parse_config(const std::string& json_text, const std::filesystem::path& source_path) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"dataset", "split", "model", "train", "further_train", "eval", "seeds", "attributors", "output",
              "workers"});
  RunConfig cfg;
  cfg.source_path = source_path;
  const std::filesystem::path base = source_path.empty() ? std::filesystem::path() : source_path.parent_path();

  if (root.contains("dataset")) {
    const json& d = root.at("dataset");
    check_keys(d, "dataset",
               {"source", "path", "target", "task", "categorical", "ignore", "id_column", "synthetic", "standardize",
                "flip"});
    std::string source = "synthetic";
    read(d, "source", source, "dataset");
    if (source == "csv") {
      cfg.dataset.source = DatasetConfig::Source::csv;
    } else if (source != "synthetic") {
      throw ValidationError("config: 'dataset.source' must be 'csv' or 'synthetic'");
    }
    std::string path;
    read(d, "path", path, "dataset");
    if (!path.empty()) {
      cfg.dataset.path = std::filesystem::path(path).is_absolute() || base.empty() ? std::filesystem::path(path)
                                                                                   : base / path;
    }
    read(d, "target", cfg.dataset.schema.target, "dataset");
    if (d.contains("task")) {
      std::string task;
      read(d, "task", task, "dataset");
      if (task == "regression") {
        cfg.dataset.schema.task = TaskKind::regression;
      } else if (task == "classification") {
        cfg.dataset.schema.task = TaskKind::classification;
      } else {
        throw UnsupportedTaskError("config: unsupported task '" + task + "'");
      }
    }
    read(d, "categorical", cfg.dataset.schema.categorical, "dataset");
    read(d, "ignore", cfg.dataset.schema.ignore, "dataset");
    if (d.contains("id_column")) {
      std::string id;
      read(d, "id_column", id, "dataset");
      cfg.dataset.schema.id_column = id;
    }
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      check_keys(s, "dataset.synthetic", {"kind", "n", "d", "noise", "seed", "separation", "w_star"});
      std::string kind = "linear_regression";
      read(s, "kind", kind, "dataset.synthetic");
      if (kind == "linear_regression") {
        cfg.dataset.synthetic.kind = SyntheticKind::linear_regression;
      } else if (kind == "two_gaussians") {
        cfg.dataset.synthetic.kind = SyntheticKind::two_gaussians;
      } else {
        throw ValidationError("config: unknown synthetic kind '" + kind + "'");
      }
      read_size(s, "n", cfg.dataset.synthetic.n, "dataset.synthetic");
      read_size(s, "d", cfg.dataset.synthetic.d, "dataset.synthetic");
      read(s, "noise", cfg.dataset.synthetic.noise, "dataset.synthetic");
      read_seed(s, "seed", cfg.dataset.synthetic.seed, "dataset.synthetic");
      read(s, "separation", cfg.dataset.synthetic.separation, "dataset.synthetic");
      if (s.contains("w_star")) {
        std::vector<double> w;
        read(s, "w_star", w, "dataset.synthetic");
        cfg.dataset.synthetic.w_star = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
      }
    }
    read(d, "standardize", cfg.dataset.standardize, "dataset");
    if (d.contains("flip")) {
      const json& f = d.at("flip");
      check_keys(f, "dataset.flip", {"fraction", "seed", "within_subset"});
      read(f, "fraction", cfg.dataset.flip_fraction, "dataset.flip");
      read_seed(f, "seed", cfg.dataset.flip_seed, "dataset.flip");
      read(f, "within_subset", cfg.dataset.flip_within_subset, "dataset.flip");
    }
  }

  if (root.contains("split")) {
    const json& s = root.at("split");
    check_keys(s, "split", {"test_fraction", "seed"});
    read(s, "test_fraction", cfg.split.test_fraction, "split");
    read_seed(s, "seed", cfg.split.split_seed, "split");
  }
  if (root.contains("model")) {
    const json& m = root.at("model");
    check_keys(m, "model", {"hidden", "init_seed"});
    read(m, "hidden", cfg.hidden, "model");
    read_seed(m, "init_seed", cfg.init_seed, "model");
  }
  if (root.contains("train")) cfg.train = parse_plan(root.at("train"), cfg.train, "train");
  cfg.further_train = cfg.train.further_training();
  if (root.contains("further_train")) {
    cfg.further_train = parse_plan(root.at("further_train"), cfg.further_train, "further_train");
  }
  if (root.contains("eval")) {
    const json& e = root.at("eval");
    check_keys(e, "eval", {"l", "m", "seed", "adjustment", "metric", "seed_groups", "top_k"});
    read_size(e, "l", cfg.l, "eval");
    read_size(e, "m", cfg.m, "eval");
    read_seed(e, "seed", cfg.subset_seed, "eval");
    if (e.contains("adjustment")) cfg.adjustment = parse_adjustment(e.at("adjustment").get<std::string>());
    if (e.contains("metric")) cfg.metric = parse_metric(e.at("metric").get<std::string>());
    read(e, "seed_groups", cfg.seed_groups, "eval");
    read_size(e, "top_k", cfg.top_k, "eval");
  }
  read_size(root, "seeds", cfg.seeds, "config");
  if (root.contains("attributors")) {
    const json& a = root.at("attributors");
    if (!a.is_array()) throw ValidationError("config: 'attributors' must be an array");
    for (std::size_t i = 0; i < a.size(); ++i) cfg.attributors.push_back(parse_attributor(a[i], i));
  } else {
    cfg.attributors = {parse_attributor("grad_dot", 0), parse_attributor("influence", 1)};
  }
  if (root.contains("output")) {
    std::string out;
    read(root, "output", out, "config");
    cfg.output = out;
  }
  read_size(root, "workers", cfg.workers, "config");
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path.string());
  return parse_config(read_text_file(path), path);
}

void RunConfig::validate() const {
  if (dataset.source == DatasetConfig::Source::csv) {
    if (dataset.path.empty()) throw ValidationError("config: 'dataset.path' is required for csv data");
    if (!std::filesystem::exists(dataset.path)) {
      throw ValidationError("config: dataset file not found: " + dataset.path.string());
    }
    if (dataset.schema.target.empty()) throw ValidationError("config: 'dataset.target' is required for csv data");
  } else {
    if (dataset.synthetic.n < 2) throw ValidationError("config: synthetic n must be >= 2");
    if (dataset.synthetic.d < 1) throw ValidationError("config: synthetic d must be >= 1");
    if (!(dataset.synthetic.noise >= 0.0)) throw ValidationError("config: synthetic noise must be >= 0");
    if (dataset.synthetic.w_star && static_cast<std::size_t>(dataset.synthetic.w_star->size()) != dataset.synthetic.d) {
      throw ValidationError("config: synthetic w_star must have d entries");
    }
  }
  if (!(dataset.flip_fraction >= 0.0 && dataset.flip_fraction <= 1.0)) {
    throw ValidationError("config: flip fraction must lie in [0, 1]");
  }
  if (!(split.test_fraction > 0.0 && split.test_fraction < 1.0)) {
    throw ValidationError("config: split.test_fraction must lie in (0, 1)");
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw ValidationError("config: hidden widths must be positive");
  }
  train.validate();
  further_train.validate();
  if (l < 2) throw ValidationError("config: eval.l must be >= 2");
  if (seeds < 1) throw ValidationError("config: seeds (r) must be >= 1");
  for (std::size_t g : seed_groups) {
    if (g < 1 || g > seeds) throw ValidationError("config: seed group sizes must lie in [1, r]");
  }
  if (workers < 1) throw ValidationError("config: workers must be >= 1");
  std::set<std::string> names;
  for (const AttributorConfig& a : attributors) {
    if (!kMethods.count(a.method)) throw ValidationError("config: unknown attribution method '" + a.method + "'");
    if (!names.insert(a.name).second) throw ValidationError("config: duplicate attributor name '" + a.name + "'");
    if (a.name.find_first_of("/\\,") != std::string::npos) {
      throw ValidationError("config: attributor name '" + a.name + "' contains a path separator or comma");
    }
    if ((a.method == "grad_dot" || a.method == "influence" || a.method == "generalized_influence") &&
        !(a.damping > 0.0)) {
      throw ValidationError("config: attributor '" + a.name + "' needs damping > 0");
    }
    if (a.method == "generalized_influence" && a.influence.curvature == Curvature::zero) {
      throw ValidationError("config: generalized influence does not support zero curvature");
    }
    if (a.method == "trak" && a.trak.projection_dim < 1) {
      throw ValidationError("config: trak projection_dim must be >= 1");
    }
    if (a.method == "datainf" && !(a.datainf.lambda_const > 0.0)) {
      throw ValidationError("config: datainf lambda_const must be > 0");
    }
    if (a.influence.lissa_scale && !(*a.influence.lissa_scale > 0.0)) {
      throw ValidationError("config: lissa_scale must be > 0");
    }
  }
}

std::string config_to_json(const RunConfig& cfg) {
  json d;
  d["source"] = cfg.dataset.source == DatasetConfig::Source::csv ? "csv" : "synthetic";
  if (cfg.dataset.source == DatasetConfig::Source::csv) {
    d["path"] = cfg.dataset.path.string();
    d["target"] = cfg.dataset.schema.target;
    d["task"] = cfg.dataset.schema.task == TaskKind::regression ? "regression" : "classification";
    d["categorical"] = cfg.dataset.schema.categorical;
    d["ignore"] = cfg.dataset.schema.ignore;
    if (cfg.dataset.schema.id_column) d["id_column"] = *cfg.dataset.schema.id_column;
  } else {
    const SyntheticSpec& s = cfg.dataset.synthetic;
    json sj = {{"kind", s.kind == SyntheticKind::linear_regression ? "linear_regression" : "two_gaussians"},
               {"n", s.n},
               {"d", s.d},
               {"noise", s.noise},
               {"seed", s.seed},
               {"separation", s.separation}};
    if (s.w_star) sj["w_star"] = std::vector<double>(s.w_star->data(), s.w_star->data() + s.w_star->size());
    d["synthetic"] = sj;
  }
  d["standardize"] = cfg.dataset.standardize;
  d["flip"] = {{"fraction", cfg.dataset.flip_fraction},
               {"seed", cfg.dataset.flip_seed},
               {"within_subset", cfg.dataset.flip_within_subset}};
  json root;
  root["dataset"] = d;
  root["split"] = {{"test_fraction", cfg.split.test_fraction}, {"seed", cfg.split.split_seed}};
  root["model"] = {{"hidden", cfg.hidden}, {"init_seed", cfg.init_seed}};
  root["train"] = plan_json(cfg.train);
  root["further_train"] = plan_json(cfg.further_train);
  root["eval"] = {{"l", cfg.l},
                  {"m", cfg.m},
                  {"seed", cfg.subset_seed},
                  {"adjustment", to_string(cfg.adjustment)},
                  {"metric", to_string(cfg.metric)},
                  {"seed_groups", cfg.seed_groups},
                  {"top_k", cfg.top_k}};
  root["seeds"] = cfg.seeds;
  json attrs = json::array();
  for (const AttributorConfig& a : cfg.attributors) attrs.push_back(attributor_json(a));
  root["attributors"] = attrs;
  root["output"] = cfg.output.string();
  return root.dump(2) + "\n";
}

}  // namespace ftattr
