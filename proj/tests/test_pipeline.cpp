#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "ftattr/config.hpp"
#include "ftattr/error.hpp"
#include "ftattr/io.hpp"
#include "ftattr/pipeline.hpp"
#include "test_util.hpp"

using namespace ftattr;

namespace {

const char* kTinyConfig = R"({
  "dataset": {"source": "synthetic", "synthetic": {"kind": "linear_regression", "n": 40, "d": 3, "noise": 0.3, "seed": 1}},
  "split": {"test_fraction": 0.25, "seed": 2},
  "model": {"hidden": [4], "init_seed": 3},
  "train": {"optimizer": "sgd", "lr": 0.05, "epochs": 5, "batch_size": 8, "seed": 4},
  "further_train": {"epochs": 2, "checkpoint_every": 1},
  "eval": {"l": 3, "m": 2, "seed": 5, "top_k": 1},
  "seeds": 2,
  "attributors": ["grad_dot", "grad_cos", {"method": "influence", "name": "inf_zero", "curvature": "zero"}]
})";

std::filesystem::path write_config(const std::string& name, const std::string& text) {
  const auto dir = testutil::temp_dir(name);
  write_text_file(dir / "config.json", text);
  return dir;
}

int run_cli(const std::string& args, std::string* out = nullptr) {
  const std::string cmd = std::string(FTATTR_CLI_PATH) + " " + args + " > cli_out.txt 2>&1";
  const int status = std::system(cmd.c_str());
  if (out) *out = read_text_file("cli_out.txt");
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig tiny(const std::filesystem::path& dir) {
  RunConfig cfg = parse_config(kTinyConfig, dir / "config.json");
  cfg.output = dir / "out";
  return cfg;
}

std::size_t line_count(const std::filesystem::path& p) {
  std::istringstream is(read_text_file(p));
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) ++n;
  return n;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto dir = write_config("cli_codes", kTinyConfig);
  std::string out;
  EXPECT_EQ(run_cli("train --config " + (dir / "missing.json").string()), 1);
  write_text_file(dir / "bad.json", R"({"dataset": {"source": "csv", "path": "nope.csv", "target": "y"}})");
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string(), &out), 1);
  EXPECT_NE(out.find("dataset file not found"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "ftattr_out"));
  write_text_file(dir / "unknown.json", R"({"trian": {}})");
  EXPECT_EQ(run_cli("all --config " + (dir / "unknown.json").string()), 1);
  write_text_file(dir / "type.json", R"({"attributors": [{"method": "influence", "curvature": 3}]})");
  EXPECT_EQ(run_cli("train --config " + (dir / "type.json").string()), 1);
  // Gold before train: no model file.
  EXPECT_EQ(run_cli("gold --config " + (dir / "config.json").string() + " --output " + (dir / "o").string()), 1);

  const std::string common = " --config " + (dir / "config.json").string() + " --output " + (dir / "o").string();
  ASSERT_EQ(run_cli("train" + common), 0);
  EXPECT_EQ(run_cli("gold" + common + " --seed-count 3", &out), 0);
  // l = 2 would give 9; here l = 3, r = 3.
  EXPECT_NE(out.find("gold: 12 runs"), std::string::npos) << out;
  EXPECT_EQ(run_cli("attribute" + common + " --workers 2"), 0);
  EXPECT_EQ(run_cli("report" + common), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "o" / "reports" / "curves.svg"));

  // A LiSSA scale that diverges: the failure is recorded and the exit code is 2.
  std::string text = kTinyConfig;
  text.replace(text.find("\"attributors\""), std::string::npos,
               R"("attributors": ["grad_dot", {"method": "influence", "solver": "lissa", "lissa_scale": 0.001, "lissa_depth": 200}]})");
  write_text_file(dir / "lissa.json", text);
  EXPECT_EQ(run_cli("attribute --config " + (dir / "lissa.json").string() + " --output " + (dir / "o").string()), 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "o" / "attributions" / "grad_dot.csv"));
  EXPECT_NE(read_text_file(dir / "o" / "attributions" / "influence.json").find("\"failed\""), std::string::npos);
}

TEST(Pipeline, GoldRunCountForTwoByThree) {
  const auto dir = write_config("pipe_count", kTinyConfig);
  RunConfig cfg = tiny(dir);
  cfg.l = 2;
  cfg.seeds = 3;
  std::ostringstream log;
  ASSERT_EQ(cmd_train(cfg, log), 0);
  ASSERT_EQ(cmd_gold(cfg, log), 0);
  EXPECT_NE(log.str().find("gold: 9 runs"), std::string::npos);
  const OutputLayout out(cfg.output);
  // 9 runs x 2 checkpoints x 2 test instances plus the header.
  EXPECT_EQ(line_count(out.gold_record()), 9u * 2u * 2u + 1u);
}

TEST(Pipeline, ZeroEpochsSavesInit) {
  const auto dir = write_config("pipe_init", kTinyConfig);
  RunConfig cfg = tiny(dir);
  cfg.train.epochs = 0;
  std::ostringstream log;
  ASSERT_EQ(cmd_train(cfg, log), 0);
  const OutputLayout out(cfg.output);
  EXPECT_EQ(read_text_file(out.final_model()), read_text_file(out.init_model()));
  const PreparedData data = prepare_data(cfg);
  EXPECT_EQ(read_text_file(out.init_model()),
            serialize_model(ModelState::initialize(architecture_for(cfg, data.train), cfg.init_seed)));
}

TEST(Pipeline, EndToEndDoubleEntry) {
  const auto dir = write_config("pipe_e2e", kTinyConfig);
  const RunConfig cfg = tiny(dir);
  std::ostringstream log;
  ASSERT_EQ(cmd_all(cfg, log), 0) << log.str();
  const OutputLayout out(cfg.output);
  for (const char* f : {"config.json", "data/train.csv", "data/test.csv", "data/subsets.json", "models/train_log.csv",
                        "gold/record.json", "reports/seed_groups.csv", "reports/seed_groups.svg", "reports/topk.csv",
                        "reports/summary.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(out.root / f)) << f;
  }
  // l * m rows plus the header.
  EXPECT_EQ(line_count(out.attribution_csv("grad_dot")), 3u * 2u + 1u);
  EXPECT_EQ(read_text_file(out.attribution_csv("grad_dot")).substr(0, 26), "method,test_id,loo_id,scor");

  const PreparedData data = prepare_data(cfg);
  const GoldRunRecord rec = read_gold_record(out.gold_record(), out.gold_meta(), data.train, data.test);
  const GoldScores gold = adjust(rec, cfg.adjustment);
  const MethodScores gd = read_attributions_csv(out.attribution_csv("grad_dot"), data.train, data.test);
  const MethodScores inf = read_attributions_csv(out.attribution_csv("inf_zero"), data.train, data.test);
  // Zero-curvature influence reproduces grad_dot.
  for (std::size_t j = 0; j < gd.scores.size(); ++j) {
    EXPECT_LT((gd.scores[j] - inf.scores[j]).cwiseAbs().maxCoeff(), 1e-12 * gd.scores[j].cwiseAbs().maxCoeff());
  }

  // Report values equal the library recomputation.
  const CsvTable curves = read_csv_table(out.reports() / "curves.csv");
  const SimilarityCurve lib = similarity_curve(gold, gd, cfg.metric);
  std::size_t matched = 0;
  for (const auto& row : curves.rows) {
    if (row[curves.column("method")] != "grad_dot") continue;
    const std::size_t step = static_cast<std::size_t>(parse_double(row[curves.column("checkpoint")]));
    for (const CurvePoint& p : lib.points) {
      if (p.step != step) continue;
      EXPECT_EQ(parse_double(row[curves.column("mean")]), p.mean);
      EXPECT_EQ(parse_double(row[curves.column("se")]), p.se);
      ++matched;
    }
  }
  EXPECT_EQ(matched, 2u);

  // Top-1 tables list the argmax and argmin of the final gold scores.
  const CsvTable top = read_csv_table(out.reports() / "topk.csv");
  ASSERT_EQ(top.rows.size(), 2u * 2u);
  const Eigen::VectorXd& s0 = gold.scores.back()[0];
  Eigen::Index imax = 0, imin = 0;
  s0.maxCoeff(&imax);
  s0.minCoeff(&imin);
  EXPECT_EQ(top.rows[0][top.column("kind")], "helpful");
  EXPECT_EQ(static_cast<std::int64_t>(parse_double(top.rows[0][top.column("loo_id")])),
            data.train.ids()[gold.loo_ids[static_cast<std::size_t>(imax)]]);
  EXPECT_EQ(static_cast<std::int64_t>(parse_double(top.rows[1][top.column("loo_id")])),
            data.train.ids()[gold.loo_ids[static_cast<std::size_t>(imin)]]);

  // Gold compared with itself is pinned at 1 at the checkpoint it was taken from.
  std::vector<AttributionVector> copy;
  for (std::size_t j = 0; j < gold.test_ids.size(); ++j) {
    AttributionVector v;
    v.test_index = gold.test_ids[j];
    v.scores = gold.scores.back()[j];
    copy.push_back(v);
  }
  write_attributions_csv(out.attribution_csv("gold_copy"), "gold_copy", copy, data.subsets, data.train, data.test);
  const MethodScores gc = read_attributions_csv(out.attribution_csv("gold_copy"), data.train, data.test);
  EXPECT_NEAR(similarity_curve(gold, gc, Metric::cosine).points.back().mean, 1.0, 1e-12);
  EXPECT_NEAR(similarity_curve(gold, gc, Metric::spearman).points.back().mean, 1.0, 1e-12);
}

TEST(Pipeline, Determinism) {
  const auto dir = write_config("pipe_det", kTinyConfig);
  RunConfig a = tiny(dir);
  RunConfig b = a;
  b.output = dir / "out2";
  b.workers = 3;
  std::ostringstream log;
  ASSERT_EQ(cmd_all(a, log), 0);
  ASSERT_EQ(cmd_all(b, log), 0);
  for (const char* f : {"gold/record.csv", "attributions/grad_dot.csv", "attributions/grad_cos.csv",
                        "attributions/inf_zero.csv", "reports/curves.csv", "reports/seed_groups.csv",
                        "reports/topk.csv", "models/final.bin"}) {
    EXPECT_EQ(read_text_file(a.output / f), read_text_file(b.output / f)) << f;
  }
}

TEST(Pipeline, MismatchedModelIsRejected) {
  const auto dir = write_config("pipe_arch", kTinyConfig);
  RunConfig cfg = tiny(dir);
  std::ostringstream log;
  ASSERT_EQ(cmd_train(cfg, log), 0);
  cfg.hidden = {5};
  EXPECT_THROW(cmd_gold(cfg, log), ValidationError);
}
