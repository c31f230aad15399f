#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ftattr/goldstd.hpp"

namespace ftattr {

enum class Metric { cosine, spearman };
std::string to_string(Metric m);
Metric parse_metric(const std::string& s);

// a^T b / (|a| |b|), clamped to [-1, 1]. Throws UndefinedError for a zero vector.
double cosine_sim(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
// Average ranks, ties sharing the mean of their positions (1-based).
Eigen::VectorXd average_ranks(const Eigen::VectorXd& a);
// Pearson correlation of average ranks. Throws UndefinedError for a constant vector.
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double similarity(Metric metric, const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// One attribution method's scores: scores[j] is aligned with loo_ids and
// belongs to test instance test_ids[j]. Ids are training/test split indices.
struct MethodScores {
  std::string method;
  std::vector<std::size_t> loo_ids;
  std::vector<std::size_t> test_ids;
  std::vector<Eigen::VectorXd> scores;
};

// Mean and standard error (sample std / sqrt(count), 0 when count < 2) of
// the defined similarities; undefined ones are dropped and counted.
struct CurvePoint {
  std::size_t step = 0;  // checkpoint step, or group size for seed-group curves
  double mean = 0;
  double se = 0;
  std::size_t count = 0;
  std::size_t undefined = 0;
};

struct SimilarityCurve {
  std::string method;
  Metric metric = Metric::cosine;
  std::vector<CurvePoint> points;  // one per checkpoint
  const CurvePoint& max_point() const;
};

CurvePoint summarize(std::size_t step, std::span<const double> values, std::size_t undefined);

// Per checkpoint: similarity between gold and approximate scores for each
// test instance, averaged over test instances. Throws AlignmentError unless
// the approximations use the gold's L and test ids in the same order.
SimilarityCurve similarity_curve(const GoldScores& gold, const MethodScores& approx, Metric metric);
std::vector<SimilarityCurve> similarity_curves(const GoldScores& gold, const std::vector<MethodScores>& approx,
                                               Metric metric, std::size_t workers = 1);

struct SeedGroupCurve {
  std::string method;
  Metric metric = Metric::cosine;
  std::vector<CurvePoint> points;  // one per group size, step = group size
  std::vector<std::size_t> num_groups;
};

// For each group size r', seeds are split into floor(r / r') contiguous
// groups (a remainder of r mod r' seeds is dropped) and gold scores are
// recomputed per group. For every checkpoint the similarities of all
// (group, test instance) pairs are pooled; the point is the checkpoint with
// the highest pooled mean, so r' = r reproduces the maximum of
// similarity_curve. Throws ValidationError for a group size of 0 or above r.
std::vector<SeedGroupCurve> seed_group_curves(const GoldRunRecord& rec, const std::vector<MethodScores>& approx,
                                              Metric metric, const std::vector<std::size_t>& group_sizes,
                                              Adjustment adjustment = Adjustment::mean_subtract,
                                              std::size_t workers = 1);

// Area under the ROC curve of `scores` ranking the instances with mask 1
// above those with mask 0 (Mann-Whitney; ties count 1/2). Throws
// ValidationError when only one class is present.
double mislabel_auc(const Eigen::VectorXd& scores, std::span<const std::uint8_t> mask);

// Positions of the k largest (helpful) and k smallest (harmful) scores,
// ties broken by position.
struct TopK {
  std::vector<std::size_t> helpful;
  std::vector<std::size_t> harmful;
};
TopK top_k(const Eigen::VectorXd& scores, std::size_t k);

// CSV: method,metric,checkpoint,mean,se,count,undefined.
void write_curves_csv(const std::filesystem::path& path, const std::vector<SimilarityCurve>& curves);
// CSV: method,metric,group_size,num_groups,mean,se,count,undefined.
void write_seed_group_csv(const std::filesystem::path& path, const std::vector<SeedGroupCurve>& curves);

}  // namespace ftattr
