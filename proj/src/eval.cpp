#include "ftattr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ftattr/error.hpp"
#include "ftattr/io.hpp"

namespace ftattr {

std::string to_string(Metric m) { return m == Metric::cosine ? "cosine" : "spearman"; }

Metric parse_metric(const std::string& s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "spearman") return Metric::spearman;
  throw ValidationError("unknown metric '" + s + "'");
}

double cosine_sim(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DimensionError("cosine_sim: vectors differ in length");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw UndefinedError("cosine_sim: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Eigen::VectorXd average_ranks(const Eigen::VectorXd& a) {
  const auto n = static_cast<std::size_t>(a.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return a(static_cast<Eigen::Index>(x)) < a(static_cast<Eigen::Index>(y));
  });
  Eigen::VectorXd ranks(a.size());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && a(static_cast<Eigen::Index>(order[j + 1])) == a(static_cast<Eigen::Index>(order[i]))) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks(static_cast<Eigen::Index>(order[k])) = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DimensionError("spearman: vectors differ in length");
  if (a.size() < 2) throw ValidationError("spearman: need at least two values");
  Eigen::VectorXd ra = average_ranks(a);
  Eigen::VectorXd rb = average_ranks(b);
  ra.array() -= ra.mean();
  rb.array() -= rb.mean();
  const double na = ra.norm();
  const double nb = rb.norm();
  if (na == 0.0 || nb == 0.0) throw UndefinedError("spearman: constant vector");
  return std::clamp(ra.dot(rb) / (na * nb), -1.0, 1.0);
}

double similarity(Metric metric, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return metric == Metric::cosine ? cosine_sim(a, b) : spearman(a, b);
}

const CurvePoint& SimilarityCurve::max_point() const {
  if (points.empty()) throw ValidationError("similarity curve has no points");
  auto best = points.begin();
  for (auto it = points.begin(); it != points.end(); ++it) {
    if (it->count > 0 && (best->count == 0 || it->mean > best->mean)) best = it;
  }
  return *best;
}

CurvePoint summarize(std::size_t step, std::span<const double> values, std::size_t undefined) {
  CurvePoint p;
  p.step = step;
  p.count = values.size();
  p.undefined = undefined;
  if (values.empty()) {
    p.mean = std::nan("");
    return p;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  p.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - p.mean) * (v - p.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    p.se = sd / std::sqrt(static_cast<double>(values.size()));
  }
  return p;
}

namespace {

void check_alignment(const GoldScores& gold, const MethodScores& approx) {
  if (approx.loo_ids != gold.loo_ids) {
    throw AlignmentError("method '" + approx.method + "': training subset differs from the gold standard");
  }
  if (approx.test_ids != gold.test_ids) {
    throw AlignmentError("method '" + approx.method + "': test instances differ from the gold standard");
  }
  if (approx.scores.size() != approx.test_ids.size()) {
    throw AlignmentError("method '" + approx.method + "': one score vector per test instance required");
  }
  for (const Eigen::VectorXd& s : approx.scores) {
    if (static_cast<std::size_t>(s.size()) != approx.loo_ids.size()) {
      throw AlignmentError("method '" + approx.method + "': score vector length differs from |L|");
    }
  }
}

// Similarities of every test instance at checkpoint t; undefined ones are counted.
void collect(const GoldScores& gold, const MethodScores& approx, Metric metric, std::size_t t,
             std::vector<double>& values, std::size_t& undefined) {
  for (std::size_t j = 0; j < gold.test_ids.size(); ++j) {
    try {
      values.push_back(similarity(metric, gold.scores[t][j], approx.scores[j]));
    } catch (const UndefinedError&) {
      ++undefined;
    }
  }
}

}  // namespace

SimilarityCurve similarity_curve(const GoldScores& gold, const MethodScores& approx, Metric metric) {
  check_alignment(gold, approx);
  SimilarityCurve curve;
  curve.method = approx.method;
  curve.metric = metric;
  for (std::size_t t = 0; t < gold.checkpoint_steps.size(); ++t) {
    std::vector<double> values;
    std::size_t undefined = 0;
    collect(gold, approx, metric, t, values, undefined);
    curve.points.push_back(summarize(gold.checkpoint_steps[t], values, undefined));
  }
  return curve;
}

std::vector<SimilarityCurve> similarity_curves(const GoldScores& gold, const std::vector<MethodScores>& approx,
                                               Metric metric, std::size_t workers) {
  for (const MethodScores& a : approx) check_alignment(gold, a);
  const std::size_t nt = gold.checkpoint_steps.size();
  std::vector<SimilarityCurve> curves(approx.size());
  for (std::size_t k = 0; k < approx.size(); ++k) {
    curves[k].method = approx[k].method;
    curves[k].metric = metric;
    curves[k].points.resize(nt);
  }
  parallel_for(approx.size() * nt, workers, [&](std::size_t task) {
    const std::size_t k = task / nt;
    const std::size_t t = task % nt;
    std::vector<double> values;
    std::size_t undefined = 0;
    collect(gold, approx[k], metric, t, values, undefined);
    curves[k].points[t] = summarize(gold.checkpoint_steps[t], values, undefined);
  });
  return curves;
}

std::vector<SeedGroupCurve> seed_group_curves(const GoldRunRecord& rec, const std::vector<MethodScores>& approx,
                                              Metric metric, const std::vector<std::size_t>& group_sizes,
                                              Adjustment adjustment, std::size_t workers) {
  rec.validate();
  const std::size_t r = rec.num_seeds;
  for (std::size_t size : group_sizes) {
    if (size == 0 || size > r) {
      throw ValidationError("seed groups: group size " + std::to_string(size) + " outside [1, " + std::to_string(r) +
                            "]");
    }
  }
  const std::size_t nt = rec.num_checkpoints();
  std::vector<SeedGroupCurve> curves(approx.size());
  for (std::size_t k = 0; k < approx.size(); ++k) {
    curves[k].method = approx[k].method;
    curves[k].metric = metric;
  }
  for (std::size_t size : group_sizes) {
    const std::size_t groups = r / size;
    std::vector<GoldScores> gold(groups);
    parallel_for(groups, workers, [&](std::size_t g) {
      std::vector<std::size_t> seeds(size);
      std::iota(seeds.begin(), seeds.end(), g * size);
      gold[g] = adjust(rec.select_seeds(seeds), adjustment);
    });
    for (std::size_t k = 0; k < approx.size(); ++k) {
      check_alignment(gold.front(), approx[k]);
      std::vector<CurvePoint> per_checkpoint(nt);
      parallel_for(nt, workers, [&](std::size_t t) {
        std::vector<double> values;
        std::size_t undefined = 0;
        for (std::size_t g = 0; g < groups; ++g) collect(gold[g], approx[k], metric, t, values, undefined);
        per_checkpoint[t] = summarize(rec.checkpoint_steps[t], values, undefined);
      });
      SimilarityCurve tmp;
      tmp.points = per_checkpoint;
      CurvePoint best = tmp.max_point();
      best.step = size;
      curves[k].points.push_back(best);
      curves[k].num_groups.push_back(groups);
    }
  }
  return curves;
}

double mislabel_auc(const Eigen::VectorXd& scores, std::span<const std::uint8_t> mask) {
  if (static_cast<std::size_t>(scores.size()) != mask.size()) {
    throw AlignmentError("mislabel_auc: mask length differs from the score vector");
  }
  // Rank-sum form of the Mann-Whitney statistic; average ranks give ties 1/2.
  const Eigen::VectorXd ranks = average_ranks(scores);
  double pos = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] > 1) throw ValidationError("mislabel_auc: mask entries must be 0 or 1");
    if (mask[i]) {
      pos += 1.0;
      rank_sum += ranks(static_cast<Eigen::Index>(i));
    }
  }
  const double neg = static_cast<double>(mask.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw ValidationError("mislabel_auc: mask must contain both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

TopK top_k(const Eigen::VectorXd& scores, std::size_t k) {
  const auto n = static_cast<std::size_t>(scores.size());
  k = std::min(k, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto at = [&](std::size_t i) { return scores(static_cast<Eigen::Index>(i)); };
  TopK out;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return at(a) > at(b); });
  out.helpful.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return at(a) < at(b) || (at(a) == at(b) && a < b);
  });
  out.harmful.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<SimilarityCurve>& curves) {
  std::ostringstream os;
  os << "method,metric,checkpoint,mean,se,count,undefined\n";
  for (const SimilarityCurve& c : curves) {
    for (const CurvePoint& p : c.points) {
      os << c.method << ',' << to_string(c.metric) << ',' << p.step << ',' << format_double(p.mean) << ','
         << format_double(p.se) << ',' << p.count << ',' << p.undefined << '\n';
    }
  }
  write_text_file(path, os.str());
}

void write_seed_group_csv(const std::filesystem::path& path, const std::vector<SeedGroupCurve>& curves) {
  std::ostringstream os;
  os << "method,metric,group_size,num_groups,mean,se,count,undefined\n";
  for (const SeedGroupCurve& c : curves) {
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      const CurvePoint& p = c.points[i];
      os << c.method << ',' << to_string(c.metric) << ',' << p.step << ',' << c.num_groups[i] << ','
         << format_double(p.mean) << ',' << format_double(p.se) << ',' << p.count << ',' << p.undefined << '\n';
    }
  }
  write_text_file(path, os.str());
}

}  // namespace ftattr
