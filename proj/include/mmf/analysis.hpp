#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmf/data.hpp"

namespace mmf {

// ---- classification metrics ----

// One-vs-rest F1 per class; a class with zero precision+recall mass scores 0.
std::vector<double> per_class_f1(const std::vector<int>& truth,
                                 const std::vector<int>& predicted, int k_classes);
double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted,
                int k_classes);

struct ConfusionMatrix {
  int k_classes = 0;
  std::vector<std::int64_t> counts;  // row = true class, column = predicted

  std::int64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * k_classes + pred];
  }
  std::int64_t& at(int truth, int pred) {
    return counts[static_cast<std::size_t>(truth) * k_classes + pred];
  }
};

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                          int k_classes);

struct ErrorType {
  int predicted = 0;
  int actual = 0;
  std::int64_t count = 0;
};

// Off-diagonal cells with nonzero count, by count descending then
// (predicted, actual) ascending; at most `limit` entries.
std::vector<ErrorType> top_error_types(const ConfusionMatrix& matrix, std::size_t limit);

// ---- two-sample location test (unequal variances) ----

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_one_sided = 0.0;  // P(T_dof >= t): small when mean1 exceeds mean2
  double mean1 = 0.0, mean2 = 0.0;
  double var1 = 0.0, var2 = 0.0;  // unbiased
  std::size_t n1 = 0, n2 = 0;
};

WelchResult welch_t(const std::vector<double>& x1, const std::vector<double>& x2);

// P(T >= t) for Student's t with `dof` degrees of freedom; absolute error
// well under 1e-10 across the needed range.
double student_t_tail(double t, double dof);
double regularized_incomplete_beta(double a, double b, double x);

// ---- grouped loss summaries ----

struct BoxStats {
  std::size_t count = 0;
  double mean = 0.0;
  double minimum = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, maximum = 0.0;
};

// Linear-interpolation quantiles on the sorted sample (the spreadsheet
// convention: h = (n-1)p).
BoxStats box_stats(std::vector<double> values);

struct GroupLossStats {
  BoxStats with_description;
  BoxStats without_description;
  WelchResult welch;  // sample 1 = without description, sample 2 = with
};

GroupLossStats group_loss_stats(const std::vector<double>& losses,
                                const std::vector<bool>& has_description);

// ---- report bundle ----

struct Report {
  double macro_f1 = 0.0;
  std::vector<double> per_class;
  ConfusionMatrix matrix;
  std::vector<ErrorType> top_errors;
  std::optional<GroupLossStats> groups;
  std::vector<HistBucket> histogram;
};

// Writes report.json plus confusion.csv, error_types.csv, group_stats.csv
// and histogram.csv under dir. Numbers survive a round-trip exactly.
void export_report(const Report& report, const std::string& dir);
Report load_report(const std::string& dir);

}  // namespace mmf
