#include "mmf/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mmf/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mmf {

namespace {

void check_labels(const std::vector<int>& truth, const std::vector<int>& predicted,
                  int k_classes) {
  if (k_classes < 2) throw DataError("metrics need at least two classes");
  if (truth.size() != predicted.size())
    throw DataError("metrics: truth and prediction lengths differ (" +
                    std::to_string(truth.size()) + " vs " + std::to_string(predicted.size()) +
                    ")");
  if (truth.empty()) throw DataError("metrics: empty label vectors");
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] < 0 || truth[i] >= k_classes || predicted[i] < 0 || predicted[i] >= k_classes)
      throw DataError("metrics: label outside [0, " + std::to_string(k_classes) + ") at row " +
                      std::to_string(i));
}

}  // namespace

std::vector<double> per_class_f1(const std::vector<int>& truth,
                                 const std::vector<int>& predicted, int k_classes) {
  check_labels(truth, predicted, k_classes);
  std::vector<double> tp(k_classes, 0), fp(k_classes, 0), fn(k_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  std::vector<double> f1(k_classes, 0.0);
  for (int c = 0; c < k_classes; ++c) {
    double denom = 2.0 * tp[c] + fp[c] + fn[c];
    f1[c] = denom == 0.0 ? 0.0 : 2.0 * tp[c] / denom;
  }
  return f1;
}

double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted,
                int k_classes) {
  std::vector<double> f1 = per_class_f1(truth, predicted, k_classes);
  double total = 0.0;
  for (double v : f1) total += v;
  return total / static_cast<double>(k_classes);
}

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                          int k_classes) {
  check_labels(truth, predicted, k_classes);
  ConfusionMatrix m;
  m.k_classes = k_classes;
  m.counts.assign(static_cast<std::size_t>(k_classes) * k_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) ++m.at(truth[i], predicted[i]);
  return m;
}

std::vector<ErrorType> top_error_types(const ConfusionMatrix& matrix, std::size_t limit) {
  std::vector<ErrorType> cells;
  for (int t = 0; t < matrix.k_classes; ++t)
    for (int p = 0; p < matrix.k_classes; ++p)
      if (t != p && matrix.at(t, p) > 0) cells.push_back({p, t, matrix.at(t, p)});
  std::sort(cells.begin(), cells.end(), [](const ErrorType& a, const ErrorType& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.predicted != b.predicted) return a.predicted < b.predicted;
    return a.actual < b.actual;
  });
  if (cells.size() > limit) cells.resize(limit);
  return cells;
}

// ---- Student's t machinery ----

namespace {

// continued fraction for the incomplete beta (modified Lentz)
double beta_cf(double a, double b, double x) {
  const int kMaxIter = 500;
  const double kEps = 1e-16, kTiny = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) <= kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0)
    throw NumericError("incomplete beta requires positive shape parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log1p(-x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_tail(double t, double dof) {
  if (!(dof > 0.0)) throw NumericError("t distribution needs positive degrees of freedom");
  if (t == 0.0) return 0.5;
  double x = dof / (dof + t * t);
  double half_two_sided = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, x);
  return t > 0.0 ? half_two_sided : 1.0 - half_two_sided;
}

WelchResult welch_t(const std::vector<double>& x1, const std::vector<double>& x2) {
  if (x1.size() < 2 || x2.size() < 2)
    throw DataError("welch_t: each sample needs at least two observations");
  WelchResult r;
  r.n1 = x1.size();
  r.n2 = x2.size();
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto var_of = [](const std::vector<double>& v, double mean) {
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s / static_cast<double>(v.size() - 1);
  };
  r.mean1 = mean_of(x1);
  r.mean2 = mean_of(x2);
  r.var1 = var_of(x1, r.mean1);
  r.var2 = var_of(x2, r.mean2);

  double se1 = r.var1 / static_cast<double>(r.n1);
  double se2 = r.var2 / static_cast<double>(r.n2);
  if (se1 + se2 == 0.0)
    throw DataError("welch_t: both samples have zero variance, the statistic is undefined");
  r.t = (r.mean1 - r.mean2) / std::sqrt(se1 + se2);
  r.dof = (se1 + se2) * (se1 + se2) /
          (se1 * se1 / static_cast<double>(r.n1 - 1) +
           se2 * se2 / static_cast<double>(r.n2 - 1));
  r.p_one_sided = student_t_tail(r.t, r.dof);
  return r;
}

// ---- grouped summaries ----

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw DataError("box_stats: empty sample");
  std::sort(values.begin(), values.end());
  BoxStats s;
  s.count = values.size();
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(values.size());
  auto quantile = [&](double p) {
    double h = p * static_cast<double>(values.size() - 1);
    std::size_t lo = static_cast<std::size_t>(h);
    double frac = h - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
  };
  s.minimum = values.front();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.maximum = values.back();
  return s;
}

GroupLossStats group_loss_stats(const std::vector<double>& losses,
                                const std::vector<bool>& has_description) {
  if (losses.size() != has_description.size())
    throw DataError("group_loss_stats: losses and flags differ in length");
  std::vector<double> with, without;
  for (std::size_t i = 0; i < losses.size(); ++i)
    (has_description[i] ? with : without).push_back(losses[i]);
  if (with.empty()) throw DataError("group_loss_stats: no items carry a description");
  if (without.empty()) throw DataError("group_loss_stats: no items lack a description");

  GroupLossStats g;
  g.with_description = box_stats(with);
  g.without_description = box_stats(without);
  g.welch = welch_t(without, with);
  return g;
}

// ---- report I/O ----

namespace {

std::string dump_double(double v) { return json(v).dump(); }

json box_to_json(const BoxStats& b) {
  return json{{"count", b.count}, {"mean", b.mean},     {"min", b.minimum},
              {"q1", b.q1},       {"median", b.median}, {"q3", b.q3},
              {"max", b.maximum}};
}

BoxStats box_from_json(const json& j) {
  BoxStats b;
  b.count = j.at("count").get<std::size_t>();
  b.mean = j.at("mean").get<double>();
  b.minimum = j.at("min").get<double>();
  b.q1 = j.at("q1").get<double>();
  b.median = j.at("median").get<double>();
  b.q3 = j.at("q3").get<double>();
  b.maximum = j.at("max").get<double>();
  return b;
}

}  // namespace

void export_report(const Report& report, const std::string& dir) {
  fs::create_directories(dir);

  {
    std::ofstream csv(fs::path(dir) / "confusion.csv");
    csv << "true_class";
    for (int p = 0; p < report.matrix.k_classes; ++p) csv << ",pred_" << p;
    csv << "\n";
    for (int t = 0; t < report.matrix.k_classes; ++t) {
      csv << t;
      for (int p = 0; p < report.matrix.k_classes; ++p) csv << "," << report.matrix.at(t, p);
      csv << "\n";
    }
  }
  {
    std::ofstream csv(fs::path(dir) / "error_types.csv");
    csv << "predicted,actual,count\n";
    for (const ErrorType& e : report.top_errors)
      csv << e.predicted << "," << e.actual << "," << e.count << "\n";
  }
  {
    std::ofstream csv(fs::path(dir) / "histogram.csv");
    csv << "bucket_lo,bucket_hi,count\n";
    for (const HistBucket& b : report.histogram)
      csv << b.lo << "," << b.hi << "," << b.count << "\n";
  }
  {
    std::ofstream csv(fs::path(dir) / "group_stats.csv");
    csv << "group,count,mean,min,q1,median,q3,max\n";
    if (report.groups) {
      auto line = [&](const char* name, const BoxStats& b) {
        csv << name << "," << b.count << "," << dump_double(b.mean) << ","
            << dump_double(b.minimum) << "," << dump_double(b.q1) << ","
            << dump_double(b.median) << "," << dump_double(b.q3) << ","
            << dump_double(b.maximum) << "\n";
      };
      line("with_description", report.groups->with_description);
      line("without_description", report.groups->without_description);
    }
  }

  json top = json::array();
  for (const ErrorType& e : report.top_errors)
    top.push_back({{"predicted", e.predicted}, {"actual", e.actual}, {"count", e.count}});
  json hist = json::array();
  for (const HistBucket& b : report.histogram)
    hist.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});

  json root{{"macro_f1", report.macro_f1},
            {"per_class_f1", report.per_class},
            {"confusion_csv", "confusion.csv"},
            {"top_errors", top},
            {"histogram", hist}};
  if (report.groups) {
    const WelchResult& w = report.groups->welch;
    root["group_stats"] = json{{"desc", box_to_json(report.groups->with_description)},
                               {"nodesc", box_to_json(report.groups->without_description)},
                               {"welch", json{{"t", w.t},
                                              {"dof", w.dof},
                                              {"p", w.p_one_sided},
                                              {"mean_nodesc", w.mean1},
                                              {"mean_desc", w.mean2},
                                              {"var_nodesc", w.var1},
                                              {"var_desc", w.var2},
                                              {"n_nodesc", w.n1},
                                              {"n_desc", w.n2}}}};
  } else {
    root["group_stats"] = nullptr;
  }

  std::ofstream out(fs::path(dir) / "report.json");
  if (!out) throw DataError("cannot write report to " + dir);
  out << root.dump(2) << "\n";
}

Report load_report(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "report.json");
  if (!in) throw DataError("cannot open report.json under " + dir);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw DataError(std::string("report.json is not valid JSON: ") + e.what());
  }

  Report r;
  r.macro_f1 = root.at("macro_f1").get<double>();
  r.per_class = root.at("per_class_f1").get<std::vector<double>>();
  for (const json& e : root.at("top_errors"))
    r.top_errors.push_back({e.at("predicted").get<int>(), e.at("actual").get<int>(),
                            e.at("count").get<std::int64_t>()});
  for (const json& b : root.at("histogram"))
    r.histogram.push_back({b.at("lo").get<std::size_t>(), b.at("hi").get<std::size_t>(),
                           b.at("count").get<std::size_t>()});
  if (!root.at("group_stats").is_null()) {
    const json& g = root.at("group_stats");
    GroupLossStats stats;
    stats.with_description = box_from_json(g.at("desc"));
    stats.without_description = box_from_json(g.at("nodesc"));
    const json& w = g.at("welch");
    stats.welch.t = w.at("t").get<double>();
    stats.welch.dof = w.at("dof").get<double>();
    stats.welch.p_one_sided = w.at("p").get<double>();
    stats.welch.mean1 = w.at("mean_nodesc").get<double>();
    stats.welch.mean2 = w.at("mean_desc").get<double>();
    stats.welch.var1 = w.at("var_nodesc").get<double>();
    stats.welch.var2 = w.at("var_desc").get<double>();
    stats.welch.n1 = w.at("n_nodesc").get<std::size_t>();
    stats.welch.n2 = w.at("n_desc").get<std::size_t>();
    r.groups = stats;
  }

  // the confusion matrix lives in its CSV
  std::ifstream csv(fs::path(dir) / root.at("confusion_csv").get<std::string>());
  if (!csv) throw DataError("report references a missing confusion CSV");
  std::string line;
  std::getline(csv, line);  // header
  std::vector<std::int64_t> counts;
  int rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');  // row label
    while (std::getline(row, cell, ',')) counts.push_back(std::stoll(cell));
    ++rows;
  }
  if (rows == 0 || counts.size() != static_cast<std::size_t>(rows) * rows)
    throw DataError("confusion CSV is not square");
  r.matrix.k_classes = rows;
  r.matrix.counts = std::move(counts);
  return r;
}

}  // namespace mmf
