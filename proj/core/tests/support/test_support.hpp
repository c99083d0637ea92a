#pragma once

// Fixtures and numeric helpers shared by the unit, integration and acceptance
// tests.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mgnli/corpus.hpp"
#include "mgnli/params.hpp"
#include "mgnli/tensor.hpp"

namespace mgnli::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("mgnli-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline TrialRecord make_trial(const std::string& id, std::vector<std::string> intervention,
                              std::vector<std::string> eligibility, std::vector<std::string> results,
                              std::vector<std::string> adverse) {
  TrialRecord t;
  t.trial_id = id;
  t.sections[Section::Intervention] = std::move(intervention);
  t.sections[Section::Eligibility] = std::move(eligibility);
  t.sections[Section::Results] = std::move(results);
  t.sections[Section::AdverseEvents] = std::move(adverse);
  return t;
}

// Two trials and three instances: a single Results instance, a single
// Eligibility instance and an Intervention comparison.
inline Dataset tiny_dataset() {
  Dataset ds;
  ds.trials["NCT001"] = make_trial("NCT001", {"Drug alpha 10 mg daily.", "Placebo tablet."},
                                   {"Adults over 18.", "No prior surgery.", "Signed consent."},
                                   {"Cohort 1 had 40 patients.", "Cohort 2 had 60 patients.", "Median age 54.",
                                    "Response rate 30%."},
                                   {"Nausea in 3 patients."});
  ds.trials["NCT002"] = make_trial("NCT002", {"Drug beta 5 mg.", "Saline infusion.", "Weekly review."},
                                   {"Children excluded."}, {"Survival improved."}, {"Rash in 2 patients.", "Fever."});
  Instance a;
  a.uuid = "u1";
  a.section = Section::Results;
  a.hypothesis = "Cohort 2 had 60 patients.";
  a.primary_trial_id = "NCT001";
  a.label = Label::Entailment;
  a.primary_evidence = std::vector<int>{1};
  Instance b;
  b.uuid = "u2";
  b.section = Section::Eligibility;
  b.hypothesis = "Children are eligible.";
  b.primary_trial_id = "NCT002";
  b.label = Label::Contradiction;
  b.primary_evidence = std::vector<int>{0};
  Instance c;
  c.uuid = "u3";
  c.kind = InstanceKind::Comparison;
  c.section = Section::Intervention;
  c.hypothesis = "Both trials use a placebo.";
  c.primary_trial_id = "NCT001";
  c.secondary_trial_id = "NCT002";
  c.label = Label::Contradiction;
  c.primary_evidence = std::vector<int>{1};
  c.secondary_evidence = std::vector<int>{1};
  ds.instances = {a, b, c};
  return ds;
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

struct GradCheckReport {
  double worst_relative = 0.0;  // over entries with a gradient above the floor
  double worst_absolute = 0.0;  // over entries below the floor
  std::string worst_name;
  long checked = 0;
};

// Central finite differences against the analytic gradient of a scalar loss
// for every entry of every parameter in the stores. Entries whose analytic and
// numeric gradients are both below `floor` are compared by absolute error,
// where the difference quotient is dominated by rounding.
inline GradCheckReport check_gradients(const std::vector<ParameterStore*>& stores,
                                       const std::function<ag::Var()>& loss, double step = 1e-5,
                                       double floor = 1e-6) {
  for (auto* s : stores) s->zero_grad();
  ag::backward(loss());
  GradCheckReport report;
  for (auto* s : stores) {
    for (const auto& [name, var] : s->items()) {
      if (!var->requires_grad) continue;
      for (Eigen::Index k = 0; k < var->value.size(); ++k) {
        double& x = var->value.data()[k];
        const double original = x;
        double plus = 0.0;
        double minus = 0.0;
        {
          ag::NoGradGuard guard;
          x = original + step;
          plus = loss()->value(0, 0);
          x = original - step;
          minus = loss()->value(0, 0);
        }
        x = original;
        const double numeric = (plus - minus) / (2.0 * step);
        const double analytic = var->has_grad() ? var->grad.data()[k] : 0.0;
        const double scale = std::max(std::abs(numeric), std::abs(analytic));
        const double diff = std::abs(numeric - analytic);
        if (scale > floor) {
          if (diff / scale > report.worst_relative) {
            report.worst_relative = diff / scale;
            report.worst_name = name + "[" + std::to_string(k) + "]";
          }
        } else {
          report.worst_absolute = std::max(report.worst_absolute, diff);
        }
        ++report.checked;
      }
    }
  }
  return report;
}

}  // namespace mgnli::testing
