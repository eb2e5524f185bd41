#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "prostlab/tensor.hpp"

namespace prostlab {

// ROC curve as ordered (fpr, tpr) points from (0,0) to (1,1), one point per
// distinct threshold; auc is their trapezoidal integral and coincides with
// the pair-counting statistic (ties count one half).
struct RocCurve {
    std::vector<double> thresholds;  // descending, one per point after (0,0)
    std::vector<double> fpr;
    std::vector<double> tpr;
    double auc = 0.0;

    void to_csv(const std::filesystem::path& path) const;
};

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

double accuracy(const std::vector<int>& preds, const std::vector<int>& targets);

// 5x5 PIRADS confusion (rows: target 1..5, cols: predicted 1..5) plus the
// ordinal tallies used in the thesis figures.
struct OrdinalConfusion {
    std::array<std::array<int, 5>, 5> counts{};
    int correct = 0;
    int missed_by_1 = 0;
    int missed_by_more = 0;
    int total = 0;
};

OrdinalConfusion confusion_ordinal(const std::vector<int>& preds, const std::vector<int>& targets);

// Merges scores 4 and 5 into one class (represented as 4); 1..3 unchanged.
std::vector<int> aggregate_45(const std::vector<int>& classes);

}  // namespace prostlab
