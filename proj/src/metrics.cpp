#include "prostlab/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "prostlab/losses.hpp"

namespace prostlab {

double binary_dice(const TensorU8& pred, const TensorU8& target) {
    if (pred.size() != target.size()) throw std::invalid_argument("binary_dice: extent mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = target[i] != 0;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    const std::size_t denom = 2 * tp + fn + fp;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

void RocCurve::to_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "threshold,fpr,tpr\n";
    for (std::size_t i = 0; i < fpr.size(); ++i) {
        if (i == 0)
            out << "inf";
        else
            out << thresholds[i - 1];
        out << "," << fpr[i] << "," << tpr[i] << "\n";
    }
}

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("roc_auc: bad input sizes");
    std::size_t pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: single-class input");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    RocCurve curve;
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    double auc = 0.0;
    std::size_t tp = 0, fp = 0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = scores[order[i]];
        // Consume the whole tie group at this threshold.
        while (i < order.size() && scores[order[i]] == threshold) {
            (labels[order[i]] ? tp : fp)++;
            ++i;
        }
        const double cur_fpr = static_cast<double>(fp) / static_cast<double>(neg);
        const double cur_tpr = static_cast<double>(tp) / static_cast<double>(pos);
        auc += (cur_fpr - prev_fpr) * (cur_tpr + prev_tpr) * 0.5;
        curve.thresholds.push_back(threshold);
        curve.fpr.push_back(cur_fpr);
        curve.tpr.push_back(cur_tpr);
        prev_fpr = cur_fpr;
        prev_tpr = cur_tpr;
    }
    curve.auc = auc;
    return curve;
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& targets) {
    if (preds.size() != targets.size() || preds.empty())
        throw std::invalid_argument("accuracy: bad input sizes");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == targets[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

OrdinalConfusion confusion_ordinal(const std::vector<int>& preds, const std::vector<int>& targets) {
    if (preds.size() != targets.size()) throw std::invalid_argument("confusion: size mismatch");
    OrdinalConfusion c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = preds[i], t = targets[i];
        if (p < 1 || p > 5 || t < 1 || t > 5)
            throw std::invalid_argument("confusion: classes must be 1..5");
        c.counts[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(p - 1)]++;
        const int miss = std::abs(p - t);
        if (miss == 0)
            c.correct++;
        else if (miss == 1)
            c.missed_by_1++;
        else
            c.missed_by_more++;
        c.total++;
    }
    return c;
}

std::vector<int> aggregate_45(const std::vector<int>& classes) {
    std::vector<int> out(classes.size());
    for (std::size_t i = 0; i < classes.size(); ++i) out[i] = classes[i] == 5 ? 4 : classes[i];
    return out;
}

}  // namespace prostlab
