#include "emo/metrics.hpp"

#include "emo/errors.hpp"

namespace emo {

Metrics macro_f1(const std::vector<int>& predictions,
                 const std::vector<int>& golds, int num_classes) {
  if (predictions.size() != golds.size())
    throw Error(ErrorCode::Config,
                "predictions and golds differ in length: " +
                    std::to_string(predictions.size()) + " vs " +
                    std::to_string(golds.size()));
  if (num_classes < 1) throw Error(ErrorCode::Config, "num_classes < 1");

  Metrics m;
  m.num_classes = num_classes;
  m.confusion.assign(num_classes, std::vector<std::int64_t>(num_classes, 0));
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const int g = golds[i], p = predictions[i];
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes)
      throw Error(ErrorCode::Config,
                  "label out of range at index " + std::to_string(i));
    ++m.confusion[g][p];
    if (g == p) ++correct;
  }
  m.precision.assign(num_classes, 0);
  m.recall.assign(num_classes, 0);
  m.f1.assign(num_classes, 0);
  double f1_sum = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = m.confusion[c][c], fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += m.confusion[o][c];
      fn += m.confusion[c][o];
    }
    m.precision[c] = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    m.recall[c] = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    m.f1[c] = m.precision[c] + m.recall[c] > 0
                  ? 2.0 * m.precision[c] * m.recall[c] /
                        (m.precision[c] + m.recall[c])
                  : 0.0;
    f1_sum += m.f1[c];
  }
  m.macro_f1 = f1_sum / double(num_classes);
  m.accuracy = golds.empty() ? 0.0 : double(correct) / double(golds.size());
  return m;
}

Metrics macro_f1(const std::vector<EmotionLabel>& predictions,
                 const std::vector<EmotionLabel>& golds) {
  std::vector<int> p(predictions.size()), g(golds.size());
  for (std::size_t i = 0; i < predictions.size(); ++i)
    p[i] = static_cast<int>(predictions[i]);
  for (std::size_t i = 0; i < golds.size(); ++i)
    g[i] = static_cast<int>(golds[i]);
  return macro_f1(p, g, kNumEmotions);
}

}  // namespace emo
