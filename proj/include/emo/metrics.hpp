#ifndef EMO_METRICS_HPP
#define EMO_METRICS_HPP

#include <vector>

#include "emo/labels.hpp"

namespace emo {

struct Metrics {
  int num_classes = 0;
  std::vector<std::vector<std::int64_t>> confusion;  // [gold][pred]
  std::vector<double> precision, recall, f1;
  double macro_f1 = 0;  // unweighted mean over all classes
  double accuracy = 0;
};

// Per-class F1 = 2PR/(P+R) with the 0/0 -> 0 convention; classes absent
// from the golds still contribute their zero to the macro mean.
Metrics macro_f1(const std::vector<int>& predictions,
                 const std::vector<int>& golds, int num_classes);

Metrics macro_f1(const std::vector<EmotionLabel>& predictions,
                 const std::vector<EmotionLabel>& golds);

}  // namespace emo

#endif
