// Generate a small declaration dataset, pseudo-label it with an Isolation
// Forest and print how the flags line up with the injected anomalies.
#include <iostream>

#include "pseudolab/experiment.hpp"

int main(int argc, char** argv) {
  using namespace pseudolab;
  GeneratorConfig g;
  g.n_records = argc > 1 ? std::stoul(argv[1]) : 5000;
  g.seed = 11;
  const auto data = prepare_data(generate_dataset(g));

  IForestParams p;
  p.seed = 7;
  const auto fit = data.unsup_features.slice_rows(0, data.unsup_fit.end);
  const auto labels = pseudo_label_iforest(fit_iforest(fit, p), data.unsup_features);

  std::cout << "rows " << data.dataset.size() << ", threshold " << labels.threshold << "\n";
  std::cout << metrics_table({{"iforest vs injected", compute_metrics(labels.labels, data.injected)}});
  std::cout << "\nTen most anomalous rows:\n";
  for (const auto& s : top_anomaly_summary(labels.scores, data.dataset.records, LabelSource::iforest, 10)) {
    std::cout << "  " << s.feature << ": mean " << s.mean << ", min " << s.min << ", max " << s.max << "\n";
  }
}
