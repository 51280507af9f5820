#pragma once

#include <string>
#include <vector>

namespace advlab {

/// One row of a training run; accuracies are percentages.
struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double std_acc = 0;
  double fgsm_acc = 0;
  double pgd_acc = 0;
  double local_linearity = 0;
  double lr = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  /// Wall-clock seconds per epoch. Kept apart from the records because it is
  /// the only non-reproducible quantity of a run.
  std::vector<double> epoch_seconds;

  bool empty() const noexcept { return epochs.empty(); }
  /// Throws ContractError unless epochs are 1,2,... and accuracies lie in [0,100].
  void validate() const;
};

inline constexpr const char* kHistoryCsvHeader = "epoch,train_loss,std_acc,fgsm_acc,pgd_acc,local_linearity,lr";

/// Fixed column order, fixed float formatting; identical runs give identical text.
std::string history_to_csv(const RunHistory& history);
RunHistory history_from_csv(const std::string& text);

}  // namespace advlab
