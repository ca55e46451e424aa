#pragma once

#include <vector>

namespace atlab {

/// One row of the per-epoch training history.
struct MetricsRecord {
  int epoch = 0;
  double nat_train = 0;
  double nat_test = 0;
  double rob_train = 0;
  double rob_test = 0;
  double gap = 0;  // rob_train - rob_test
  double lambda = 0;
  double lr = 0;
  double gnorm_ce = 0;
  double gnorm_cons = 0;
  double train_loss = 0;  // mean minibatch loss over the epoch

  bool operator==(const MetricsRecord&) const = default;
};

using History = std::vector<MetricsRecord>;

}  // namespace atlab
