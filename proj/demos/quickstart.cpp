// Library walk-through: build a labeled/unlabeled split, train self-tuning and
// the CE-only baseline on it, and print per-epoch accuracies side by side.

#include <selftune/trainer.hpp>

#include <cstdio>

using namespace selftune;

int main() {
  const Dataset data = make_gaussian_mixture(4, 16, 50, 3.0, 11);
  SplitOptions opts;
  opts.proportion = 0.1;
  const Split split = split_label_proportion(data, opts, 12);
  std::printf("labeled %zu  unlabeled %zu  test %zu\n", split.labeled.size(), split.unlabeled.size(),
              split.test.size());

  TrainConfig cfg;
  cfg.keys_per_category = 16;
  cfg.projector_dim = 32;
  cfg.base_lr = 0.01;
  cfg.key_momentum = 0.99;
  cfg.epochs = 25;

  TrainConfig baseline = cfg;
  baseline.method = Method::fine_tune_only;

  const TrainReport st = train(cfg, split);
  const TrainReport ft = train(baseline, split);

  std::printf("epoch  self_tuning  pseudo_acc  fine_tune_only\n");
  for (std::size_t e = 0; e < st.rows.size(); ++e)
    std::printf("%5d  %11.3f  %10.3f  %14.3f\n", st.rows[e].epoch, st.rows[e].test_accuracy,
                st.rows[e].pseudo_label_accuracy, ft.rows[e].test_accuracy);
}
