#pragma once

#include <functional>
#include <vector>

#include "nestlm/cells.hpp"
#include "nestlm/gradcheck.hpp"

namespace nestlm::testutil {

// random small config for the shared grad-check suite (hidden <= 8, short
// sequences); stack depths kept tiny so bottom drops get exercised
inline cells::ModelConfig random_small_config(cells::Arch arch, Rng& rng) {
  cells::ModelConfig mc;
  mc.arch = arch;
  mc.layers = 1 + rng.uniform_int(2);
  mc.hidden = 2 + rng.uniform_int(7);  // 2..8
  mc.embedding = 2 + rng.uniform_int(3);
  mc.dropout = std::vector<double>{0.0, 0.1, 0.3}[static_cast<size_t>(rng.uniform_int(3))];
  if (arch == cells::Arch::OnLstm) {
    std::vector<int> divisors;
    for (int c = 1; c <= mc.hidden; ++c)
      if (mc.hidden % c == 0) divisors.push_back(c);
    mc.chunk = divisors[static_cast<size_t>(rng.uniform_int(static_cast<int>(divisors.size())))];
  }
  if (mc.has_stack()) {
    mc.n_stacks = 1 + rng.uniform_int(2);
    mc.stack_depth = 3 + rng.uniform_int(5);
    mc.readout_k = 1 + rng.uniform_int(2);
    mc.stack_noop = rng.bernoulli(0.5);
  }
  return mc;
}

// deterministic unrolled LM loss closure for grad_check; dropout masks are
// frozen so the loss is a fixed function of the parameters
inline std::function<double(bool)> lm_loss_fn(cells::LanguageModel<double>& lm, int steps,
                                              int batch, uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> xs(static_cast<size_t>(steps), std::vector<int>(batch));
  std::vector<std::vector<int>> ys(static_cast<size_t>(steps), std::vector<int>(batch));
  for (auto& row : xs)
    for (int& v : row) v = rng.uniform_int(lm.config().vocab);
  for (auto& row : ys)
    for (int& v : row) v = rng.uniform_int(lm.config().vocab);
  auto plan = std::make_shared<cells::DropoutPlan<double>>(
      cells::DropoutPlan<double>::draw(lm.config(), steps, batch, rng));
  return [&lm, xs, ys, plan, batch](bool with_grad) {
    numcore::Tape<double> tape(with_grad);
    auto res = cells::lm_window(lm, tape, lm.zero_state(batch), xs, ys, plan.get());
    if (with_grad) tape.backward(res.loss);
    return static_cast<double>(tape.val(res.loss)(0, 0));
  };
}

}  // namespace nestlm::testutil
