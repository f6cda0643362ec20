#pragma once

// Unvalidated LSTM kernels for the training loop, which owns both the
// parameters and the caches and so cannot hand in a stale cache.

#include "addd/nn.hpp"

namespace addd::detail {

void lstm_forward_unchecked(std::span<const double> sequence, std::size_t steps,
                            const LstmParams& params, LstmCache& cache);

void lstm_backward_unchecked(std::span<const double> grad_hidden, const LstmCache& cache,
                             const LstmParams& params, LstmParams& grads,
                             std::span<double> grad_input, std::vector<double>& scratch);

}  // namespace addd::detail
