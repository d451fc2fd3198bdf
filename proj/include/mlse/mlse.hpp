#ifndef MLSE_MLSE_HPP
#define MLSE_MLSE_HPP

// Umbrella header: the whole pipeline in one include.

#include "mlse/checkpoint.hpp"
#include "mlse/container.hpp"
#include "mlse/corpus.hpp"
#include "mlse/errors.hpp"
#include "mlse/experiment.hpp"
#include "mlse/gradcheck.hpp"
#include "mlse/layers.hpp"
#include "mlse/losses.hpp"
#include "mlse/metrics.hpp"
#include "mlse/network.hpp"
#include "mlse/network_config.hpp"
#include "mlse/optimizer.hpp"
#include "mlse/preprocess.hpp"
#include "mlse/rng.hpp"
#include "mlse/run_config.hpp"
#include "mlse/snapshot_ensemble.hpp"
#include "mlse/tensor.hpp"
#include "mlse/verification.hpp"

#endif // MLSE_MLSE_HPP
