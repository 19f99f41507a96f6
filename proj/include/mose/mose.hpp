#pragma once

// Umbrella header.

#include "mose/checkpoint.hpp"
#include "mose/config.hpp"
#include "mose/error.hpp"
#include "mose/evaluate.hpp"
#include "mose/grad_check.hpp"
#include "mose/graph.hpp"
#include "mose/kernels.hpp"
#include "mose/losses.hpp"
#include "mose/metrics.hpp"
#include "mose/model.hpp"
#include "mose/mose_layer.hpp"
#include "mose/netpbm.hpp"
#include "mose/optim.hpp"
#include "mose/rng.hpp"
#include "mose/synthdata.hpp"
#include "mose/tensor.hpp"
#include "mose/trainer.hpp"
