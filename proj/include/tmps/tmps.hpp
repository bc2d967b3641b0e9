#pragma once

// Umbrella header: the whole library.

#include "tmps/config.hpp"
#include "tmps/dataset.hpp"
#include "tmps/embedding.hpp"
#include "tmps/evaluation.hpp"
#include "tmps/harness.hpp"
#include "tmps/metric_loss.hpp"
#include "tmps/rng.hpp"
#include "tmps/sampler.hpp"
#include "tmps/synthgen.hpp"
#include "tmps/trainers.hpp"
#include "tmps/util.hpp"
