#pragma once

#include "mtlu/activations.hpp"
#include "mtlu/bench.hpp"
#include "mtlu/checkpoint.hpp"
#include "mtlu/config.hpp"
#include "mtlu/dataset.hpp"
#include "mtlu/errors.hpp"
#include "mtlu/eval.hpp"
#include "mtlu/gradcheck.hpp"
#include "mtlu/image.hpp"
#include "mtlu/metrics.hpp"
#include "mtlu/networks.hpp"
#include "mtlu/ops.hpp"
#include "mtlu/parallel.hpp"
#include "mtlu/resample.hpp"
#include "mtlu/tensor.hpp"
#include "mtlu/training.hpp"
