#pragma once

#include "ablation.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataio.hpp"
#include "diffcore.hpp"
#include "error.hpp"
#include "featnet.hpp"
#include "gradient_suite.hpp"
#include "losses.hpp"
#include "matrix.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "neighbors.hpp"
#include "pipeline.hpp"
