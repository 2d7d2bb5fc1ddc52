#pragma once

#include "msfs/common.hpp"
#include "msfs/data.hpp"
#include "msfs/graph.hpp"
#include "msfs/solver.hpp"
#include "msfs/mlknn.hpp"
#include "msfs/metrics.hpp"
#include "msfs/pipeline.hpp"
#include "msfs/bench.hpp"
