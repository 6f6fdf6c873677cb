#pragma once

// Umbrella header.

#include "mgnni/checkpoint.hpp"
#include "mgnni/csv.hpp"
#include "mgnni/datasets.hpp"
#include "mgnni/equilibrium.hpp"
#include "mgnni/error.hpp"
#include "mgnni/graph.hpp"
#include "mgnni/model.hpp"
#include "mgnni/numerics.hpp"
#include "mgnni/probe.hpp"
#include "mgnni/random.hpp"
#include "mgnni/train.hpp"
