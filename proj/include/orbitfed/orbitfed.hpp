#pragma once

#include "orbitfed/analysis.hpp"
#include "orbitfed/bisection.hpp"
#include "orbitfed/config.hpp"
#include "orbitfed/cost_model.hpp"
#include "orbitfed/coverage.hpp"
#include "orbitfed/dataset.hpp"
#include "orbitfed/error.hpp"
#include "orbitfed/experiment.hpp"
#include "orbitfed/fl_core.hpp"
#include "orbitfed/grid_oracle.hpp"
#include "orbitfed/optimizer.hpp"
#include "orbitfed/parallel.hpp"
#include "orbitfed/rng.hpp"
#include "orbitfed/scenario.hpp"
#include "orbitfed/sim_engine.hpp"
