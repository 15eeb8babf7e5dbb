#pragma once

#include "besn/error.hpp"
#include "besn/rng.hpp"
#include "besn/grid.hpp"
#include "besn/ca_sim.hpp"
#include "besn/esn.hpp"
#include "besn/parallel.hpp"
#include "besn/tuner.hpp"
#include "besn/horseshoe.hpp"
#include "besn/nuts.hpp"
#include "besn/bayes_fit.hpp"
#include "besn/ensemble.hpp"
#include "besn/metrics.hpp"
#include "besn/workflow.hpp"
#include "besn/io.hpp"
#include "besn/image.hpp"
#include "besn/pipeline.hpp"
