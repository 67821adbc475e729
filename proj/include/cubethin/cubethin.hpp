#pragma once

// Umbrella header for the cubethin library: MCMC chain compression by
// control-variate reweighting and balanced resampling via the cube method,
// with sample-quality metrics and reproducible experiment harnesses.

#include "cubethin/chain_io.hpp"
#include "cubethin/commands.hpp"
#include "cubethin/control_variates.hpp"
#include "cubethin/cube.hpp"
#include "cubethin/errors.hpp"
#include "cubethin/metrics.hpp"
#include "cubethin/numerics.hpp"
#include "cubethin/rng.hpp"
#include "cubethin/samplers.hpp"
#include "cubethin/thinning.hpp"
