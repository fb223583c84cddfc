#pragma once

// Two-stage inference: MAP hyperparameters, then MCMC over the gains, then
// posterior bands for the latent profile and its derivatives.
#include "gpcal/diagnostics.hpp"
#include "gpcal/map_fit.hpp"
#include "gpcal/mcmc.hpp"
#include "gpcal/posterior.hpp"
