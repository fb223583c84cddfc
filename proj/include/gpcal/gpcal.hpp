#pragma once

#include "gpcal/error.hpp"
#include "gpcal/inference.hpp"
#include "gpcal/kernels.hpp"
#include "gpcal/likelihood.hpp"
#include "gpcal/model.hpp"
#include "gpcal/synth.hpp"
