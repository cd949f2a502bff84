#pragma once

/// Umbrella header: matrix completion with linear equality constraints,
/// subspace coverage metrics, radial-network power flow, and the sampling
/// experiments built on top of them.

#include "gridfill/core.hpp"
#include "gridfill/errors.hpp"
#include "gridfill/io.hpp"
#include "gridfill/powergrid.hpp"
#include "gridfill/rng.hpp"
#include "gridfill/sampling.hpp"
#include "gridfill/solver.hpp"
#include "gridfill/subspace.hpp"
