// Umbrella header.
#pragma once

#include "dynamics.hpp"
#include "experiments.hpp"
#include "fractal_scan.hpp"
#include "integrator.hpp"
#include "io.hpp"
#include "lyapunov.hpp"
#include "node_map.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sha256.hpp"
#include "transport_stats.hpp"
