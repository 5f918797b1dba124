#pragma once

#include "mflq/error.hpp"
#include "mflq/model.hpp"
#include "mflq/kron.hpp"
#include "mflq/lyapunov.hpp"
#include "mflq/gare.hpp"
#include "mflq/rng.hpp"
#include "mflq/simulator.hpp"
#include "mflq/rl.hpp"
