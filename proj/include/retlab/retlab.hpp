#pragma once

#include "retlab/avoidance.hpp"
#include "retlab/chain.hpp"
#include "retlab/correlation.hpp"
#include "retlab/error.hpp"
#include "retlab/laplace.hpp"
#include "retlab/monte_carlo.hpp"
#include "retlab/numeric.hpp"
#include "retlab/parallel.hpp"
#include "retlab/psi_mixing.hpp"
#include "retlab/report.hpp"
#include "retlab/shift_core.hpp"
