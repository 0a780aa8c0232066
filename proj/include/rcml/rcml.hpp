#pragma once

// Umbrella header for the random-coefficient REML library.

#include "rcml/blup.hpp"
#include "rcml/dispersion.hpp"
#include "rcml/error.hpp"
#include "rcml/likelihood.hpp"
#include "rcml/linalg.hpp"
#include "rcml/model.hpp"
#include "rcml/scoring.hpp"
#include "rcml/simgen.hpp"
#include "rcml/stats.hpp"
