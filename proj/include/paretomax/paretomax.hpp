#pragma once

#include "paretomax/core.hpp"
#include "paretomax/math.hpp"
#include "paretomax/parallel.hpp"
#include "paretomax/gp.hpp"
#include "paretomax/pareto.hpp"
#include "paretomax/sampler.hpp"
#include "paretomax/adf.hpp"
#include "paretomax/acquisition.hpp"
#include "paretomax/loop.hpp"
