#pragma once

#include "opsample/numeric.hpp"
#include "opsample/random.hpp"
#include "opsample/population.hpp"
#include "opsample/microstrata.hpp"
#include "opsample/sampler.hpp"
#include "opsample/estimation.hpp"
#include "opsample/oracle.hpp"
#include "opsample/model.hpp"
#include "opsample/diagnostics.hpp"
#include "opsample/simulation.hpp"
#include "opsample/io.hpp"
