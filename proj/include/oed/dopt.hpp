#pragma once

#include "oed/assembly.hpp"
#include "oed/config.hpp"
#include "oed/core.hpp"
#include "oed/estimators.hpp"
#include "oed/inverse.hpp"
#include "oed/linalg.hpp"
#include "oed/mass_factor.hpp"
#include "oed/mesh.hpp"
#include "oed/optimize.hpp"
#include "oed/prior.hpp"
#include "oed/problem.hpp"
#include "oed/sketch.hpp"
#include "oed/transport.hpp"
