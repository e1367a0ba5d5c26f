#ifndef MVLONG_MVLONG_HPP
#define MVLONG_MVLONG_HPP

#include "basis.hpp"
#include "config.hpp"
#include "covariance.hpp"
#include "data.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "posterior.hpp"
#include "priors.hpp"
#include "random.hpp"
#include "sampler.hpp"
#include "simulation.hpp"
#include "state.hpp"

#endif
