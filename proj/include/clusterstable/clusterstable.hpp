#ifndef CLUSTERSTABLE_CLUSTERSTABLE_HPP
#define CLUSTERSTABLE_CLUSTERSTABLE_HPP

#include "clusterstable/data.hpp"
#include "clusterstable/errors.hpp"
#include "clusterstable/estimators.hpp"
#include "clusterstable/parallel.hpp"
#include "clusterstable/resampling.hpp"
#include "clusterstable/rng.hpp"
#include "clusterstable/simulation.hpp"
#include "clusterstable/stable.hpp"

#endif  // CLUSTERSTABLE_CLUSTERSTABLE_HPP
