#ifndef CRITAFFINE_CRITAFFINE_HPP
#define CRITAFFINE_CRITAFFINE_HPP

#include "commands.hpp"
#include "config.hpp"
#include "crossval.hpp"
#include "error.hpp"
#include "invariant.hpp"
#include "model.hpp"
#include "nupc_io.hpp"
#include "parallel.hpp"
#include "potential.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "tail.hpp"
#include "walk.hpp"

#endif  // CRITAFFINE_CRITAFFINE_HPP
