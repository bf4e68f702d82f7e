#ifndef AFTPIC_AFTPIC_HPP_
#define AFTPIC_AFTPIC_HPP_

#include "aftpic/basis.hpp"
#include "aftpic/covariance.hpp"
#include "aftpic/errors.hpp"
#include "aftpic/inference.hpp"
#include "aftpic/io.hpp"
#include "aftpic/likelihood.hpp"
#include "aftpic/model.hpp"
#include "aftpic/optimizer.hpp"
#include "aftpic/simulation.hpp"

#endif
