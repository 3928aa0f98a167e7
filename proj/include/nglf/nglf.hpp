#pragma once

#include "nglf/bounds.hpp"
#include "nglf/covariance.hpp"
#include "nglf/errors.hpp"
#include "nglf/evaluation.hpp"
#include "nglf/io.hpp"
#include "nglf/model_synth.hpp"
#include "nglf/moments.hpp"
#include "nglf/objective.hpp"
#include "nglf/random.hpp"
#include "nglf/solver.hpp"
