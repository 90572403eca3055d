#pragma once

#include "mixspec2d/errors.hpp"
#include "mixspec2d/model.hpp"
#include "mixspec2d/synth.hpp"
#include "mixspec2d/spectrum.hpp"
#include "mixspec2d/estimator.hpp"
#include "mixspec2d/selector.hpp"
#include "mixspec2d/io.hpp"
#include "mixspec2d/experiments.hpp"
