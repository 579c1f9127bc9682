#pragma once

// Bivariate log-Gaussian Cox process model for panel count data:
// data model, kernels, grid approximation, conditionals, samplers,
// Gibbs engine, simulation scenarios and posterior prediction.

#include "chain_io.hpp"
#include "engine.hpp"
#include "grid.hpp"
#include "kernels.hpp"
#include "model.hpp"
#include "panel_data.hpp"
#include "predict.hpp"
#include "rng.hpp"
#include "samplers.hpp"
#include "simulate.hpp"
