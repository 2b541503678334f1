#pragma once

// Umbrella header: particle-based Stein variational inference, amortized
// neural samplers, and adversarial MLE training of energy-based models.

#include "stein/amortize.hpp"
#include "stein/config.hpp"
#include "stein/dataset.hpp"
#include "stein/density.hpp"
#include "stein/energy.hpp"
#include "stein/errors.hpp"
#include "stein/harness.hpp"
#include "stein/io.hpp"
#include "stein/kernels.hpp"
#include "stein/mlp.hpp"
#include "stein/optim.hpp"
#include "stein/particles.hpp"
#include "stein/rng.hpp"
#include "stein/steingan.hpp"
#include "stein/svgd.hpp"
#include "stein/tape.hpp"
#include "stein/tensor.hpp"
#include "stein/trace.hpp"
