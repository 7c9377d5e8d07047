#pragma once

// Umbrella header for the GCR training engine.

#include "gcr/data.hpp"
#include "gcr/diagnostics.hpp"
#include "gcr/errors.hpp"
#include "gcr/graphs.hpp"
#include "gcr/loss.hpp"
#include "gcr/manifest.hpp"
#include "gcr/model.hpp"
#include "gcr/random.hpp"
#include "gcr/runner.hpp"
#include "gcr/serialize.hpp"
#include "gcr/tensor.hpp"
#include "gcr/trainer.hpp"
