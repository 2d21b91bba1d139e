#ifndef ANCHOR_ANCHOR_HPP
#define ANCHOR_ANCHOR_HPP

// Umbrella header for the anchor continual-learning library.

#include "anchor/experiment.hpp"
#include "anchor/format.hpp"
#include "anchor/importance.hpp"
#include "anchor/metrics.hpp"
#include "anchor/net.hpp"
#include "anchor/regularizer.hpp"
#include "anchor/rng.hpp"
#include "anchor/tasks.hpp"
#include "anchor/tensor.hpp"
#include "anchor/trainer.hpp"

#endif  // ANCHOR_ANCHOR_HPP
