#pragma once

// Umbrella header: the full training/evaluation engine and the cell
// classification pipeline built on it.

#include "rbcnet/augment.hpp"
#include "rbcnet/checkpoint.hpp"
#include "rbcnet/config.hpp"
#include "rbcnet/curves.hpp"
#include "rbcnet/ensemble.hpp"
#include "rbcnet/errors.hpp"
#include "rbcnet/features.hpp"
#include "rbcnet/gradcheck.hpp"
#include "rbcnet/harness.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/layers.hpp"
#include "rbcnet/loss.hpp"
#include "rbcnet/manifest.hpp"
#include "rbcnet/metrics.hpp"
#include "rbcnet/model.hpp"
#include "rbcnet/optim.hpp"
#include "rbcnet/preprocess.hpp"
#include "rbcnet/rng.hpp"
#include "rbcnet/svm.hpp"
#include "rbcnet/synth.hpp"
#include "rbcnet/tensor.hpp"
#include "rbcnet/threads.hpp"
#include "rbcnet/train.hpp"
