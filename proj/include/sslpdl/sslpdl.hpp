#pragma once

#include "sslpdl/augment.hpp"
#include "sslpdl/error.hpp"
#include "sslpdl/grid.hpp"
#include "sslpdl/labeling.hpp"
#include "sslpdl/manifest.hpp"
#include "sslpdl/nn/checkpoint.hpp"
#include "sslpdl/nn/gradcheck.hpp"
#include "sslpdl/nn/model.hpp"
#include "sslpdl/nn/ops.hpp"
#include "sslpdl/nn/optim.hpp"
#include "sslpdl/nn/tensor.hpp"
#include "sslpdl/objectives.hpp"
#include "sslpdl/patching.hpp"
#include "sslpdl/pipeline/ablate.hpp"
#include "sslpdl/pipeline/config.hpp"
#include "sslpdl/pipeline/run.hpp"
#include "sslpdl/random.hpp"
#include "sslpdl/sampling.hpp"
#include "sslpdl/synth.hpp"
#include "sslpdl/verify.hpp"
