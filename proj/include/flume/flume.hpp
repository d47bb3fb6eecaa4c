#pragma once

// Umbrella header.

#include "flume/actions.hpp"
#include "flume/adjoint.hpp"
#include "flume/checkpoint.hpp"
#include "flume/core.hpp"
#include "flume/gas.hpp"
#include "flume/grad.hpp"
#include "flume/grid.hpp"
#include "flume/io.hpp"
#include "flume/losses.hpp"
#include "flume/materials.hpp"
#include "flume/mpm.hpp"
#include "flume/optimize.hpp"
#include "flume/rng.hpp"
#include "flume/scene.hpp"
#include "flume/scene_library.hpp"
#include "flume/sdf.hpp"
#include "flume/svd.hpp"
#include "flume/types.hpp"
#include "flume/validate.hpp"
