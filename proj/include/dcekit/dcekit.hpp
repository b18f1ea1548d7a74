#pragma once

// Everything except pipeline.hpp, which additionally needs nlohmann/json.

#include "dcekit/components.hpp"
#include "dcekit/error.hpp"
#include "dcekit/fitting.hpp"
#include "dcekit/io.hpp"
#include "dcekit/least_squares.hpp"
#include "dcekit/metrics.hpp"
#include "dcekit/parallel.hpp"
#include "dcekit/phantom.hpp"
#include "dcekit/relaxometry.hpp"
#include "dcekit/vif_models.hpp"
#include "dcekit/vif_region.hpp"
#include "dcekit/volume.hpp"
