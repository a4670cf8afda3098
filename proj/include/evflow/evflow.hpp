#pragma once

// Umbrella header for the event-to-flow pipeline.

#include "evflow/core.hpp"
#include "evflow/parallel.hpp"
#include "evflow/bounded_queue.hpp"
#include "evflow/flow_field.hpp"
#include "evflow/io_formats.hpp"
#include "evflow/accumulator.hpp"
#include "evflow/filtering.hpp"
#include "evflow/distance_surface.hpp"
#include "evflow/flow.hpp"
#include "evflow/metrics.hpp"
#include "evflow/pipeline.hpp"
#include "evflow/config.hpp"
#include "evflow/png_io.hpp"
