#pragma once

// Umbrella header for the dual-stream insertion toolkit.

#include "dsi/attention.hpp"
#include "dsi/client_config.hpp"
#include "dsi/clients.hpp"
#include "dsi/common.hpp"
#include "dsi/curation.hpp"
#include "dsi/dit.hpp"
#include "dsi/grid.hpp"
#include "dsi/guidance.hpp"
#include "dsi/layout.hpp"
#include "dsi/rope.hpp"
#include "dsi/rope_offsets.hpp"
#include "dsi/sampler.hpp"
#include "dsi/selftest.hpp"
#include "dsi/tape.hpp"
#include "dsi/train.hpp"
