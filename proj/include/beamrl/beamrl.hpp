#pragma once

// Umbrella header for the beamrl library: reinforcement-learned analog beam
// patterns and codebooks for phase-shifter-constrained antenna arrays.

#include "beamrl/agent.hpp"
#include "beamrl/array.hpp"
#include "beamrl/beams.hpp"
#include "beamrl/channel.hpp"
#include "beamrl/codebook.hpp"
#include "beamrl/common.hpp"
#include "beamrl/experiment.hpp"
#include "beamrl/neural.hpp"
