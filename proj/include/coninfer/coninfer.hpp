#pragma once

#include "error.hpp"
#include "types.hpp"
#include "tensorio.hpp"
#include "prior.hpp"
#include "gmm.hpp"
#include "consensus.hpp"
#include "segmap.hpp"
#include "synth.hpp"
#include "cli.hpp"
