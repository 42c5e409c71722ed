// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fgmatch/adam.hpp"
#include "fgmatch/binary_io.hpp"
#include "fgmatch/checkpoint.hpp"
#include "fgmatch/embedstore.hpp"
#include "fgmatch/errors.hpp"
#include "fgmatch/evaluator.hpp"
#include "fgmatch/heads.hpp"
#include "fgmatch/losses.hpp"
#include "fgmatch/numcore.hpp"
#include "fgmatch/parallel.hpp"
#include "fgmatch/random.hpp"
#include "fgmatch/synthbench.hpp"
#include "fgmatch/tape.hpp"
#include "fgmatch/trainer.hpp"
