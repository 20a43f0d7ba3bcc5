// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the joint entity and relation extraction library.
#pragma once

#include "rin/checkpoint.hpp"
#include "rin/config.hpp"
#include "rin/corpus.hpp"
#include "rin/encoder.hpp"
#include "rin/error.hpp"
#include "rin/eval.hpp"
#include "rin/gradcheck.hpp"
#include "rin/heads.hpp"
#include "rin/interaction.hpp"
#include "rin/model.hpp"
#include "rin/optim.hpp"
#include "rin/rng.hpp"
#include "rin/tensor.hpp"
#include "rin/training.hpp"
