#pragma once

#include "selfgan/cli.hpp"
#include "selfgan/config.hpp"
#include "selfgan/core.hpp"
#include "selfgan/decoders.hpp"
#include "selfgan/decoding.hpp"
#include "selfgan/evaluation.hpp"
#include "selfgan/mcts.hpp"
#include "selfgan/models.hpp"
#include "selfgan/parameters.hpp"
#include "selfgan/tasks.hpp"
#include "selfgan/training.hpp"
