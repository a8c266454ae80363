#pragma once

// Umbrella header for the whole library.

#include "dmn/autodiff.hpp"
#include "dmn/checkpoint.hpp"
#include "dmn/commands.hpp"
#include "dmn/config.hpp"
#include "dmn/corpus.hpp"
#include "dmn/errors.hpp"
#include "dmn/evaluation.hpp"
#include "dmn/event_data.hpp"
#include "dmn/fixtures.hpp"
#include "dmn/metrics.hpp"
#include "dmn/model.hpp"
#include "dmn/parallel.hpp"
#include "dmn/realtime.hpp"
#include "dmn/rng.hpp"
#include "dmn/sampling.hpp"
#include "dmn/text_provider.hpp"
#include "dmn/thread_engine.hpp"
#include "dmn/training.hpp"
