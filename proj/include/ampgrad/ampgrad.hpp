#pragma once

#include "ampgrad/amplification.hpp"
#include "ampgrad/common.hpp"
#include "ampgrad/data.hpp"
#include "ampgrad/experiment.hpp"
#include "ampgrad/graph.hpp"
#include "ampgrad/layers.hpp"
#include "ampgrad/model.hpp"
#include "ampgrad/rng.hpp"
#include "ampgrad/schedule.hpp"
#include "ampgrad/tensor.hpp"
#include "ampgrad/trainer.hpp"
