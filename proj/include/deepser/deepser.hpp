#pragma once

#include "deepser/checkpoint.hpp"
#include "deepser/data.hpp"
#include "deepser/dsp.hpp"
#include "deepser/features.hpp"
#include "deepser/harness.hpp"
#include "deepser/nn.hpp"
#include "deepser/objectives.hpp"
#include "deepser/random.hpp"
#include "deepser/wav.hpp"
