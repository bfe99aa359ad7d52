#pragma once

#include "bingear/binary_io.hpp"
#include "bingear/config.hpp"
#include "bingear/datagen.hpp"
#include "bingear/distill.hpp"
#include "bingear/error.hpp"
#include "bingear/eval.hpp"
#include "bingear/graph.hpp"
#include "bingear/inference.hpp"
#include "bingear/matrix.hpp"
#include "bingear/parallel.hpp"
#include "bingear/propagation.hpp"
#include "bingear/quantize.hpp"
#include "bingear/random.hpp"
#include "bingear/synth.hpp"
#include "bingear/trainer.hpp"
