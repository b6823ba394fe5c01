#pragma once

#include "iapl/checkpoint.hpp"
#include "iapl/conditioner.hpp"
#include "iapl/config.hpp"
#include "iapl/data.hpp"
#include "iapl/dct.hpp"
#include "iapl/encoder.hpp"
#include "iapl/errors.hpp"
#include "iapl/experiment.hpp"
#include "iapl/graph.hpp"
#include "iapl/image.hpp"
#include "iapl/image_io.hpp"
#include "iapl/losses.hpp"
#include "iapl/metrics.hpp"
#include "iapl/model.hpp"
#include "iapl/optimizer.hpp"
#include "iapl/residual.hpp"
#include "iapl/rng.hpp"
#include "iapl/tensor.hpp"
#include "iapl/threadpool.hpp"
#include "iapl/train.hpp"
#include "iapl/tta.hpp"
#include "iapl/views.hpp"
