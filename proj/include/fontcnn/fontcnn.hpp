#pragma once

#include "fontcnn/augment.hpp"
#include "fontcnn/dataset.hpp"
#include "fontcnn/error.hpp"
#include "fontcnn/infer.hpp"
#include "fontcnn/nn/checkpoint.hpp"
#include "fontcnn/nn/grad_check.hpp"
#include "fontcnn/nn/network.hpp"
#include "fontcnn/nn/topology.hpp"
#include "fontcnn/nn/train.hpp"
#include "fontcnn/random.hpp"
#include "fontcnn/raster.hpp"
#include "fontcnn/segment.hpp"
#include "fontcnn/sensitivity.hpp"
#include "fontcnn/synthgen.hpp"
