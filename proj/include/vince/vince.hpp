#pragma once

#include "vince/errors.hpp"
#include "vince/parallel.hpp"
#include "vince/tensor.hpp"
#include "vince/ops.hpp"
#include "vince/rng.hpp"
#include "vince/image.hpp"
#include "vince/encoder.hpp"
#include "vince/nce.hpp"
#include "vince/moco.hpp"
#include "vince/optim.hpp"
#include "vince/data.hpp"
#include "vince/train.hpp"
#include "vince/eval.hpp"
