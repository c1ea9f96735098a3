#pragma once

#include "dgmarl/diffcore/adam.hpp"
#include "dgmarl/diffcore/dense.hpp"
#include "dgmarl/diffcore/gradcheck.hpp"
#include "dgmarl/diffcore/mlp.hpp"
#include "dgmarl/diffcore/ops.hpp"
#include "dgmarl/diffcore/tape.hpp"
