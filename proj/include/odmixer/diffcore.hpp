#pragma once

#include "odmixer/diffcore/grad_check.hpp"
#include "odmixer/diffcore/ops.hpp"
#include "odmixer/diffcore/tape.hpp"
#include "odmixer/diffcore/tensor.hpp"
