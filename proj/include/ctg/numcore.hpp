#pragma once

// Dense tensors with reverse-mode differentiation.
#include "ctg/tensor.hpp"
#include "ctg/ops.hpp"
#include "ctg/grad_check.hpp"
