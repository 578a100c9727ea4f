#pragma once

#include "guide/common.hpp"
#include "guide/config.hpp"
#include "guide/dataset.hpp"
#include "guide/harness.hpp"
#include "guide/kmeans.hpp"
#include "guide/matrix_io.hpp"
#include "guide/metrics.hpp"
#include "guide/mlp.hpp"
#include "guide/rng.hpp"
#include "guide/synthetic.hpp"
#include "guide/train.hpp"
#include "guide/transform.hpp"
#include "guide/version.hpp"
