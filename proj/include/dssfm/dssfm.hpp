#pragma once
// Umbrella header.

#include "dssfm/config.hpp"
#include "dssfm/dss_prior.hpp"
#include "dssfm/em.hpp"
#include "dssfm/io.hpp"
#include "dssfm/kalman.hpp"
#include "dssfm/loadings.hpp"
#include "dssfm/metrics.hpp"
#include "dssfm/rotation.hpp"
#include "dssfm/simulate.hpp"
#include "dssfm/surrogate.hpp"
#include "dssfm/types.hpp"
#include "dssfm/volatility.hpp"
