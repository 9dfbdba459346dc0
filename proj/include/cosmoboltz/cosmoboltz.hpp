#pragma once

#include "cosmoboltz/common.hpp"
#include "cosmoboltz/regime.hpp"
#include "cosmoboltz/scale_factor.hpp"
#include "cosmoboltz/sphere_quadrature.hpp"
#include "cosmoboltz/velocity_space.hpp"
#include "cosmoboltz/collision_ops.hpp"
#include "cosmoboltz/spectral_norms.hpp"
#include "cosmoboltz/evolution.hpp"
#include "cosmoboltz/decay_analysis.hpp"
#include "cosmoboltz/operator_probes.hpp"
#include "cosmoboltz/config.hpp"
#include "cosmoboltz/runner.hpp"
