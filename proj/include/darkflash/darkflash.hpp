#pragma once

#include "darkflash/geometry.hpp"
#include "darkflash/image.hpp"
#include "darkflash/pfm.hpp"
#include "darkflash/png.hpp"
#include "darkflash/rng.hpp"
#include "darkflash/brdf.hpp"
#include "darkflash/synth.hpp"
#include "darkflash/augment.hpp"
#include "darkflash/solver.hpp"
#include "darkflash/fusion.hpp"
#include "darkflash/relight.hpp"
