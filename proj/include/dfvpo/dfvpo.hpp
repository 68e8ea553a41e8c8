#pragma once

#include "dfvpo/align.hpp"
#include "dfvpo/config.hpp"
#include "dfvpo/diffuse.hpp"
#include "dfvpo/distort.hpp"
#include "dfvpo/error.hpp"
#include "dfvpo/manifest.hpp"
#include "dfvpo/media.hpp"
#include "dfvpo/parallel.hpp"
#include "dfvpo/plot.hpp"
#include "dfvpo/rng.hpp"
#include "dfvpo/stats.hpp"
#include "dfvpo/theory.hpp"
