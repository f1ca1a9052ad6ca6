#pragma once

// Umbrella header for the whole engine.

#include "qbh/error.hpp"
#include "qbh/binary_io.hpp"
#include "qbh/parallel.hpp"
#include "qbh/audio.hpp"
#include "qbh/cqt.hpp"
#include "qbh/fingerprint.hpp"
#include "qbh/matching.hpp"
#include "qbh/metric_learning.hpp"
#include "qbh/alignment.hpp"
#include "qbh/retrieval.hpp"
#include "qbh/synth.hpp"
#include "qbh/json_io.hpp"
