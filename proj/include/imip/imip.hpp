#pragma once

// Implicitly matched interest points: detection, self-supervised training,
// geometric verification, and compression baselines.

#include "imip/activations.hpp"
#include "imip/adam.hpp"
#include "imip/bench.hpp"
#include "imip/binio.hpp"
#include "imip/compression.hpp"
#include "imip/conv.hpp"
#include "imip/correspondence.hpp"
#include "imip/extraction.hpp"
#include "imip/geometry.hpp"
#include "imip/gradcheck.hpp"
#include "imip/image.hpp"
#include "imip/klt.hpp"
#include "imip/kvfile.hpp"
#include "imip/network.hpp"
#include "imip/parallel.hpp"
#include "imip/rng.hpp"
#include "imip/synth.hpp"
#include "imip/tensor.hpp"
#include "imip/training.hpp"
