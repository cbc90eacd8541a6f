#pragma once

#include "odtk/core.hpp"
#include "odtk/prng.hpp"
#include "odtk/io.hpp"
#include "odtk/csv.hpp"
#include "odtk/bundle.hpp"
#include "odtk/stats.hpp"
#include "odtk/od_detect.hpp"
#include "odtk/ablation.hpp"
#include "odtk/freq_stats.hpp"
#include "odtk/logit_attrib.hpp"
#include "odtk/param_spikes.hpp"
#include "odtk/timeline.hpp"
#include "odtk/synthetic.hpp"
#include "odtk/svg.hpp"
