// Umbrella header.
#pragma once

#include "xlabuse/common.hpp"
#include "xlabuse/corpus.hpp"
#include "xlabuse/evaluation.hpp"
#include "xlabuse/learner.hpp"
#include "xlabuse/maml.hpp"
#include "xlabuse/normalization.hpp"
#include "xlabuse/sampler.hpp"
#include "xlabuse/tsne.hpp"
