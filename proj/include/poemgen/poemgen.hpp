// Umbrella header: the whole library in dependency order.
#pragma once

#include "poemgen/common.hpp"
#include "poemgen/vocabulary.hpp"
#include "poemgen/corpus.hpp"
#include "poemgen/lm.hpp"
#include "poemgen/ngram.hpp"
#include "poemgen/recurrent.hpp"
#include "poemgen/training.hpp"
#include "poemgen/generate.hpp"
#include "poemgen/keywords.hpp"
#include "poemgen/fluency.hpp"
#include "poemgen/engine.hpp"
