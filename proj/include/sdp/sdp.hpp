#pragma once

#include "checkpoint.hpp"
#include "config.hpp"
#include "consistency.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "gradcheck.hpp"
#include "hash.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "random.hpp"
#include "rational.hpp"
#include "rules.hpp"
#include "templates.hpp"
#include "training.hpp"
#include "vocab.hpp"
