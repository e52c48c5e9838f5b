#ifndef MENTREE_MENTREE_HPP_
#define MENTREE_MENTREE_HPP_

#include "mentree/config.hpp"
#include "mentree/corpus.hpp"
#include "mentree/environment.hpp"
#include "mentree/error.hpp"
#include "mentree/eval.hpp"
#include "mentree/neural.hpp"
#include "mentree/random.hpp"
#include "mentree/rl.hpp"
#include "mentree/supervised.hpp"
#include "mentree/synth.hpp"
#include "mentree/transition.hpp"

#endif  // MENTREE_MENTREE_HPP_
