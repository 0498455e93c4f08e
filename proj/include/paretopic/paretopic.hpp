#pragma once

#include "paretopic/augment.hpp"
#include "paretopic/config.hpp"
#include "paretopic/corpus.hpp"
#include "paretopic/diffnet.hpp"
#include "paretopic/error.hpp"
#include "paretopic/eval.hpp"
#include "paretopic/moo.hpp"
#include "paretopic/ntm.hpp"
#include "paretopic/rng.hpp"
#include "paretopic/selftest.hpp"
#include "paretopic/setcl.hpp"
#include "paretopic/synthetic.hpp"
#include "paretopic/trainer.hpp"
