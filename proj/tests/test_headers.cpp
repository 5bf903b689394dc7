#include "catch_amalgamated.hpp"

#include "dca/app/config.hpp"
#include "dca/barrier.hpp"
#include "dca/classifier.hpp"
#include "dca/diffusion.hpp"
#include "dca/metrics.hpp"
#include "dca/nn.hpp"
#include "dca/plot.hpp"
#include "dca/sde.hpp"
#include "dca/selfcorrect.hpp"
#include "dca/synthdata.hpp"

TEST_CASE("headers compile") { SUCCEED(); }
