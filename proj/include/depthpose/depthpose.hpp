#pragma once

#include "depthpose/error.hpp"
#include "depthpose/random.hpp"
#include "depthpose/core.hpp"
#include "depthpose/binary_io.hpp"
#include "depthpose/container.hpp"
#include "depthpose/synth.hpp"
#include "depthpose/preproc.hpp"
#include "depthpose/prototypes.hpp"
#include "depthpose/net.hpp"
#include "depthpose/ddp.hpp"
#include "depthpose/evalstats.hpp"
