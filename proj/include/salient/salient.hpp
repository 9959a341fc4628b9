#pragma once

#include "salient/error.hpp"
#include "salient/imgcore.hpp"
#include "salient/image_io.hpp"
#include "salient/segment.hpp"
#include "salient/featwin.hpp"
#include "salient/regressor.hpp"
#include "salient/coherence.hpp"
#include "salient/fusion.hpp"
#include "salient/evalkit.hpp"
#include "salient/pipeline.hpp"
