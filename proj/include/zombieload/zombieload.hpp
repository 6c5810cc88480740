#pragma once

#include "zombieload/common.hpp"
#include "zombieload/uarch/types.hpp"
#include "zombieload/uarch/fill_buffer.hpp"
#include "zombieload/uarch/machine.hpp"
#include "zombieload/uarch/interleave.hpp"
#include "zombieload/sampler/variant.hpp"
#include "zombieload/sampler/sampler.hpp"
#include "zombieload/channel/packet.hpp"
#include "zombieload/channel/covert.hpp"
#include "zombieload/recover/domino.hpp"
#include "zombieload/recover/combine.hpp"
#include "zombieload/recover/sliding.hpp"
#include "zombieload/recover/aes.hpp"
#include "zombieload/recover/keywords.hpp"
#include "zombieload/recover/url.hpp"
#include "zombieload/recover/targeted.hpp"
#include "zombieload/harness/calibration.hpp"
#include "zombieload/harness/victims.hpp"
#include "zombieload/harness/fb_size.hpp"
#include "zombieload/harness/config.hpp"
#include "zombieload/harness/report.hpp"
#include "zombieload/harness/experiments.hpp"
