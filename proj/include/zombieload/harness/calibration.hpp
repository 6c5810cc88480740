#pragma once

#include "zombieload/common.hpp"

// Fitted noise parameters. data/calibration.json holds the same values as
// written by `zlsim calibrate scenarios/calibrate.json`; a test keeps the two
// in sync.

namespace zl::harness::calib {

// Covert channel sender and loopback.
inline constexpr std::size_t kSenderRepeats = 64;
inline constexpr std::size_t kSenderAddresses = 2;
inline constexpr Tick kSenderOpSpacing = 2;
inline constexpr Tick kAckLatency = 2000;

// AES trigger.
inline constexpr Tick kTriggerWindow = 50;
inline constexpr Tick kProbeInterval = 10;

// Prefetch gadget and kernel noise.
inline constexpr double kGadgetMispredict = 0.5;
inline constexpr double kGadgetNoiseWeight = 0.9835;
inline constexpr double kGadgetActivityJitter = 0.25;
inline constexpr std::size_t kGadgetNoisePool = 48;
inline constexpr Tick kGadgetStep = 200;

// Frequency-difference gate.
inline constexpr double kTargetedZ = 4.5;
inline constexpr double kTargetedDrift = 0.7;

}  // namespace zl::harness::calib
