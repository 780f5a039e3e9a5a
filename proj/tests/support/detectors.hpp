#pragma once

#include "keyreg/net.hpp"

namespace testsup {

// A network wired so the score map is a strictly monotone function of the
// input pixel: every conv on the full-resolution skip path is a center tap,
// everything else is zero, and batch norm stays at its resting statistics.
// Detections then sit exactly on local intensity maxima, which makes them
// perfectly repeatable across translated crops -- chain and registration
// logic get exercised without any detector noise in the way.
keyreg::UnetParams intensity_detector();

}  // namespace testsup
