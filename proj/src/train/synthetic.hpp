// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "traffic/dataset.hpp"
#include "traffic/repr.hpp"

namespace netmamba::train {

/// Seeded generator of labeled flows for desk-scale runs.
///
/// Each class owns a fixed signature: server port, TTL, TCP window, flag
/// pattern and typical payload size. A flow alternates client/server packets
/// with a random client port, IP id and sequence numbers (advanced per
/// packet), addresses zeroed as after anonymization, and uniform-random
/// payload bytes. Packets go through the regular header/payload split and
/// crop/pad, so the byte layout matches extracted captures.
struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t per_class = 200;
  traffic::ReprConfig repr;
  std::uint64_t seed = 0;
  bool labeled = true;
};

traffic::SampleSet synthetic_dataset(const SyntheticSpec& spec);

}  // namespace netmamba::train
