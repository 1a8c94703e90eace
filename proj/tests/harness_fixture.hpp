#pragma once

#include "s2v/harness/config.hpp"

namespace s2v::harness::test {

/// Small clean dataset geometry that keeps pipeline tests fast.
inline DatasetConfig small_dataset(int n_cases) {
  DatasetConfig d;
  d.n_cases = n_cases;
  d.cases_per_volume = 5;
  d.volume_dims = {64, 64, 64};
  d.voxel_spacing_mm = {2.0, 2.0, 2.0};
  d.frame_dims = {128, 128};
  d.pixel_spacing_mm = {0.5, 0.5};
  d.degrade = false;
  return d;
}

}  // namespace s2v::harness::test
