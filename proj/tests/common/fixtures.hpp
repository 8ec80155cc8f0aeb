#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "alcn/model.hpp"
#include "alcn/train.hpp"

namespace fixture {

/// 2x2 single-channel denoiser and generator: 27 + 13 parameters.
inline alcn::ArchSpec tiny_denoiser() { return alcn::ArchSpec::denoiser(1, 2, {1}, 2); }
inline alcn::ArchSpec tiny_noisegen() { return alcn::ArchSpec::noise_generator(1, 2, {1}, 2); }

/// 4x4 two-stage pair used where a little more depth helps.
inline alcn::ArchSpec toy_denoiser() { return alcn::ArchSpec::denoiser(1, 4, {2, 3}, 3); }
inline alcn::ArchSpec toy_noisegen() { return alcn::ArchSpec::noise_generator(1, 4, {2, 3}, 3); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("alcn-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
