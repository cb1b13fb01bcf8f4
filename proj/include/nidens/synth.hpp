#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nidens/dataset.hpp"

namespace nidens {

/// Synthetic stand-in for the NSL-KDD files: same record layout, same
/// per-attack row counts (so the class table matches the published one),
/// class-conditional feature distributions, and a harder test split in
/// which unseen attack names overlap more with normal traffic.
struct SynthOptions {
  std::uint64_t seed = 7;
  /// Row counts are multiplied by this (at least one row per attack name).
  double scale = 1.0;
};

const std::vector<std::pair<std::string, std::size_t>>& synth_attack_counts(SplitTag split);

std::string synth_nslkdd(SplitTag split, const SynthOptions& opts = {});

struct SynthFiles {
  std::filesystem::path train;
  std::filesystem::path test;
};

/// Writes KDDTrain+.txt and KDDTest+.txt into `dir`.
SynthFiles write_synth_nslkdd(const std::filesystem::path& dir, const SynthOptions& opts = {});

}  // namespace nidens
