#pragma once

// Binary checkpoint: magic, header length (u64 LE), JSON header, raw
// little-endian doubles for every parameter in store order.

#include "dysurv/pipeline.hpp"
#include "dysurv/training.hpp"

#include <filesystem>

namespace dysurv {

struct ModelBundle {
  Preprocessor pre;
  DySurvParams params;
  TrainConfig config;
};

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);

/// Throws E_NO_CHECKPOINT when the file is missing, E_CORRUPT on a bad magic
/// or truncated payload, and E_INCOMPATIBLE when `expected` is given and its
/// hash differs from the stored schema hash.
ModelBundle load_checkpoint(const std::filesystem::path& path,
                            const FeatureSchema* expected = nullptr);

}  // namespace dysurv
