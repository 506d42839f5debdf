// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "akt/autoenc.hpp"
#include "akt/ktmodel.hpp"

namespace akt::cli {

// Binary layout, all integers little-endian:
//   "AKTC" | u32 version | u64 meta bytes | meta JSON
//   | u32 blob count | per blob: u32 name bytes, name, u64 rows, u64 cols, rows*cols f64
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, num::Tensor>> blobs;

    const num::Tensor& blob(const std::string& name) const;
    std::string kind() const { return meta.value("kind", ""); }
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Selection mask over the source bank, stored with the qid order it refers to.
struct StoredMask {
    autoenc::SelectionMask mask;
    std::vector<std::string> qids;
};

// Autoencoder stage output: parameters, vocabulary and the final selection.
Checkpoint pack_autoencoder(autoenc::AutoencoderParams& ae, const corpus::Vocab& vocab, const StoredMask& mask);
autoenc::AutoencoderParams unpack_autoencoder(const Checkpoint& ckpt);
corpus::Vocab unpack_vocab(const Checkpoint& ckpt);
std::optional<StoredMask> unpack_mask(const Checkpoint& ckpt);

// Full model. `stage` records the last step that produced it (train, adapt, finetune).
Checkpoint pack_model(kt::Model& model, kt::Variant variant, const std::string& stage,
                      const std::optional<StoredMask>& mask = std::nullopt);
kt::Model unpack_model(const Checkpoint& ckpt);
kt::Variant unpack_variant(const Checkpoint& ckpt);

}  // namespace akt::cli
