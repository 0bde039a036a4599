#pragma once

// Binary checkpoint container:
//
//   bytes 0..7    magic "HMLCKPT\0"
//   bytes 8..15   header length L, little-endian uint64
//   next L bytes  UTF-8 JSON header (format version, config echo, iteration,
//                 seed state, architecture, tensor table)
//   remainder     tensor payload, little-endian IEEE-754 doubles, in table
//                 order; each table entry records its byte offset into the
//                 payload and its shape
//
// Saving, loading and saving again reproduces the file byte for byte.

#include "hml/config.hpp"
#include "hml/learner.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hml {

struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    RunConfig config;
    MetaState state;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hml
