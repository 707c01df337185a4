// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "diagdistill/tensor.hpp"

namespace diag {

/// DIAGLAT1 file: 8-byte magic, 4-byte little-endian header length, the UTF-8
/// JSON header, then little-endian float32 payload, tensor-major. The header
/// must be a JSON object whose "shapes" key lists one shape per tensor; it is
/// stored verbatim, so key order survives a round trip.
struct Container {
  std::string header;
  std::vector<Tensor> tensors;
};

inline constexpr std::string_view kContainerMagic = "DIAGLAT1";

std::string encode_container(const std::string& header, const std::vector<Tensor>& tensors);
Container decode_container(std::string_view bytes);

void write_container(const std::string& path, const std::string& header,
                     const std::vector<Tensor>& tensors);
Container read_container(const std::string& path);

/// Minimal header {"shapes": [...]} for a tensor list.
std::string shapes_header(const std::vector<Tensor>& tensors);

}  // namespace diag
