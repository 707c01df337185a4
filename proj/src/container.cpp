// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

namespace diag {

namespace {

using nlohmann::json;

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32_le(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

std::vector<Shape> parse_shapes(const std::string& header) {
  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!h.is_object() || !h.contains("shapes") || !h["shapes"].is_array()) {
    throw FormatError("header lacks a \"shapes\" array");
  }
  std::vector<Shape> shapes;
  for (const auto& s : h["shapes"]) {
    if (!s.is_array()) throw FormatError("header shape is not an array");
    Shape shape;
    for (const auto& d : s) {
      if (!d.is_number_unsigned()) throw FormatError("header shape entry is not a size");
      shape.push_back(d.get<std::size_t>());
    }
    shapes.push_back(std::move(shape));
  }
  return shapes;
}

}  // namespace

std::string shapes_header(const std::vector<Tensor>& tensors) {
  json shapes = json::array();
  for (const auto& t : tensors) shapes.push_back(t.shape());
  return json{{"shapes", shapes}}.dump();
}

std::string encode_container(const std::string& header, const std::vector<Tensor>& tensors) {
  const auto shapes = parse_shapes(header);
  if (shapes.size() != tensors.size()) {
    throw FormatError("header/payload shape mismatch: header lists " +
                      std::to_string(shapes.size()) + " tensors, got " +
                      std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i] != tensors[i].shape()) {
      throw FormatError("header/payload shape mismatch at tensor " + std::to_string(i) + ": " +
                        shape_str(shapes[i]) + " vs " + shape_str(tensors[i].shape()));
    }
  }
  if (header.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("header too long");
  }
  std::string out(kContainerMagic);
  put_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& t : tensors) {
    for (double v : t.data()) {
      put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Container decode_container(std::string_view bytes) {
  if (bytes.size() < kContainerMagic.size() || bytes.substr(0, kContainerMagic.size()) != kContainerMagic) {
    throw FormatError("bad magic");
  }
  std::size_t pos = kContainerMagic.size();
  if (bytes.size() < pos + 4) throw FormatError("truncated header length");
  const std::size_t hlen = get_u32_le(bytes, pos);
  pos += 4;
  if (bytes.size() < pos + hlen) throw FormatError("truncated header");
  Container c;
  c.header = std::string(bytes.substr(pos, hlen));
  pos += hlen;
  const auto shapes = parse_shapes(c.header);
  std::size_t floats = 0;
  for (const auto& s : shapes) floats += shape_numel(s);
  const std::size_t payload = bytes.size() - pos;
  if (payload < 4 * floats) {
    throw FormatError("truncated payload: expected " + std::to_string(4 * floats) +
                      " bytes, found " + std::to_string(payload));
  }
  if (payload > 4 * floats) {
    throw FormatError("header/payload shape mismatch: " + std::to_string(payload - 4 * floats) +
                      " trailing bytes");
  }
  for (const auto& s : shapes) {
    Tensor t(s);
    for (double& v : t.data()) {
      v = static_cast<double>(std::bit_cast<float>(get_u32_le(bytes, pos)));
      pos += 4;
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void write_container(const std::string& path, const std::string& header,
                     const std::vector<Tensor>& tensors) {
  const std::string bytes = encode_container(header, tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path);
}

Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace diag
