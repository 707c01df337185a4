// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "diagdistill/config.hpp"
#include "diagdistill/container.hpp"

using namespace diag;

TEST_SUITE("container") {

TEST_CASE("round trip keeps header text and float32 values") {
  Rng r(1);
  const std::vector<Tensor> ts = {gaussian_sample(r, {2, 3}), Tensor::from({0.5, -1.25, 3.0})};
  const std::string header = R"({"zeta":1,"shapes":[[2,3],[3]],"alpha":"x"})";
  const Container c = decode_container(encode_container(header, ts));
  CHECK(c.header == header);
  REQUIRE(c.tensors.size() == 2);
  CHECK(c.tensors[0].shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(c.tensors[0][i] == static_cast<double>(static_cast<float>(ts[0][i])));
  }
  CHECK(c.tensors[1] == ts[1]);
}

TEST_CASE("empty tensor list") {
  const std::string bytes = encode_container(shapes_header({}), {});
  const Container c = decode_container(bytes);
  CHECK(c.tensors.empty());
  CHECK(bytes.size() == 12 + c.header.size());
}

TEST_CASE("byte layout of a [3,4,8,8] latent") {
  const Tensor t({3, 4, 8, 8}, 1.0);
  const std::string header = shapes_header({t});
  const std::string bytes = encode_container(header, {t});
  // Payload is the shape product times 4 bytes: 768 floats.
  CHECK(bytes.size() == 8 + 4 + header.size() + 3072);
  const Tensor small({3, 4, 4, 8}, 1.0);
  CHECK(encode_container(shapes_header({small}), {small}).size() ==
        12 + shapes_header({small}).size() + 1536);
  CHECK(bytes.substr(0, 8) == "DIAGLAT1");
  const auto len = static_cast<unsigned char>(bytes[8]) |
                   (static_cast<unsigned char>(bytes[9]) << 8);
  CHECK(len == header.size());
  // 1.0f is 0x3f800000, little-endian.
  CHECK(static_cast<unsigned char>(bytes[12 + header.size() + 3]) == 0x3f);
  CHECK(static_cast<unsigned char>(bytes[12 + header.size() + 2]) == 0x80);
}

TEST_CASE("malformed inputs are format errors") {
  const Tensor t = Tensor::from({1.0, 2.0});
  const std::string good = encode_container(shapes_header({t}), {t});
  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_container(bad), doctest::Contains("bad magic"), FormatError);
  CHECK_THROWS_WITH_AS(decode_container(good.substr(0, good.size() - 1)),
                       doctest::Contains("truncated payload"), FormatError);
  CHECK_THROWS_AS(decode_container(good.substr(0, 10)), FormatError);
  CHECK_THROWS_WITH_AS(decode_container(good + "abcd"), doctest::Contains("mismatch"), FormatError);
  CHECK_THROWS_AS(encode_container(R"({"shapes":[[3]]})", {t}), FormatError);
  CHECK_THROWS_AS(encode_container("not json", {t}), FormatError);
}

TEST_CASE("file round trip and missing file") {
  const auto path = (std::filesystem::temp_directory_path() / "diag_container_test.bin").string();
  const Tensor t = Tensor::from({0.25, 0.5});
  write_container(path, shapes_header({t}), {t});
  CHECK(read_container(path).tensors[0] == t);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_container(path), Error);
}

}  // TEST_SUITE

TEST_SUITE("config") {

TEST_CASE("defaults and schema") {
  const RunConfig c;
  CHECK(c.get_int("seed") == 42);
  CHECK(c.get_number("shift_k") == 5.0);
  CHECK(c.get_int("window_chunks") == 4);
  CHECK(c.get_int("forcing_t") == 100);
  CHECK(c.get_bool("warp_enabled"));
  CHECK(c.get_string("flow_repr") == "learned");
  CHECK(c.schedule().shift_k == 5.0);
  CHECK(c.forcing().forcing_t == 100);
  CHECK(config_schema().size() >= 20);
}

TEST_CASE("unknown keys and mistyped values are rejected") {
  RunConfig c;
  CHECK_THROWS_WITH_AS(c.set("bogus", std::int64_t{1}), doctest::Contains("unknown config key: bogus"),
                       ConfigError);
  CHECK_THROWS_AS(c.set("seed", std::string("x")), ConfigError);
  CHECK_THROWS_AS(c.set_from_string("forcing_t", "abc"), ConfigError);
  CHECK_THROWS_AS(c.merge_json(R"({"nope": 3})"), ConfigError);
  CHECK_THROWS_AS(c.merge_json("[1,2]"), ConfigError);
  // Integers are accepted where a number is expected.
  c.set("shift_k", std::int64_t{3});
  CHECK(c.get_number("shift_k") == 3.0);
}

TEST_CASE("merge order: defaults < DIAG_SEED < file < explicit set") {
  const auto path = (std::filesystem::temp_directory_path() / "diag_config_test.json").string();
  {
    std::ofstream f(path);
    f << R"({"seed": 7, "forcing_t": 200})";
  }
  ::setenv("DIAG_SEED", "99", 1);
  RunConfig c;
  c.merge_env();
  CHECK(c.get_int("seed") == 99);
  c.merge_file(path);
  CHECK(c.get_int("seed") == 7);
  CHECK(c.get_int("forcing_t") == 200);
  c.set_from_string("seed", "5");
  CHECK(c.get_int("seed") == 5);
  ::unsetenv("DIAG_SEED");
  std::filesystem::remove(path);
}

TEST_CASE("to_json lists keys in schema order") {
  const RunConfig c;
  const std::string j = c.to_json();
  std::size_t last = 0;
  for (const auto& k : config_schema()) {
    const std::size_t at = j.find("\"" + k.name + "\"");
    REQUIRE(at != std::string::npos);
    CHECK(at >= last);
    last = at;
  }
}

}  // TEST_SUITE
