#include <catch_amalgamated.hpp>

#include "support/fixtures.hpp"

using namespace ensi;

TEST_CASE("identity packs one column per ciphertext", "[packing]") {
  const auto& b = fx::clear();
  auto pm = pack_columns(b, Matrix::identity(2));
  REQUIRE(pm.ncols() == 2);
  REQUIRE(pm.rows == 2);
  auto c0 = b.decrypt(pm.cols[0]), c1 = b.decrypt(pm.cols[1]);
  CHECK(c0[0] == 1.0);
  CHECK(c0[1] == 0.0);
  CHECK(c1[0] == 0.0);
  CHECK(c1[1] == 1.0);
  CHECK(std::string(PackedMatrix<he::ClearBackend>::layout) == "column");
}

TEST_CASE("slots past the row count are zero padded", "[packing]") {
  he::ClearBackend b(he::HeParams::make(8, 3, 1));  // N = 4 slots
  Matrix X(3, 2, 5.0);
  auto pm = pack_columns(b, X);
  for (const auto& c : pm.cols) CHECK(b.decrypt(c)[3] == 0.0);
  CHECK(slot_utilization(b, pm) == 0.75);
  CHECK_THROWS_AS(pack_columns(b, Matrix(5, 1)), DimensionMismatch);
}

TEST_CASE("pack then unpack recovers the matrix", "[packing]") {
  Xoshiro256 rng(3);
  auto X = Matrix::random(4, 4, rng);
  CHECK(unpack(fx::clear(), pack_columns(fx::clear(), X)) == X);
  auto back = unpack(fx::ckks(), pack_columns(fx::ckks(), X));
  CHECK(ref::max_abs_diff(back, X) < 1e-6);
  CHECK(unpack(fx::clear(), pack_columns(fx::clear(), Matrix(3, 2))) == Matrix(3, 2));
}

TEST_CASE("packing is linear", "[packing]") {
  const auto& b = fx::ckks();
  Xoshiro256 rng(4);
  auto X = Matrix::random(8, 3, rng), Y = Matrix::random(8, 3, rng);
  auto sum = add(b, pack_columns(b, X), pack_columns(b, Y));
  Matrix want(8, 3);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 3; ++j) want(i, j) = X(i, j) + Y(i, j);
  CHECK(ref::max_abs_diff(unpack(b, sum), want) < 1e-6);
}

TEST_CASE("broadcast and slotwise plaintexts", "[packing]") {
  const auto& b = fx::ckks();
  auto half = encode_broadcast(b, 1.0 / std::sqrt(4.0));
  for (std::size_t i = 0; i < b.slot_count(); i += 97) CHECK(half.slots[i] == 0.5);
  std::vector<double> table{std::cos(0.0), std::cos(0.3), std::cos(0.6)};
  auto pt = encode_slotwise(b, std::span<const double>(table));
  CHECK(pt.slots[1] == table[1]);
  CHECK(pt.slots[3] == 0.0);

  Xoshiro256 rng(5);
  auto x = fx::random_vec(rng, 16);
  auto doubled = b.decrypt(b.mult_plain(b.encrypt(x), encode_broadcast(b, 2.0)));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(doubled[i] - 2 * x[i]) < 1e-6);
}

TEST_CASE("level_align drops every column to the lowest level", "[packing]") {
  const auto& b = fx::clear();
  auto pm = pack_columns(b, Matrix(2, 3, 1.0));
  pm.cols[1] = b.drop_to(pm.cols[1], 4);
  auto al = level_align(b, pm);
  for (const auto& c : al.cols) CHECK(c.level() == 4);
}

TEST_CASE("packed matrix bytes round trip exactly", "[packing][serialize]") {
  const auto& b = fx::ckks();
  Xoshiro256 rng(6);
  auto pm = pack_columns(b, Matrix::random(5, 3, rng));
  auto bytes = packed_bytes(b, pm);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ENSM");
  auto back = packed_from_bytes(b, bytes);
  CHECK(back.rows == 5);
  REQUIRE(back.ncols() == 3);
  for (std::size_t j = 0; j < 3; ++j) CHECK(back.cols[j].data == pm.cols[j].data);
  CHECK(packed_bytes(b, back) == bytes);

  auto bad = bytes;
  bad.push_back(1);
  CHECK_THROWS_AS(packed_from_bytes(b, bad), FormatError);
  bad = bytes;
  bad[4] = 0xff;  // rows far beyond the slot count
  bad[5] = 0xff;
  bad[6] = 0xff;
  CHECK_THROWS_AS(packed_from_bytes(b, bad), FormatError);
}
