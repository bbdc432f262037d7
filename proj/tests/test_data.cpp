#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "mapdp/checkpoint.hpp"
#include "mapdp/data.hpp"

using namespace mapdp;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  auto dir = fs::temp_directory_path() / "mapdp_data_tests";
  fs::create_directories(dir);
  return dir;
}

void put_bytes(const fs::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
}

std::vector<uint8_t> get_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("IDX parse of hand-built files") {
  const auto dir = scratch();
  // labels: magic 0x00000801, count 3, payload 1 2 3
  put_bytes(dir / "labels.idx",
            {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});
  auto lab = idx::parse((dir / "labels.idx").string());
  CHECK(lab.dims == std::vector<uint32_t>{3});
  CHECK(lab.payload == std::vector<uint8_t>{1, 2, 3});

  // images: magic 0x00000803, 2 images of 2x2, payload 0..7
  put_bytes(dir / "images.idx",
            {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
             0, 1, 2, 3, 4, 5, 6, 7});
  auto img = idx::parse((dir / "images.idx").string());
  CHECK(img.dims == std::vector<uint32_t>{2, 2, 2});
  CHECK(img.payload.size() == 8);
  CHECK(img.payload[7] == 7);
}

TEST_CASE("IDX dataset loading scales and counts classes") {
  const auto dir = scratch();
  put_bytes(dir / "img2.idx",
            {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2,
             0, 255, 51, 102});
  put_bytes(dir / "lab2.idx", {0, 0, 8, 1, 0, 0, 0, 2, 0, 4});
  auto ds = load_idx_dataset<double>((dir / "img2.idx").string(),
                                     (dir / "lab2.idx").string());
  CHECK(ds.size() == 2);
  CHECK(ds.dim == 2);
  CHECK(ds.classes == 5);
  CHECK(ds.images[0] == 0.0);
  CHECK(ds.images[1] == 1.0);
  CHECK(ds.images[2] == doctest::Approx(51.0 / 255.0).epsilon(1e-15));
  CHECK(ds.labels == std::vector<int>{0, 4});
}

TEST_CASE("IDX error paths") {
  const auto dir = scratch();
  put_bytes(dir / "badmagic.idx", {0, 0, 9, 9, 0, 0, 0, 1, 7});
  CHECK_THROWS_AS(idx::parse((dir / "badmagic.idx").string()), IoError);
  put_bytes(dir / "short.idx", {0, 0, 8, 1, 0, 0, 0, 5, 1, 2});
  CHECK_THROWS_AS(idx::parse((dir / "short.idx").string()), IoError);
  put_bytes(dir / "hdr.idx", {0, 0, 8, 3, 0, 0});
  CHECK_THROWS_AS(idx::parse((dir / "hdr.idx").string()), IoError);
  CHECK_THROWS_AS(idx::parse((dir / "does_not_exist.idx").string()), IoError);
  // mismatched image/label counts
  put_bytes(dir / "img1.idx",
            {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
  put_bytes(dir / "lab3.idx", {0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 2});
  CHECK_THROWS_AS(load_idx_dataset<float>((dir / "img1.idx").string(),
                                          (dir / "lab3.idx").string()),
                  IoError);
}

TEST_CASE("IDX write then parse is byte-exact") {
  const auto dir = scratch();
  IdxData img;
  img.dims = {3, 2, 2};
  img.payload.resize(12);
  for (size_t i = 0; i < 12; ++i) img.payload[i] = uint8_t(i * 7);
  idx::write((dir / "rt.idx").string(), img);
  auto back = idx::parse((dir / "rt.idx").string());
  CHECK(back.dims == img.dims);
  CHECK(back.payload == img.payload);
  // raw header bytes: big-endian magic then dims
  auto raw = get_bytes(dir / "rt.idx");
  CHECK(raw.size() == 16 + 12);
  CHECK(std::vector<uint8_t>(raw.begin(), raw.begin() + 8) ==
        std::vector<uint8_t>{0, 0, 8, 3, 0, 0, 0, 3});
}

TEST_CASE("synthetic blobs: determinism, counts, labels") {
  auto a = gen_synthetic<double>(4, 25, 8, 77);
  auto b = gen_synthetic<double>(4, 25, 8, 77);
  auto c = gen_synthetic<double>(4, 25, 8, 78);
  CHECK(a.size() == 100);
  CHECK(a.dim == 8);
  CHECK(a.classes == 4);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.images != c.images);
  for (size_t c_i = 0; c_i < 4; ++c_i)
    for (size_t s = 0; s < 25; ++s)
      CHECK(a.labels[c_i * 25 + s] == int(c_i));
  CHECK_THROWS_AS(gen_synthetic<double>(1, 10, 4, 1), ConfigError);
}

TEST_CASE("synthetic blobs: tiny sigma samples sit at their class mean") {
  auto means = gen_synthetic<double>(3, 1, 5, 123, 0.0);  // exact means
  auto noisy = gen_synthetic<double>(3, 10, 5, 123, 1e-9);
  for (size_t i = 0; i < noisy.size(); ++i) {
    // nearest mean oracle
    int best = -1;
    double best_d = 1e300;
    for (size_t cl = 0; cl < 3; ++cl) {
      double d = 0;
      for (size_t k = 0; k < 5; ++k) {
        const double diff = noisy.images[i * 5 + k] - means.images[cl * 5 + k];
        d += diff * diff;
      }
      if (d < best_d) { best_d = d; best = int(cl); }
    }
    REQUIRE(best == noisy.labels[i]);
  }
}

TEST_CASE("to_idx quantization endpoints") {
  Dataset<double> ds;
  ds.dim = 4;
  ds.classes = 2;
  ds.images = {-2.0, 0.0, 2.0, -5.0, 5.0, 1.0, -1.0, 0.0};
  ds.labels = {0, 1};
  auto [img, lab] = to_idx(ds, 2, 2);
  CHECK(img.dims == std::vector<uint32_t>{2, 2, 2});
  CHECK(img.payload[0] == 0);     // -2 -> low end
  CHECK(img.payload[1] == 128);   // 0 -> mid, rounds up
  CHECK(img.payload[2] == 255);   // +2 -> high end
  CHECK(img.payload[3] == 0);     // clamped below
  CHECK(img.payload[4] == 255);   // clamped above
  CHECK(lab.dims == std::vector<uint32_t>{2});
  CHECK(lab.payload == std::vector<uint8_t>{0, 1});
  CHECK_THROWS_AS(to_idx(ds, 3, 2), ConfigError);
}

TEST_CASE("standardize uses train statistics only") {
  Dataset<double> train, test;
  train.dim = test.dim = 1;
  train.images = {0.0, 2.0};
  train.labels = {0, 1};
  test.images = {3.0};
  test.labels = {0};
  standardize(train, test);
  CHECK(train.norm_mean == 1.0);
  CHECK(train.norm_std == 1.0);
  CHECK(train.images == std::vector<double>{-1.0, 1.0});
  CHECK(test.images == std::vector<double>{2.0});
  // constant features fall back to unit std
  Dataset<double> flat_tr, flat_te;
  flat_tr.dim = flat_te.dim = 1;
  flat_tr.images = {5.0, 5.0};
  flat_te.images = {5.0};
  standardize(flat_tr, flat_te);
  CHECK(flat_tr.images == std::vector<double>{0.0, 0.0});
}

TEST_CASE("epoch batching") {
  auto batches = make_batches(10, 4, 9, 0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].indices.size() == 4);
  CHECK(batches[1].indices.size() == 4);
  CHECK(batches[2].indices.size() == 2);
  std::vector<size_t> all;
  for (const auto& b : batches)
    all.insert(all.end(), b.indices.begin(), b.indices.end());
  std::sort(all.begin(), all.end());
  std::vector<size_t> want(10);
  std::iota(want.begin(), want.end(), size_t{0});
  CHECK(all == want);  // a permutation, nothing dropped or duplicated

  auto again = make_batches(10, 4, 9, 0);
  for (size_t i = 0; i < 3; ++i)
    CHECK(batches[i].indices == again[i].indices);
  auto other_epoch = make_batches(10, 4, 9, 1);
  bool differs = false;
  for (size_t i = 0; i < 3; ++i)
    if (batches[i].indices != other_epoch[i].indices) differs = true;
  CHECK(differs);
  CHECK_THROWS_AS(make_batches(10, 0, 9, 0), ConfigError);
}

TEST_CASE("gather_batch copies rows and labels") {
  Dataset<double> ds;
  ds.dim = 2;
  ds.classes = 3;
  ds.images = {1, 2, 3, 4, 5, 6};
  ds.labels = {0, 1, 2};
  Batch b{{2, 0}};
  auto [x, y] = gather_batch(ds, b);
  CHECK(x->shape == std::vector<size_t>{2, 2});
  CHECK(x->data == std::vector<double>{5, 6, 1, 2});
  CHECK(y == std::vector<int>{2, 0});
}

TEST_CASE("truncate keeps a row-aligned prefix") {
  Dataset<double> ds;
  ds.dim = 2;
  ds.images = {1, 2, 3, 4, 5, 6};
  ds.labels = {0, 1, 2};
  truncate(ds, 2);
  CHECK(ds.size() == 2);
  CHECK(ds.images == std::vector<double>{1, 2, 3, 4});
  truncate(ds, 0);  // 0 means "no limit"
  CHECK(ds.size() == 2);
}

TEST_CASE("bit packing round trip") {
  std::vector<uint8_t> bits{1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1};
  auto packed = wire::pack_bits(bits);
  CHECK(packed.size() == 2);
  CHECK(wire::unpack_bits(packed, bits.size()) == bits);
  CHECK(wire::pack_bits({}).empty());
}

TEST_CASE("crc32 known vector") {
  const std::string s = "123456789";
  CHECK(wire::crc32(reinterpret_cast<const uint8_t*>(s.data()), s.size()) ==
        0xCBF43926u);
}

namespace {

template <typename T>
Checkpoint<T> sample_checkpoint() {
  Checkpoint<T> c;
  c.arch = mlp_specs({4, 3, 2});
  c.run_seed = 42;
  c.epoch = 7;
  c.iteration = 91;
  c.best_acc = 0.875;
  c.best_epoch = 5;
  c.last_acc = 0.8125;
  c.param_names = {"layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias"};
  c.param_shapes = {{4, 3}, {3}, {3, 2}, {2}};
  c.param_prunable = {1, 0, 0, 0};
  c.param_data = {{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12},
                  {0.1, 0.2, 0.3},
                  {-1, -2, -3, -4, -5, -6},
                  {0, 0}};
  c.prune_enabled = true;
  c.variant = Variant::D;
  c.threshold = 2.5;
  c.ratio = 0.5;
  c.strength = 1.0;
  c.update_every = 16;
  c.exploit_start = 80;
  c.frozen = true;
  c.masks = {{0, 0, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1}};
  c.attentions = {{.5, .5, .7, .8, .5, .9, .95, 1, .5, .6, .65, .75}};
  c.sgd.lr = 0.2;
  c.sgd.momentum = 0.9;
  c.sgd.weight_decay = 1e-4;
  c.sgd.lr_milestones = {{20, 0.1}, {30, 0.1}};
  for (const auto& d : c.param_data)
    c.velocity.emplace_back(d.size(), T(0.25));
  c.rng_state = "12345 67 0";
  return c;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves every field") {
  const auto dir = scratch();
  const auto path = (dir / "ckpt.bin").string();
  auto c = sample_checkpoint<float>();
  c.save(path);

  auto raw = get_bytes(path);
  CHECK(std::string(raw.begin(), raw.begin() + 8) == "MAPCKPT1");

  auto r = Checkpoint<float>::load(path);
  CHECK(r.arch.size() == 2);
  CHECK(r.arch[0].in_dim == 4);
  CHECK(r.arch[1].act == Activation::None);
  CHECK(r.run_seed == 42);
  CHECK(r.epoch == 7);
  CHECK(r.iteration == 91);
  CHECK(r.best_acc == 0.875);
  CHECK(r.best_epoch == 5);
  CHECK(r.last_acc == 0.8125);
  CHECK(r.param_names == c.param_names);
  CHECK(r.param_shapes == c.param_shapes);
  CHECK(r.param_prunable == c.param_prunable);
  CHECK(r.param_data == c.param_data);
  CHECK(r.prune_enabled);
  CHECK(r.variant == Variant::D);
  CHECK(r.threshold == 2.5);
  CHECK(r.ratio == 0.5);
  CHECK(r.update_every == 16);
  CHECK(r.exploit_start == 80);
  CHECK(r.frozen);
  CHECK(r.masks == c.masks);
  CHECK(r.attentions == c.attentions);
  CHECK(r.sgd.lr == 0.2);
  CHECK(r.sgd.momentum == 0.9);
  CHECK(r.sgd.lr_milestones == c.sgd.lr_milestones);
  CHECK(r.velocity == c.velocity);
  CHECK(r.rng_state == "12345 67 0");
  CHECK_FALSE(fs::exists(path + ".tmp"));  // atomic write cleaned up
}

TEST_CASE("checkpoint rejects corruption") {
  const auto dir = scratch();
  const auto path = (dir / "ckpt2.bin").string();
  sample_checkpoint<double>().save(path);

  auto good = get_bytes(path);
  auto flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  put_bytes(dir / "flip.bin", flipped);
  CHECK_THROWS_WITH_AS(Checkpoint<double>::load((dir / "flip.bin").string()),
                       doctest::Contains("checksum"), IoError);

  auto badmagic = good;
  badmagic[0] = 'X';
  put_bytes(dir / "magic.bin", badmagic);
  CHECK_THROWS_WITH_AS(Checkpoint<double>::load((dir / "magic.bin").string()),
                       doctest::Contains("magic"), IoError);

  auto badver = good;
  badver[8] = 9;
  put_bytes(dir / "ver.bin", badver);
  CHECK_THROWS_WITH_AS(Checkpoint<double>::load((dir / "ver.bin").string()),
                       doctest::Contains("version"), IoError);

  put_bytes(dir / "stub.bin", {1, 2, 3});
  CHECK_THROWS_AS(Checkpoint<double>::load((dir / "stub.bin").string()), IoError);
  CHECK_THROWS_AS(Checkpoint<double>::load((dir / "absent.bin").string()), IoError);

  // precision mismatch: wrote f64, try to load as f32
  CHECK_THROWS_WITH_AS(Checkpoint<float>::load(path),
                       doctest::Contains("precision"), IoError);
}
