#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "scan2num/checkpoint.hpp"
#include "scan2num/network.hpp"
#include "scan2num/rng.hpp"

using namespace scan2num;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  const fs::path p = fs::path("checkpoint_test");
  fs::create_directories(p);
  return p;
}

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.num_slices = 2;
  c.input_size = 8;
  c.conv_channels = {4, 6};
  c.kernels = {3, 2};
  c.strides = {2, 1};
  c.pool_after = {1};
  c.feature_dim = 6;
  c.dropout_rate = 0.5;
  return c;
}

Tensor<float> filled(std::vector<int> shape, uint64_t seed) {
  Tensor<float> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));
  return t;
}

}  // namespace

TEST_CASE("tensor file round-trips names, shapes, and bits") {
  const fs::path path = work_dir() / "tensors.ckpt";
  Tensor<float> a = filled({3}, 1);
  Tensor<float> b = filled({2, 5}, 2);
  Tensor<float> c = filled({2, 3, 2, 2}, 3);
  save_tensors(path, {{"alpha", &a}, {"beta.momentum", &b}, {"gamma", &c}});
  auto loaded = load_tensors(path);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].first == "alpha");
  CHECK(loaded[0].second.shape == a.shape);
  CHECK(loaded[0].second.data == a.data);
  CHECK(loaded[1].first == "beta.momentum");
  CHECK(loaded[1].second.data == b.data);
  CHECK(loaded[2].first == "gamma");
  CHECK(loaded[2].second.shape == std::vector<int>{2, 3, 2, 2});
  CHECK(loaded[2].second.data == c.data);
}

TEST_CASE("tensor file begins with the magic and version") {
  const fs::path path = work_dir() / "header.ckpt";
  Tensor<float> a = filled({2}, 4);
  save_tensors(path, {{"a", &a}});
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  CHECK(std::string(magic, 4) == "S2N1");
  uint32_t version = 0, count = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&count), 4);
  CHECK(version == 1u);
  CHECK(count == 1u);
}

TEST_CASE("loading rejects bad magic, bad version, and truncation") {
  const fs::path dir = work_dir();
  {
    std::ofstream os(dir / "bad_magic.ckpt", std::ios::binary);
    os << "NOPE" << std::string(8, '\0');
  }
  CHECK_THROWS_AS(load_tensors(dir / "bad_magic.ckpt"), IoError);

  {
    std::ofstream os(dir / "bad_version.ckpt", std::ios::binary);
    os << "S2N1";
    const uint32_t version = 9, count = 0;
    os.write(reinterpret_cast<const char*>(&version), 4);
    os.write(reinterpret_cast<const char*>(&count), 4);
  }
  CHECK_THROWS_AS(load_tensors(dir / "bad_version.ckpt"), IoError);

  Tensor<float> a = filled({64}, 5);
  save_tensors(dir / "full.ckpt", {{"a", &a}});
  const auto full_size = fs::file_size(dir / "full.ckpt");
  for (const auto cut : {full_size - 1, full_size / 2, static_cast<uintmax_t>(6)}) {
    std::ifstream is(dir / "full.ckpt", std::ios::binary);
    std::vector<char> bytes(cut);
    is.read(bytes.data(), static_cast<std::streamsize>(cut));
    std::ofstream os(dir / "cut.ckpt", std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(cut));
    os.close();
    CHECK_THROWS_AS(load_tensors(dir / "cut.ckpt"), IoError);
  }

  CHECK_THROWS_AS(load_tensors(dir / "does_not_exist.ckpt"), IoError);
}

TEST_CASE("sidecar writes sorted key=value lines") {
  const fs::path path = work_dir() / "side.ckpt";
  write_sidecar(path, {{"zeta", "1"}, {"alpha", "two"}, {"mid", "3.5"}});
  std::ifstream is(path.string() + ".cfg");
  std::string l1, l2, l3;
  std::getline(is, l1);
  std::getline(is, l2);
  std::getline(is, l3);
  CHECK(l1 == "alpha=two");
  CHECK(l2 == "mid=3.5");
  CHECK(l3 == "zeta=1");
  const auto kv = read_sidecar(path);
  REQUIRE(kv.size() == 3);
  CHECK(kv.at("zeta") == "1");

  CHECK_THROWS_AS(read_sidecar(work_dir() / "no_such.ckpt"), IoError);
  {
    std::ofstream os(path.string() + ".cfg", std::ios::trunc);
    os << "no equals sign here\n";
  }
  CHECK_THROWS_AS(read_sidecar(path), DataError);
}

TEST_CASE("model checkpoint round-trips values, momentum, config, and extras") {
  const fs::path path = work_dir() / "model.ckpt";
  const NetworkConfig cfg = tiny_config();
  auto params = NetworkParams<float>::init(cfg, 42);
  Rng rng(43);
  for (auto& np : params.named())
    for (auto& v : np.param->momentum.data) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  const std::map<std::string, std::string> extra{
      {"target", "ve"}, {"iter", "123"}, {"seed", "42"}};
  save_model_checkpoint(path, cfg, params, extra);

  const ModelCheckpoint mc = load_model_checkpoint(path);
  CHECK(mc.config.num_slices == cfg.num_slices);
  CHECK(mc.config.conv_channels == cfg.conv_channels);
  CHECK(mc.config.kernels == cfg.kernels);
  CHECK(mc.config.dropout_rate == cfg.dropout_rate);
  CHECK(mc.extra == extra);

  auto orig = params.named();
  auto back = const_cast<NetworkParams<float>&>(mc.params).named();
  REQUIRE(orig.size() == back.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    CHECK(back[i].name == orig[i].name);
    CHECK(back[i].param->value.data == orig[i].param->value.data);
    CHECK(back[i].param->momentum.data == orig[i].param->momentum.data);
  }
}

TEST_CASE("model checkpoint load rejects unknown, missing, and misshapen tensors") {
  const fs::path dir = work_dir();
  const NetworkConfig cfg = tiny_config();
  auto params = NetworkParams<float>::init(cfg, 7);

  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  for (const auto& np : params.named()) {
    tensors.emplace_back(np.name, &np.param->value);
    tensors.emplace_back(np.name + ".momentum", &np.param->momentum);
  }

  const fs::path unknown = dir / "unknown.ckpt";
  Tensor<float> bogus = filled({3}, 9);
  auto with_bogus = tensors;
  with_bogus.emplace_back("conv9.weight", &bogus);
  save_tensors(unknown, with_bogus);
  write_sidecar(unknown, cfg.to_kv());
  CHECK_THROWS_AS(load_model_checkpoint(unknown), DataError);

  const fs::path missing = dir / "missing.ckpt";
  auto subset = tensors;
  subset.resize(subset.size() - 2);  // drop the head
  save_tensors(missing, subset);
  write_sidecar(missing, cfg.to_kv());
  CHECK_THROWS_AS(load_model_checkpoint(missing), DataError);

  const fs::path misshapen = dir / "misshapen.ckpt";
  Tensor<float> wrong = filled({2, 2}, 10);
  auto reshaped = tensors;
  reshaped[0] = {"conv1.weight", &wrong};
  save_tensors(misshapen, reshaped);
  write_sidecar(misshapen, cfg.to_kv());
  CHECK_THROWS_AS(load_model_checkpoint(misshapen), DataError);
}

TEST_CASE("momentum tensors are optional extras in the file, not the params") {
  // a checkpoint that carries only values still loads, with zero momentum
  const fs::path path = work_dir() / "values_only.ckpt";
  const NetworkConfig cfg = tiny_config();
  auto params = NetworkParams<float>::init(cfg, 11);
  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  for (const auto& np : params.named()) tensors.emplace_back(np.name, &np.param->value);
  save_tensors(path, tensors);
  write_sidecar(path, cfg.to_kv());
  const ModelCheckpoint mc = load_model_checkpoint(path);
  auto back = const_cast<NetworkParams<float>&>(mc.params).named();
  for (auto& np : back)
    for (float v : np.param->momentum.data) CHECK(v == 0.0f);
}
