#include "test_framework.hpp"

#include <fstream>

#include "fontdisent/checkpoint.hpp"
#include "fontdisent/error.hpp"
#include "fontdisent/model.hpp"
#include "test_support.hpp"

using namespace fontdisent;
namespace fs = std::filesystem;

namespace {

bool same_parameters(DisentangleNet& a, DisentangleNet& b) {
  const auto pa = a->named_parameters(), pb = b->named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& item : pa) {
    if (!torch::equal(item.value(), pb[item.key()])) return false;
  }
  const auto ba = a->named_buffers(), bb = b->named_buffers();
  for (const auto& item : ba) {
    if (!torch::equal(item.value(), bb[item.key()])) return false;
  }
  return true;
}

torch::Tensor random_images(int64_t n, int size = 64, std::uint64_t seed = 1) {
  torch::manual_seed(seed);
  return torch::rand({n, 1, size, size});
}

}  // namespace

TEST_CASE("init_params is deterministic per seed") {
  auto a = init_params(3), b = init_params(3), c = init_params(4);
  CHECK(same_parameters(a, b));
  CHECK(!same_parameters(a, c));
  CHECK(all_finite(a));
}

TEST_CASE("default architecture widths") {
  const ModelConfig c;
  CHECK(c.bottleneck_size() == 4);
  CHECK(c.flat_dim() == 4096);
  CHECK(c.feature_dim == 128);
  ModelConfig bad;
  bad.image_size = 60;
  CHECK_THROWS_AS(bad.validate(), Error);
  nlohmann::json j = c;
  CHECK(j.get<ModelConfig>() == c);
}

TEST_CASE("shape contract for batches of 1, 7 and 64") {
  auto net = init_params(1);
  InferenceScope scope(net);
  for (int64_t b : {1, 7, 64}) {
    const auto f = net->encode(random_images(b));
    CHECK(f.style.sizes() == torch::IntArrayRef{b, 128});
    CHECK(f.content.sizes() == torch::IntArrayRef{b, 128});
    CHECK((f.style >= 0).all().item<bool>());
    CHECK((f.content >= 0).all().item<bool>());
    const auto x = net->decode(f.style, f.content);
    CHECK(x.sizes() == torch::IntArrayRef{b, 1, 64, 64});
  }
}

TEST_CASE("training-mode forward works on a random batch") {
  auto net = init_params(2);
  net->train();
  const auto f = net->encode(random_images(8));
  const auto x = net->decode(f.style, f.content);
  CHECK(torch::isfinite(x).all().item<bool>());
}

TEST_CASE("degenerate inputs stay finite and in range") {
  auto net = init_params(5);
  InferenceScope scope(net);
  const auto f = net->encode(torch::zeros({2, 1, 64, 64}));
  CHECK(torch::isfinite(f.style).all().item<bool>());
  CHECK(torch::isfinite(f.content).all().item<bool>());
  const auto zero = torch::zeros({1, 128});
  const auto bias_image = net->decode(zero, zero);
  CHECK(torch::isfinite(bias_image).all().item<bool>());
  CHECK(torch::equal(bias_image, net->decode(zero, zero)));
  // Large features saturate the sigmoid; output must still be strictly inside (0,1).
  torch::manual_seed(9);
  for (double scale : {1.0, 1e3, 1e6}) {
    const auto big = torch::randn({4, 128}) * scale;
    const auto x = net->decode(big.abs(), -big);
    CHECK((x > 0).all().item<bool>());
    CHECK((x < 1).all().item<bool>());
  }
}

TEST_CASE("classifier outputs probability vectors") {
  auto net = init_params(6);
  InferenceScope scope(net);
  torch::manual_seed(1);
  for (const auto& z : {torch::zeros({3, 128}), torch::rand({5, 128}) * 10}) {
    const auto p = classify_content(net, z);
    CHECK(p.sizes() == torch::IntArrayRef{z.size(0), 26});
    CHECK((p >= 0).all().item<bool>());
    CHECK(((p.sum(1) - 1).abs() < 1e-6).all().item<bool>());
  }
}

TEST_CASE("inference is deterministic and per-sample") {
  auto net = init_params(7);
  InferenceScope scope(net);
  const auto img = random_images(1);
  const auto batch = torch::cat({img, img, random_images(1, 64, 2)});
  const auto f = net->encode(batch);
  CHECK(torch::equal(f.style[0], f.style[1]));
  CHECK(torch::equal(f.content[0], f.content[1]));
  const auto g = net->encode(batch);
  CHECK(torch::equal(f.style, g.style));
  CHECK(torch::equal(net->decode(f.style, f.content), net->decode(g.style, g.content)));
}

TEST_CASE("transfer with identical sources equals reconstruction") {
  auto net = init_params(8);
  InferenceScope scope(net);
  const auto x = random_images(3);
  const auto f = encode(net, x);
  CHECK(torch::equal(transfer(net, x, x), decode(net, f)));
  const auto y = transfer(net, x, random_images(3, 64, 5));
  CHECK((y > 0).all().item<bool>());
  CHECK((y < 1).all().item<bool>());
}

TEST_CASE("inference scope restores training mode") {
  auto net = init_params(1);
  net->train();
  {
    InferenceScope scope(net);
    CHECK(!net->is_training());
  }
  CHECK(net->is_training());
}

TEST_CASE("glyph tensor conversion round trips") {
  const auto m = testing::synthetic_matrix(2, 3, 16);
  const auto t = to_tensor(std::span<const GlyphImage>(m.glyphs()));
  CHECK(t.sizes() == torch::IntArrayRef{6, 1, 16, 16});
  const auto back = to_images(t);
  for (size_t k = 0; k < back.size(); ++k) CHECK(back[k] == m.glyphs()[k].image);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = testing::scratch_dir("ckpt");
  auto net = init_params(11);
  {
    // Move running statistics away from their initial values.
    net->train();
    torch::NoGradGuard guard;
    net->encode(random_images(4));
  }
  save_checkpoint(dir / "a.ckpt", Checkpoint{net, Phase::Pretrained, {{"note", "x"}}});
  const auto back = load_checkpoint(dir / "a.ckpt");
  auto loaded = back.net;
  CHECK(back.phase == Phase::Pretrained);
  CHECK(back.config["note"] == "x");
  CHECK(same_parameters(net, loaded));
  CHECK(!loaded->is_training());

  // Double-precision networks keep their dtype.
  ModelConfig tiny;
  tiny.image_size = 8;
  tiny.channels = {2, 3, 4};
  tiny.feature_dim = 4;
  auto dnet = init_params(1, tiny);
  dnet->to(torch::kFloat64);
  save_checkpoint(dir / "d.ckpt", Checkpoint{dnet, Phase::Finetuned, {}});
  auto dback = load_checkpoint(dir / "d.ckpt").net;
  CHECK((dback->parameters().front().scalar_type() == torch::kFloat64));
  CHECK(same_parameters(dnet, dback));
}

TEST_CASE("damaged checkpoints raise CorruptFile") {
  const auto dir = testing::scratch_dir("ckpt_bad");
  auto net = init_params(12);
  save_checkpoint(dir / "ok.ckpt", Checkpoint{net, Phase::Finetuned, {}});
  const auto size = fs::file_size(dir / "ok.ckpt");
  fs::copy_file(dir / "ok.ckpt", dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", size - 100);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint at all";
  for (const char* name : {"short.ckpt", "junk.ckpt"}) {
    try {
      load_checkpoint(dir / name);
      FAIL("expected CorruptFile for " << name);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::CorruptFile);
    }
  }
  // Bump the version field that follows the 8-byte magic.
  fs::copy_file(dir / "ok.ckpt", dir / "version.ckpt");
  {
    std::fstream f(dir / "version.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  try {
    load_checkpoint(dir / "version.ckpt");
    FAIL("expected CorruptFile");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CorruptFile);
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}
