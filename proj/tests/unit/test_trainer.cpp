#include "test_framework.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fontdisent/error.hpp"
#include "fontdisent/trainer.hpp"
#include "test_support.hpp"

using namespace fontdisent;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(int image_size = 16) {
  ModelConfig c;
  c.image_size = image_size;
  c.channels = {4, 8};
  c.feature_dim = 8;
  c.head_hidden = 16;
  c.classifier_hidden = 8;
  return c;
}

TrainConfig quick_config(int epochs) {
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.max_epochs_pretrain = epochs;
  cfg.max_epochs_finetune = epochs;
  cfg.early_stop_patience = epochs;
  cfg.seed = 5;
  return cfg;
}

void expect_kind(ErrorKind kind, auto&& fn) {
  try {
    fn();
    FAIL("expected " << to_string(kind));
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
  }
}

}  // namespace

TEST_CASE("early stopper follows the patience contract") {
  // Patience 3 with a loss that rises after epoch 1: stop at epoch 5, best epoch 1.
  EarlyStopper stopper(3);
  int stopped_at = 0;
  for (int epoch = 1; epoch <= 20; ++epoch) {
    stopper.update(epoch, 1.0 + epoch);
    if (stopper.should_stop()) {
      stopped_at = epoch;
      break;
    }
  }
  CHECK(stopped_at == 5);
  CHECK(stopper.best_epoch() == 1);
  CHECK(stopper.best_loss() == 2.0);

  EarlyStopper improving(0);
  for (int epoch = 1; epoch <= 5; ++epoch) {
    CHECK(improving.update(epoch, 10.0 - epoch));
    CHECK(!improving.should_stop());
  }
  CHECK(!improving.update(6, 5.0));  // ties do not count as improvement
  CHECK(improving.should_stop());
}

TEST_CASE("train config json round trip and validation") {
  TrainConfig c;
  c.batch_size = 7;
  c.learning_rate = 0.01;
  c.weights.lambda_style = 2.5;
  c.recompute_averages_every = 3;
  const nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  CHECK(back.batch_size == 7);
  CHECK(back.learning_rate == 0.01);
  CHECK(back.weights.lambda_style == 2.5);
  CHECK(back.recompute_averages_every == 3);
  const TrainConfig d = nlohmann::json::object().get<TrainConfig>();
  CHECK(d.batch_size == 64);
  CHECK(d.learning_rate == 0.001);
  CHECK(d.beta1 == 0.9);
  CHECK(d.beta2 == 0.999);
  CHECK_THROWS_AS((nlohmann::json{{"batch_size", 0}}.get<TrainConfig>()), Error);
}

TEST_CASE("average features match an explicit loop") {
  const auto m = testing::synthetic_matrix(3, 5, 16);
  auto net = init_params(1, small_model());
  const auto table = compute_average_features(net, m);
  REQUIRE(table.style.sizes() == torch::IntArrayRef{3, 8});
  REQUIRE(table.content.sizes() == torch::IntArrayRef{5, 8});
  CHECK(table.font_names == m.font_names());

  InferenceScope scope(net);
  std::vector<std::vector<double>> style(3, std::vector<double>(8)), content(5, std::vector<double>(8));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 5; ++j) {
      const auto f = net->encode(to_tensor(m.at(i, j).image));
      for (int d = 0; d < 8; ++d) {
        style[i][d] += f.style[0][d].item<double>() / 5.0;
        content[j][d] += f.content[0][d].item<double>() / 3.0;
      }
    }
  }
  for (int i = 0; i < 3; ++i) {
    for (int d = 0; d < 8; ++d) REQUIRE(table.style[i][d].item<double>() == doctest::Approx(style[i][d]).epsilon(1e-6));
  }
  for (int j = 0; j < 5; ++j) {
    for (int d = 0; d < 8; ++d) {
      REQUIRE(table.content[j][d].item<double>() == doctest::Approx(content[j][d]).epsilon(1e-6));
    }
  }
}

TEST_CASE("average of constant style equals that style") {
  // A network whose style head is forced to a constant: zero weights, fixed bias.
  auto net = init_params(2, small_model());
  {
    torch::NoGradGuard guard;
    for (auto& item : net->named_parameters()) {
      if (item.key().rfind("style_head.2", 0) == 0) {
        if (item.key().find("weight") != std::string::npos) item.value().zero_();
        else item.value().fill_(0.25);
      }
    }
  }
  const auto table = compute_average_features(net, testing::synthetic_matrix(2, 4, 16));
  CHECK(torch::allclose(table.style, torch::full({2, 8}, 0.25)));
}

TEST_CASE("analytic gradient of the fine-tuning loss matches finite differences") {
  ModelConfig tiny;
  tiny.image_size = 8;
  tiny.channels = {2, 3, 4};
  tiny.feature_dim = 4;
  tiny.head_hidden = 6;
  tiny.num_classes = 3;
  tiny.classifier_hidden = 5;
  auto net = init_params(4, tiny);
  net->to(torch::kFloat64);
  net->train();

  const auto m = testing::synthetic_matrix(2, 3, 8);
  const auto x = to_tensor(std::span<const GlyphImage>(m.glyphs())).to(torch::kFloat64);
  const auto fonts = torch::tensor(std::vector<int64_t>{0, 0, 0, 1, 1, 1});
  const auto classes = torch::tensor(std::vector<int64_t>{0, 1, 2, 0, 1, 2});
  torch::manual_seed(21);
  AverageFeatureTable avgs;
  avgs.style = torch::rand({2, 4}, torch::kFloat64);
  avgs.content = torch::rand({3, 4}, torch::kFloat64);
  const losses::LossWeights w{0.3, 1.0, 1.0};  // larger lambda_cls so the classifier gradient is exercised

  auto objective = [&] {
    const auto f = net->encode(x);
    const auto rec = losses::reconstruction_loss(x, net->decode(f.style, f.content));
    const auto cls = losses::classification_loss(net->classify(f.content), classes);
    return losses::finetune_loss(rec, cls, losses::style_variance_loss(f.style, fonts, avgs),
                                 losses::content_variance_loss(f.content, classes, avgs), w);
  };

  net->zero_grad();
  objective().backward();
  const double h = 1e-4;
  double worst = 0.0;
  size_t checked = 0;
  torch::NoGradGuard guard;
  for (auto& item : net->named_parameters()) {
    auto p = item.value();
    const auto grad = p.grad().clone();
    auto flat = p.view({-1});
    auto gflat = grad.view({-1});
    for (int64_t k = 0; k < flat.numel(); ++k) {
      const double orig = flat[k].item<double>();
      flat[k] = orig + h;
      const double up = objective().item<double>();
      flat[k] = orig - h;
      const double down = objective().item<double>();
      flat[k] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = gflat[k].item<double>();
      // Relative error with a floor so gradients that are zero up to
      // round-off are compared in absolute terms.
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      if (rel > worst) worst = rel;
      if (rel > 1e-3) MESSAGE(item.key() << "[" << k << "] analytic " << analytic << " numeric " << numeric);
      ++checked;
    }
  }
  MESSAGE("checked " << checked << " parameters, worst relative error " << worst);
  CHECK(checked > 500);
  CHECK(worst <= 1e-3);
}

TEST_CASE("pre-training reduces the loss and restores the best epoch") {
  const auto train = testing::synthetic_matrix(4, 26, 16);
  const auto val = testing::synthetic_matrix(2, 26, 16);
  auto net = init_params(3, small_model());
  const auto dir = testing::scratch_dir("pretrain");
  auto cfg = quick_config(8);
  const auto history = pretrain(net, train, val, cfg, dir);
  REQUIRE(history.records.size() == 8);  // patience equals the epoch budget, so no early stop
  CHECK(history.phase == Phase::Pretrained);
  CHECK(history.records.back().train.total < history.records.front().train.total);
  CHECK(std::isnan(history.records.front().train.style));
  CHECK(history.best_epoch >= 1);
  CHECK(all_finite(net));
  for (const char* f : {"best.ckpt", "last.ckpt", "history.csv"}) CHECK(fs::exists(dir / f));

  // The returned weights are the best epoch's: the saved best checkpoint matches them.
  auto best = load_checkpoint(dir / "best.ckpt");
  CHECK(best.phase == Phase::Pretrained);
  CHECK(best.config["epoch"] == history.best_epoch);
  auto loaded = best.net;
  for (const auto& item : net->named_parameters()) CHECK(torch::equal(item.value(), loaded->named_parameters()[item.key()]));

  std::ifstream csv(dir / "history.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 1 + 8);
}

TEST_CASE("pre-training is deterministic") {
  const auto train = testing::synthetic_matrix(3, 26, 16);
  const auto val = testing::synthetic_matrix(2, 26, 16);
  auto a = init_params(3, small_model()), b = init_params(3, small_model());
  const auto ha = pretrain(a, train, val, quick_config(2));
  const auto hb = pretrain(b, train, val, quick_config(2));
  for (size_t e = 0; e < ha.records.size(); ++e) {
    CHECK(ha.records[e].train.total == hb.records[e].train.total);
    CHECK(ha.records[e].val.total == hb.records[e].val.total);
  }
}

TEST_CASE("keep_epoch_checkpoints writes numbered files") {
  const auto dir = testing::scratch_dir("epochs");
  auto net = init_params(3, small_model());
  auto cfg = quick_config(2);
  cfg.keep_epoch_checkpoints = true;
  pretrain(net, testing::synthetic_matrix(2, 26, 16), testing::synthetic_matrix(2, 26, 16), cfg, dir);
  CHECK(fs::exists(dir / "epoch_001.ckpt"));
  CHECK(fs::exists(dir / "epoch_002.ckpt"));
}

TEST_CASE("pre-training preconditions and divergence") {
  auto net = init_params(3, small_model());
  const auto two = testing::synthetic_matrix(2, 26, 16);
  expect_kind(ErrorKind::InsufficientFonts,
              [&] { pretrain(net, testing::synthetic_matrix(1, 26, 16), two, quick_config(1)); });
  {
    torch::NoGradGuard guard;
    net->parameters().front().view({-1})[0] = std::numeric_limits<float>::quiet_NaN();
  }
  expect_kind(ErrorKind::DivergedLoss, [&] { pretrain(net, two, two, quick_config(1)); });
}

TEST_CASE("fine-tuning requires matching averages and lowers the variance losses") {
  const auto train = testing::synthetic_matrix(4, 26, 16);
  const auto val = testing::synthetic_matrix(2, 26, 16);
  auto net = init_params(3, small_model());
  pretrain(net, train, val, quick_config(3));

  expect_kind(ErrorKind::MissingAverages, [&] { finetune(net, AverageFeatureTable{}, train, val, quick_config(1)); });
  const auto wrong = compute_average_features(net, testing::synthetic_matrix(3, 26, 16));
  expect_kind(ErrorKind::MissingAverages, [&] { finetune(net, wrong, train, val, quick_config(1)); });

  const auto avgs = compute_average_features(net, train);
  const auto before = measure_variance(net, train);
  const auto history = finetune(net, avgs, train, val, quick_config(6));
  const auto after = measure_variance(net, train);
  CHECK(history.phase == Phase::Finetuned);
  CHECK(std::isnan(history.records.front().train.trans));
  CHECK(!std::isnan(history.records.front().val.style));
  CHECK(after.style < before.style);
  CHECK(after.content < before.content);
  CHECK(std::isfinite(evaluate_reconstruction(net, val)));
}

TEST_CASE("variance summary equals the loss against self-computed averages") {
  const auto m = testing::synthetic_matrix(3, 26, 16);
  auto net = init_params(8, small_model());
  const auto avgs = compute_average_features(net, m);
  const auto f = encode_matrix(net, m);
  std::vector<int64_t> fonts, classes;
  for (const auto& g : m.glyphs()) fonts.push_back(g.font_id), classes.push_back(g.class_id);
  const auto v = measure_variance(net, m);
  CHECK(v.style == doctest::Approx(losses::style_variance_loss(f.style, torch::tensor(fonts), avgs).item<double>())
                       .epsilon(1e-5));
  CHECK(v.content ==
        doctest::Approx(losses::content_variance_loss(f.content, torch::tensor(classes), avgs).item<double>())
            .epsilon(1e-5));
}
