#include <doctest.h>

#include <httplib.h>

#include <thread>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/io.hpp"
#include "patchguard/core/random.hpp"
#include "patchguard/masking/masking.hpp"

using namespace patchguard;
using namespace patchguard::masking;

namespace {

ImageTensor square_on_field(std::size_t n, std::size_t y0, std::size_t x0, std::size_t side) {
  ImageTensor img(n, n, 3, 0.1f);
  for (std::size_t y = y0; y < y0 + side; ++y)
    for (std::size_t x = x0; x < x0 + side; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 0.9f;
  return img;
}

BinaryMask random_mask(std::size_t h, std::size_t w, Rng& rng, double p = 0.5) {
  BinaryMask m(h, w);
  for (auto& v : m.data()) v = rng.uniform() < p ? 1 : 0;
  return m;
}

ImageTensor random_image(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  ImageTensor img(h, w, c);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("downsize keeps aspect ratio with half-up rounding") {
  // Width 3024, height 4032 -> 512 x 683 (682.67 rounds up).
  ImageTensor big(4032, 3024, 1, 0.5f);
  auto small = downsize_for_segmentation(big, 512);
  CHECK(small.width() == 512);
  CHECK(small.height() == 683);

  ImageTensor wide(512, 1024, 3, 0.25f);
  auto half = downsize_for_segmentation(wide, 512);
  CHECK(half.width() == 512);
  CHECK(half.height() == 256);
  for (float v : half.data()) CHECK(v == doctest::Approx(0.25f));

  ImageTensor same(512, 512, 3, 0.3f);
  same.at(7, 9, 1) = 0.8f;
  CHECK(downsize_for_segmentation(same, 512) == same);
  ImageTensor narrow(100, 300, 3, 0.3f);
  CHECK(downsize_for_segmentation(narrow, 512) == narrow);
}

TEST_CASE("builtin segmenter isolates a bright square") {
  auto img = square_on_field(100, 40, 40, 20);
  auto m = segment_builtin(img);
  for (std::size_t y = 0; y < 100; ++y)
    for (std::size_t x = 0; x < 100; ++x) {
      const bool inside = y >= 40 && y < 60 && x >= 40 && x < 60;
      CHECK(m.at(y, x) == inside);
    }
}

TEST_CASE("builtin segmenter keeps only the largest blob") {
  ImageTensor img(60, 60, 1, 0.0f);
  // 50-pixel blob (5x10) and 10-pixel blob (2x5).
  for (std::size_t y = 5; y < 10; ++y)
    for (std::size_t x = 5; x < 15; ++x) img.at(y, x, 0) = 1.0f;
  for (std::size_t y = 40; y < 42; ++y)
    for (std::size_t x = 40; x < 45; ++x) img.at(y, x, 0) = 1.0f;
  auto m = segment_builtin(img);
  CHECK(m.count() == 50);
  CHECK(m.at(7, 10));
  CHECK_FALSE(m.at(41, 42));
}

TEST_CASE("builtin segmenter fills holes and rejects constant images") {
  auto img = square_on_field(50, 10, 10, 30);
  for (std::size_t y = 20; y < 25; ++y)
    for (std::size_t x = 20; x < 25; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 0.1f;
  auto m = segment_builtin(img);
  CHECK(m.count() == 900);
  CHECK(m.at(22, 22));

  CHECK_THROWS_AS(segment_builtin(ImageTensor(20, 20, 3, 0.5f)), DegenerateImage);
}

TEST_CASE("builtin segmenter always returns foreground or throws") {
  Rng rng(RandomSeed{5});
  for (int i = 0; i < 20; ++i) {
    auto img = random_image(32, 40, i % 2 ? 3 : 1, rng);
    CHECK(segment_builtin(img).count() >= 1);
  }
}

TEST_CASE("upscale_mask nearest-neighbor blocks") {
  BinaryMask m(2, 2);
  m.set(0, 0, true);
  m.set(1, 1, true);
  auto up = upscale_mask(m, 4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) CHECK(up.at(y, x) == ((y < 2) == (x < 2)));
  CHECK(upscale_mask(m, 2, 2) == m);
  BinaryMask one(1, 1, true);
  CHECK(upscale_mask(one, 7, 5).count() == 35);
}

TEST_CASE("upscale_mask by integer factors maps pixels to constant blocks") {
  Rng rng(RandomSeed{8});
  for (std::size_t k = 1; k <= 4; ++k)
    for (int trial = 0; trial < 10; ++trial) {
      auto m = random_mask(8, 8, rng);
      auto up = upscale_mask(m, 8 * k, 8 * k);
      for (std::size_t y = 0; y < 8 * k; ++y)
        for (std::size_t x = 0; x < 8 * k; ++x) REQUIRE(up.at(y, x) == m.at(y / k, x / k));
      CHECK(up.count() == m.count() * k * k);
    }
}

TEST_CASE("apply_mask examples") {
  ImageTensor img(4, 4, 3, 0.5f);
  CHECK(apply_mask(img, BinaryMask(4, 4, true)) == img);
  const auto blank = apply_mask(img, BinaryMask(4, 4, false));
  for (float v : blank.data()) CHECK(v == 0.0f);
  BinaryMask checker(4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) checker.set(y, x, (x + y) % 2 == 0);
  auto out = apply_mask(img, checker);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == ((x + y) % 2 == 0 ? 0.5f : 0.0f));
  CHECK_THROWS_AS(apply_mask(img, BinaryMask(3, 4)), DimensionMismatch);
}

TEST_CASE("apply_mask is idempotent with support inside the mask") {
  Rng rng(RandomSeed{11});
  for (int i = 0; i < 100; ++i) {
    const auto h = static_cast<std::size_t>(rng.uniform_int(1, 40));
    const auto w = static_cast<std::size_t>(rng.uniform_int(1, 40));
    auto img = random_image(h, w, i % 2 ? 3 : 1, rng);
    auto m = random_mask(h, w, rng, rng.uniform());
    auto once = apply_mask(img, m);
    REQUIRE(apply_mask(once, m) == once);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < img.channels(); ++c) {
          if (!m.at(y, x)) REQUIRE(once.at(y, x, c) == 0.0f);
          else REQUIRE(once.at(y, x, c) == img.at(y, x, c));
        }
  }
}

TEST_CASE("segmenter config validation") {
  SegmenterConfig c;
  c.downsize_width = 32;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c.downsize_width = 512;
  c.backend = SegmenterBackend::External;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  CHECK_THROWS_AS(parse_backend("sam"), InvalidConfig);
}

namespace {

// In-process stand-in for an external segmenter.
class StubServer {
 public:
  explicit StubServer(std::function<std::string(const ImageTensor&)> respond) {
    server_.Post("/segment", [respond](const httplib::Request& req, httplib::Response& res) {
      const auto img = decode_png(std::vector<unsigned char>(req.body.begin(), req.body.end()));
      res.set_content(respond(img), "image/png");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string mask_body(const BinaryMask& m) {
  auto bytes = encode_mask_png(m);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace

TEST_CASE("external segmenter contract") {
  ImageTensor img(12, 16, 3, 0.4f);
  SUBCASE("echoed all-foreground mask") {
    StubServer s([](const ImageTensor& in) { return mask_body(BinaryMask(in.height(), in.width(), true)); });
    auto m = segment_external(img, s.endpoint());
    CHECK(m.height() == 12);
    CHECK(m.width() == 16);
    CHECK(m.count() == 12 * 16);
  }
  SUBCASE("all background") {
    StubServer s([](const ImageTensor& in) { return mask_body(BinaryMask(in.height(), in.width(), false)); });
    CHECK_THROWS_AS(segment_external(img, s.endpoint()), EmptyMask);
  }
  SUBCASE("mismatched dimensions") {
    StubServer s([](const ImageTensor& in) { return mask_body(BinaryMask(in.height() + 1, in.width(), true)); });
    CHECK_THROWS_AS(segment_external(img, s.endpoint()), MalformedResponse);
  }
  SUBCASE("not a PNG") {
    StubServer s([](const ImageTensor&) { return std::string("nope"); });
    CHECK_THROWS_AS(segment_external(img, s.endpoint()), MalformedResponse);
  }
  SUBCASE("full pipeline upscales the downsized mask") {
    StubServer s([](const ImageTensor& in) {
      CHECK(in.width() == 64);
      return mask_body(BinaryMask(in.height(), in.width(), true));
    });
    SegmenterConfig cfg;
    cfg.backend = SegmenterBackend::External;
    cfg.downsize_width = 64;
    cfg.external_endpoint = s.endpoint();
    ImageTensor wide(100, 128, 3, 0.2f);
    auto m = segment(wide, cfg);
    CHECK(m.height() == 100);
    CHECK(m.width() == 128);
    CHECK(m.count() == 100 * 128);
  }
}

TEST_CASE("unreachable segmenter is a transport error") {
  ImageTensor img(8, 8, 3, 0.4f);
  CHECK_THROWS_AS(segment_external(img, "http://127.0.0.1:1", 0.5), TransportError);
}
