#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <zlib.h>

#include "dialoc/image_io.hpp"
#include "dialoc/service.hpp"
#include "dialoc/train.hpp"
#include "dialoc/util.hpp"

using namespace dialoc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dialoc_service_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig tiny_model(Variant variant = Variant::kExplicit) {
  ModelConfig m;
  m.embed_dim = 16;
  m.heads = 2;
  m.text_layers = 1;
  m.map_layers = 1;
  m.head = parse_head_spec("c8,d1");
  m.variant = variant;
  return m;
}

fs::path tiny_checkpoint(const fs::path& dir, const std::string& id, Variant variant = Variant::kExplicit) {
  const DiaLocModel model(tiny_model(variant), 7);
  const auto path = dir / (id + ".ckpt");
  save_checkpoint(path, model, {});
  return path;
}

ServiceConfig tiny_service(const fs::path& dir) {
  ServiceConfig c;
  c.checkpoints = {tiny_checkpoint(dir, "tiny")};
  return c;
}

std::string turn_body(const std::string& locator, const std::string& observer) {
  return json{{"locator", locator}, {"observer", observer}}.dump();
}

std::string new_session(LocalizationService& service, const std::string& world = "world_demo") {
  const ServiceReply r = service.create_session(json{{"worldId", world}}.dump());
  EXPECT_EQ(r.status, 201) << r.body;
  return json::parse(r.body).at("sessionId").get<std::string>();
}

const std::vector<Turn>& script() {
  static const std::vector<Turn> turns{{"where are you", "i am in a bedroom"},
                                       {"what do you see", "there is a lamp next to me"},
                                       {"which side", "i am in the north part"}};
  return turns;
}

/// Real HTTP server on an ephemeral port for the lifetime of the object.
class RunningServer {
 public:
  explicit RunningServer(LocalizationService& service) {
    service.mount(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~RunningServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::uint32_t read_u32_be(const std::string& s, std::size_t at) {
  return (static_cast<std::uint8_t>(s[at]) << 24) | (static_cast<std::uint8_t>(s[at + 1]) << 16) |
         (static_cast<std::uint8_t>(s[at + 2]) << 8) | static_cast<std::uint8_t>(s[at + 3]);
}

}  // namespace

// ---- encoding helpers --------------------------------------------------------------

TEST(Base64, KnownVectorsRoundTrip) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, encoded] : cases) {
    EXPECT_EQ(base64_encode(plain), encoded);
    EXPECT_EQ(base64_decode(encoded), plain);
  }
  std::string bytes;
  for (int i = 0; i < 256; ++i) bytes.push_back(static_cast<char>(i));
  EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  EXPECT_THROW(base64_decode("Zm9v!"), DataError);
}

TEST(Png, ChunksAndPixelsDecodeIndependently) {
  Tensor img({3, 5, 7});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i % 11) / 10.0f;
  const std::string png = encode_png(img);
  ASSERT_EQ(png.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));

  std::size_t at = 8;
  std::string idat;
  std::vector<std::string> types;
  while (at < png.size()) {
    const std::uint32_t len = read_u32_be(png, at);
    const std::string type = png.substr(at + 4, 4);
    const std::string data = png.substr(at + 8, len);
    const std::string body = png.substr(at + 4, 4 + len);
    EXPECT_EQ(read_u32_be(png, at + 8 + len),
              crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    if (type == "IHDR") {
      EXPECT_EQ(read_u32_be(data, 0), 7u);
      EXPECT_EQ(read_u32_be(data, 4), 5u);
      EXPECT_EQ(data[8], 8);
      EXPECT_EQ(data[9], 2);
    }
    if (type == "IDAT") idat += data;
    types.push_back(type);
    at += 12 + len;
  }
  EXPECT_EQ(types, (std::vector<std::string>{"IHDR", "IDAT", "IEND"}));

  std::string raw(5 * (7 * 3 + 1), '\0');
  uLongf size = raw.size();
  ASSERT_EQ(uncompress(reinterpret_cast<Bytef*>(raw.data()), &size, reinterpret_cast<const Bytef*>(idat.data()),
                       static_cast<uLong>(idat.size())),
            Z_OK);
  ASSERT_EQ(size, raw.size());
  for (int y = 0; y < 5; ++y) {
    EXPECT_EQ(raw[y * 22], 0);
    for (int x = 0; x < 7; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int expected = static_cast<int>(std::lround(img.at(c, y, x) * 255.0f));
        EXPECT_EQ(static_cast<std::uint8_t>(raw[y * 22 + 1 + x * 3 + c]), expected);
      }
    }
  }
}

TEST(Png, GrayscaleAndPgmHeaders) {
  const Tensor gray({4, 6}, 0.5f);
  const std::string png = encode_png(gray);
  EXPECT_EQ(png[8 + 8 + 9], 0);  // color type byte of IHDR
  const std::string pgm = encode_pgm(gray);
  EXPECT_EQ(pgm.substr(0, 11), "P5\n6 4\n255\n");
  EXPECT_EQ(pgm.size(), 11u + 24u);
  EXPECT_THROW(encode_png(Tensor({2, 4, 4})), DimensionError);
}

// ---- payload helpers -------------------------------------------------------------------

TEST(Rounding, LargestRemainderKeepsTheTotal) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> v(4096);
    double total = 0.0;
    for (auto& x : v) total += (x = static_cast<float>(rng.uniform() * rng.uniform()));
    for (auto& x : v) x = static_cast<float>(x / total);
    const auto units = round_preserving_sum(v, 4);
    long long sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      sum += units[i];
      EXPECT_LE(std::abs(static_cast<double>(units[i]) - v[i] * 1e4), 1.0);
    }
    EXPECT_EQ(sum, 10000);
  }
  EXPECT_EQ(round_preserving_sum(std::vector<float>{0.5f, 0.25f, 0.25f}, 1), (std::vector<long long>{5, 3, 2}));
}

TEST(Nms, PeaksAreDistinctAndSorted) {
  Tensor p({20, 20}, 0.0f);
  p.at(2, 2) = 0.5f;
  p.at(2, 3) = 0.4f;   // suppressed by (2, 2)
  p.at(15, 15) = 0.3f;
  p.at(2, 12) = 0.2f;
  const auto peaks = nms_peaks(p, 3, 8);
  ASSERT_EQ(peaks.size(), 3u);
  EXPECT_EQ(peaks[0].first, (Point{2, 2}));
  EXPECT_EQ(peaks[1].first, (Point{15, 15}));
  EXPECT_EQ(peaks[2].first, (Point{12, 2}));
  EXPECT_EQ(nms_peaks(p, 3, 0)[1].first, (Point{3, 2}));
}

// ---- session contract ---------------------------------------------------------------------

TEST(Service, CreateSessionContract) {
  const auto dir = temp_dir("create");
  LocalizationService service(tiny_service(dir));
  const ServiceReply ok = service.create_session(json{{"worldId", "world_demo"}, {"variant", "explicit"}}.dump());
  ASSERT_EQ(ok.status, 201) << ok.body;
  const json j = json::parse(ok.body);
  EXPECT_TRUE(std::regex_match(j["sessionId"].get<std::string>(), std::regex("[0-9a-f]{32}")));
  EXPECT_EQ(j["checkpointId"], "tiny");
  EXPECT_EQ(j["worldSummary"]["rooms"].size(), 4u);
  const std::string png = base64_decode(j["mapImage"].get<std::string>());
  EXPECT_EQ(png.substr(1, 3), "PNG");

  const auto code = [](const ServiceReply& r) { return json::parse(r.body).at("code").get<std::string>(); };
  const ServiceReply missing = service.create_session(json{{"worldId", "world_demo"}, {"checkpointId", "nope"}}.dump());
  EXPECT_EQ(missing.status, 404);
  EXPECT_EQ(code(missing), "checkpoint_not_found");
  const ServiceReply no_world = service.create_session(json{{"worldId", "world_404"}}.dump());
  EXPECT_EQ(no_world.status, 404);
  EXPECT_EQ(code(no_world), "world_not_found");
  EXPECT_EQ(service.create_session("{not json").status, 400);
  EXPECT_EQ(service.create_session("{}").status, 400);
  const ServiceReply mismatch = service.create_session(json{{"worldId", "world_demo"}, {"variant", "implicit"}}.dump());
  EXPECT_EQ(mismatch.status, 400);
  EXPECT_EQ(code(mismatch), "variant_mismatch");

  const ServiceReply inline_world = service.create_session(json{{"world", json::parse(world_to_json(generate_world(9, {})))}}.dump());
  ASSERT_EQ(inline_world.status, 201) << inline_world.body;
  EXPECT_EQ(json::parse(inline_world.body)["worldId"], "world_9");
  EXPECT_NE(new_session(service), new_session(service));
}

TEST(Service, TurnResponseContract) {
  const auto dir = temp_dir("turn");
  LocalizationService service(tiny_service(dir));
  const std::string id = new_session(service);
  const ServiceReply r = service.submit_turn(id, turn_body("where are you", "i am in a bedroom"));
  ASSERT_EQ(r.status, 200) << r.body;
  const json j = json::parse(r.body);
  EXPECT_EQ(j["turnIndex"], 1);
  EXPECT_FALSE(j.contains("sessionId"));
  ASSERT_EQ(j["heatmap"]["values"].size(), 64u * 64u);
  double total = 0.0;
  for (const auto& v : j["heatmap"]["values"]) {
    EXPECT_GE(v.get<double>(), 0.0);
    total += v.get<double>();
  }
  EXPECT_NEAR(total, 1.0, 1e-3);
  EXPECT_EQ(base64_decode(j["heatmapImage"].get<std::string>()).substr(1, 3), "PNG");

  const auto& top = j["topK"];
  ASSERT_EQ(top.size(), 3u);
  const WorldMap world = demo_world();
  const GeodesicIndex geo(world);
  double spread = 0.0;
  for (std::size_t i = 0; i < top.size(); ++i) {
    EXPECT_EQ(top[i]["rank"], static_cast<int>(i) + 1);
    if (i > 0) EXPECT_GE(top[i - 1]["probability"].get<double>(), top[i]["probability"].get<double>());
    const Point map_px{top[i]["mapPixel"]["x"].get<int>(), top[i]["mapPixel"]["y"].get<int>()};
    EXPECT_EQ(top[i]["snappedNode"].get<int>(), snap_to_node(map_px, world));
    EXPECT_FALSE(top[i]["roomLabel"].get<std::string>().empty());
    for (std::size_t k = 0; k < i; ++k) {
      const int dx = top[i]["pixel"]["x"].get<int>() - top[k]["pixel"]["x"].get<int>();
      const int dy = top[i]["pixel"]["y"].get<int>() - top[k]["pixel"]["y"].get<int>();
      EXPECT_GT(dx * dx + dy * dy, 64);
      spread = std::max(spread, geo.distance(top[i]["snappedNode"], top[k]["snappedNode"]));
    }
  }
  EXPECT_NEAR(j["geodesicSpread"].get<double>(), spread, 1e-6);
  EXPECT_EQ(j["confidenceAtTop1"], top[0]["probability"]);

  EXPECT_EQ(service.submit_turn(id, "{}").status, 400);
  EXPECT_EQ(service.submit_turn(id, json{{"locator", 3}, {"observer", "x"}}.dump()).status, 400);
  EXPECT_EQ(service.submit_turn("0123", turn_body("a", "b")).status, 404);
}

TEST(Service, HistoryCloseAndTurnLimit) {
  const auto dir = temp_dir("history");
  ServiceConfig config = tiny_service(dir);
  config.history_dir = dir / "history";
  LocalizationService service(config);
  const std::string id = new_session(service);
  for (const auto& t : script()) ASSERT_EQ(service.submit_turn(id, turn_body(t.locator, t.observer)).status, 200);
  const json view = json::parse(service.get_session(id).body);
  EXPECT_EQ(view["history"].size(), 3u);
  EXPECT_EQ(view["turnIndex"], 3);
  EXPECT_EQ(view["status"], "active");
  EXPECT_EQ(view["history"][2]["observer"], script()[2].observer);

  std::ifstream log(config.history_dir / (id + ".jsonl"));
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    EXPECT_EQ(json::parse(line)["turnIndex"], ++lines);
  }
  EXPECT_EQ(lines, 3);

  for (int t = 3; t < kMaxTurns; ++t) ASSERT_EQ(service.submit_turn(id, turn_body("more", "kitchen")).status, 200);
  const ServiceReply limit = service.submit_turn(id, turn_body("more", "kitchen"));
  EXPECT_EQ(limit.status, 422);
  EXPECT_EQ(json::parse(limit.body)["code"], "turn_limit");

  const std::string other = new_session(service);
  EXPECT_EQ(service.close_session(other).status, 200);
  const ServiceReply closed = service.submit_turn(other, turn_body("a", "b"));
  EXPECT_EQ(closed.status, 409);
  EXPECT_EQ(json::parse(closed.body)["code"], "session_closed");
  EXPECT_EQ(json::parse(service.get_session(other).body)["status"], "closed");
  EXPECT_EQ(service.close_session("ffff").status, 404);
  EXPECT_EQ(service.get_session("ffff").status, 404);
}

TEST(Service, InterleavedSessionsMatchSerialExecution) {
  const auto dir = temp_dir("isolation");
  LocalizationService service(tiny_service(dir));
  const std::vector<Turn> other{{"hello", "i see a fridge"}, {"and", "i am in the east part"}};

  const std::string serial_a = new_session(service);
  std::vector<std::string> expected_a;
  for (const auto& t : script()) expected_a.push_back(service.submit_turn(serial_a, turn_body(t.locator, t.observer)).body);
  const std::string serial_b = new_session(service);
  std::vector<std::string> expected_b;
  for (const auto& t : other) expected_b.push_back(service.submit_turn(serial_b, turn_body(t.locator, t.observer)).body);

  const std::string a = new_session(service), b = new_session(service);
  EXPECT_EQ(service.submit_turn(a, turn_body(script()[0].locator, script()[0].observer)).body, expected_a[0]);
  EXPECT_EQ(service.submit_turn(b, turn_body(other[0].locator, other[0].observer)).body, expected_b[0]);
  EXPECT_EQ(service.submit_turn(a, turn_body(script()[1].locator, script()[1].observer)).body, expected_a[1]);
  EXPECT_EQ(service.submit_turn(b, turn_body(other[1].locator, other[1].observer)).body, expected_b[1]);
  EXPECT_EQ(service.submit_turn(a, turn_body(script()[2].locator, script()[2].observer)).body, expected_a[2]);

  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(new_session(service));
  std::vector<std::vector<std::string>> got(ids.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    threads.emplace_back([&, i] {
      for (const auto& t : script()) got[i].push_back(service.submit_turn(ids[i], turn_body(t.locator, t.observer)).body);
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& g : got) EXPECT_EQ(g, expected_a);
}

// ---- HTTP surface ----------------------------------------------------------------------------

TEST(ServiceHttp, EndpointsOverHttp) {
  const auto dir = temp_dir("http");
  ServiceConfig config = tiny_service(dir);
  config.static_dir = dir / "static";
  fs::create_directories(config.static_dir);
  write_file(config.static_dir / "index.html", "<html>console</html>");
  fs::create_directories(dir / "worlds");
  write_file(dir / "worlds" / "w.json", world_to_json(generate_world(31, {})));
  config.worlds_dir = dir / "worlds";
  LocalizationService service(config);
  RunningServer server(service);
  auto cli = server.client();

  auto health = cli.Get("/v1/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const json h = json::parse(health->body);
  EXPECT_EQ(h["version"], kVersion);
  EXPECT_EQ(h["checkpointHash"], hex64(fnv1a64(read_file(config.checkpoints[0]))));

  const json worlds = json::parse(cli.Get("/v1/worlds")->body);
  std::set<std::string> ids;
  for (const auto& w : worlds["worlds"]) ids.insert(w["worldId"].get<std::string>());
  EXPECT_EQ(ids, (std::set<std::string>{"world_31", "world_demo"}));

  auto generated = cli.Post("/v1/worlds/generate", json{{"seed", 44}, {"params", {{"gridRows", 2}}}}.dump(),
                            "application/json");
  ASSERT_EQ(generated->status, 201) << generated->body;
  EXPECT_EQ(json::parse(generated->body)["worldId"], "world_44");
  EXPECT_EQ(cli.Post("/v1/worlds/generate", "{\"seed\": -1}", "application/json")->status, 400);

  const json ckpts = json::parse(cli.Get("/v1/checkpoints")->body);
  ASSERT_EQ(ckpts["checkpoints"].size(), 1u);
  EXPECT_EQ(ckpts["checkpoints"][0]["variant"], "explicit");

  auto created = cli.Post("/v1/sessions", json{{"worldId", "world_44"}}.dump(), "application/json");
  ASSERT_EQ(created->status, 201) << created->body;
  const std::string id = json::parse(created->body)["sessionId"];
  auto turn = cli.Post("/v1/sessions/" + id + "/turns", turn_body("hi", "i am in a kitchen"), "application/json");
  EXPECT_EQ(turn->status, 200);
  EXPECT_EQ(turn->get_header_value("Content-Type"), "application/json");
  EXPECT_EQ(json::parse(cli.Get("/v1/sessions/" + id)->body)["history"].size(), 1u);
  EXPECT_EQ(cli.Delete("/v1/sessions/" + id)->status, 200);
  auto rejected = cli.Post("/v1/sessions/" + id + "/turns", turn_body("hi", "x"), "application/json");
  EXPECT_EQ(rejected->status, 409);
  EXPECT_EQ(cli.Get("/v1/sessions/abc123")->status, 404);

  auto page = cli.Get("/index.html");
  ASSERT_TRUE(page);
  EXPECT_EQ(page->status, 200);
  EXPECT_EQ(page->body, "<html>console</html>");
}

TEST(ServiceHttp, ReplayIsByteIdenticalAcrossRestarts) {
  const auto dir = temp_dir("replay");
  const ServiceConfig config = tiny_service(dir);
  auto run = [&] {
    LocalizationService service(config);
    RunningServer server(service);
    auto cli = server.client();
    const std::string id = json::parse(cli.Post("/v1/sessions", R"({"worldId":"world_demo"})", "application/json")->body)["sessionId"];
    std::vector<std::string> bodies;
    for (const auto& t : script()) {
      bodies.push_back(cli.Post("/v1/sessions/" + id + "/turns", turn_body(t.locator, t.observer), "application/json")->body);
    }
    return bodies;
  };
  const auto first = run();
  const auto second = run();
  ASSERT_EQ(first.size(), 3u);
  EXPECT_EQ(first, second);
}

// ---- trained model on the demo world ---------------------------------------------------------

TEST(ServiceDemo, SecondTurnDisambiguatesBedrooms) {
  const WorldMap world = demo_world();
  Dataset ds;
  ds.worlds[world.world_id] = world;
  std::vector<DialogSample> samples;
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; samples.size() < 8 && seed < 200; ++seed) {
    DialogSample s = generate_dialog(world, seed, 2);
    std::string key;
    for (const auto& f : s.facts) key += fact_kind_name(f.kind) + ":" + f.value + ";";
    if (!seen.insert(key).second) continue;
    s.sample_id = "train_" + std::to_string(samples.size());
    samples.push_back(s);
  }
  ASSERT_GE(samples.size(), 4u);
  for (const auto& name : split_names()) ds.splits[name] = samples;

  TrainConfig c;
  c.epochs = 300;
  c.batch_size = 8;
  c.eval_every = 10;
  c.eval_splits = {"train"};
  c.best_split = "train";
  c.augmentation.enabled = false;
  const auto dir = temp_dir("demo");
  TrainHooks hooks;
  hooks.on_eval = [](const EpochEval& e) { return e.summary.acc0 < 1.0; };
  const TrainResult result = train(c, ds, dir / "run", hooks);
  ASSERT_EQ(result.evals.back().summary.acc0, 1.0);

  ServiceConfig config;
  config.checkpoints = {result.last_checkpoint};
  LocalizationService service(config);
  for (const auto& s : samples) {
    ASSERT_GE(consistent_nodes(world, {s.facts[0]}).size(), 2u);
    const auto oracle = consistent_nodes(world, s.facts);
    ASSERT_EQ(oracle.size(), 1u);
    const std::string id = new_session(service);
    json last;
    for (const auto& t : s.turns) last = json::parse(service.submit_turn(id, turn_body(t.locator, t.observer)).body);
    EXPECT_EQ(last["topK"][0]["snappedNode"].get<int>(), oracle[0]) << s.turns[1].observer;
    EXPECT_EQ(last["topK"][0]["roomLabel"], "bedroom");
  }
}
