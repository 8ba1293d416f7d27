#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <set>
#include <thread>

#include <httplib.h>

#include "bikelab/augment.hpp"

using namespace bikelab;
using namespace bikelab::augment;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kParse;
}

ImageRef base_ref(const std::string& id) {
  return ImageRef{id, ImageSource::kStreetview, std::nullopt, "file://images/" + id + ".jpg"};
}

BaseImage laned(const std::string& id) {
  return {base_ref(id),
          {{Variable::kLanePresence, "present"},
           {Variable::kLaneWidth, "standard"},
           {Variable::kLaneColor, "no_paint"},
           {Variable::kBufferType, "none"},
           {Variable::kBufferLocation, "adjacent_moving"}}};
}

BaseImage bare(const std::string& id) {
  return {base_ref(id), {{Variable::kLanePresence, "absent"}}};
}

/// Counts how many variables differ between two metadata maps.
std::size_t differences(const Metadata& a, const Metadata& b) {
  std::size_t n = 0;
  for (Variable v : all_variables()) {
    auto ia = a.find(v), ib = b.find(v);
    const bool ha = ia != a.end(), hb = ib != b.end();
    if (ha != hb || (ha && ia->second != ib->second)) ++n;
  }
  return n;
}

class CountingClient : public EditClient {
 public:
  std::atomic<int> calls{0};
  int fail_first = 0;
  std::string edit(const std::string& uri, const std::string&) override {
    int n = ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    if (n <= fail_first) throw Error(ErrorCode::kBackend, "editor unavailable");
    return uri + ".edited";
  }
};

}  // namespace

TEST_CASE("domains and names") {
  CHECK(domain(Variable::kLaneWidth).size() == 3);
  CHECK(domain(Variable::kBufferType).size() == 4);
  for (Variable v : all_variables()) CHECK(variable_from_string(to_string(v)) == v);
  CHECK_THROWS_AS(variable_from_string("lane_texture"), ParseError);
}

TEST_CASE("plan_pairs") {
  std::vector<BaseImage> one = {laned("s1")};
  auto width = plan_pairs(one, Variable::kLaneWidth);
  REQUIRE(width.size() == 2);
  CHECK(width[0].changes == std::vector<Change>{{Variable::kLaneWidth, "narrow"}});
  CHECK(width[1].changes == std::vector<Change>{{Variable::kLaneWidth, "wide"}});

  std::vector<BaseImage> two = {laned("s1"), laned("s2")};
  CHECK(plan_pairs(two, Variable::kBufferType).size() == 6);

  std::vector<BaseImage> absent = {bare("s3")};
  CHECK(code_of([&] { plan_pairs(absent, Variable::kLaneColor); }) == ErrorCode::kConstraint);
  CHECK(code_of([&] {
          apply_changes(bare("s3").metadata, std::vector<Change>{{Variable::kLaneColor, "green"}});
        }) == ErrorCode::kConstraint);
  auto add_lane = plan_pairs(absent, Variable::kLanePresence);
  REQUIRE(add_lane.size() == 1);
  CHECK(add_lane[0].changes[0].value == "present");

  // Removing a lane together with a lane-dependent edit is contradictory.
  CHECK(code_of([&] {
          apply_changes(laned("s1").metadata, std::vector<Change>{{Variable::kLanePresence, "absent"},
                                                                 {Variable::kLaneWidth, "wide"}});
        }) == ErrorCode::kConstraint);
  CHECK(code_of([&] {
          apply_changes(laned("s1").metadata, std::vector<Change>{{Variable::kLaneWidth, "wide"},
                                                                 {Variable::kLaneWidth, "narrow"}});
        }) == ErrorCode::kConstraint);
  CHECK(code_of([&] { apply_changes(laned("s1").metadata, std::vector<Change>{}); }) ==
        ErrorCode::kConstraint);

  BaseImage missing = laned("s4");
  missing.metadata.erase(Variable::kLaneWidth);
  std::vector<BaseImage> bad = {missing};
  CHECK_THROWS_AS(plan_pairs(bad, Variable::kLaneColor), ValidationError);
}

TEST_CASE("plan_pairs property: distinct, single-variable differences") {
  std::vector<BaseImage> images = {laned("a"), bare("b")};
  images.push_back(laned("c"));
  images.back().metadata[Variable::kBufferType] = "bollards";
  images.back().metadata[Variable::kLaneColor] = "green";
  for (Variable v : all_variables()) {
    std::vector<BaseImage> eligible;
    for (const auto& b : images) {
      if (!lane_dependent(v) || b.metadata.at(Variable::kLanePresence) == "present") {
        eligible.push_back(b);
      }
    }
    auto specs = plan_pairs(eligible, v);
    std::set<std::string> keys;
    for (const auto& s : specs) {
      keys.insert(job_key(s.base_image.image_id, s.changes));
      const auto& base = *std::find_if(eligible.begin(), eligible.end(), [&](const BaseImage& b) {
        return b.image.image_id == s.base_image.image_id;
      });
      auto after = apply_changes(base.metadata, s.changes);
      if (v == Variable::kLanePresence) {
        CHECK(after.at(Variable::kLanePresence) != base.metadata.at(Variable::kLanePresence));
      } else {
        CHECK(differences(base.metadata, after) == 1);
      }
    }
    CHECK(keys.size() == specs.size());
    std::size_t expected = 0;
    for (const auto& b : eligible) {
      expected += domain(v).size() - (b.metadata.count(v) ? 1 : 0);
    }
    CHECK(specs.size() == expected);
  }
}

TEST_CASE("render_instruction templates") {
  CHECK(render_instruction(std::vector<Change>{{Variable::kLaneColor, "green"}}) ==
        "Repaint the bike lane surface green. Change nothing else in the image.");
  CHECK(render_instruction(std::vector<Change>{{Variable::kLaneWidth, "narrow"}}) ==
        "Narrow the bike lane to a minimal width. Change nothing else in the image.");
  // Canonical order regardless of input order.
  CHECK(render_instruction(std::vector<Change>{{Variable::kBufferLocation, "adjacent_parked"},
                                               {Variable::kBufferType, "bollards"}}) ==
        "Add a row of flexible bollards between the bike lane and the adjacent lane. "
        "Place the buffer between the bike lane and parked cars. Change nothing else in the image.");
  for (Variable v : all_variables()) {
    for (const auto& value : domain(v)) {
      std::vector<Change> c = {{v, value}};
      CHECK(render_instruction(c) == render_instruction(c));
      CHECK_FALSE(render_instruction(c).empty());
    }
  }
  CHECK(job_key("s1", std::vector<Change>{{Variable::kBufferType, "none"},
                                          {Variable::kLaneWidth, "wide"}}) ==
        job_key("s1", std::vector<Change>{{Variable::kLaneWidth, "wide"},
                                          {Variable::kBufferType, "none"}}));
}

TEST_CASE("execute: fixture mode, idempotence and provenance") {
  std::vector<BaseImage> images = {laned("s1")};
  auto specs = plan_pairs(images, Variable::kLaneColor);
  REQUIRE(specs.size() == 1);
  auto dir = std::filesystem::temp_directory_path() / "bikelab_augment_fixture";
  FixtureEditClient::write(dir, {{{"image_uri", "file://images/s1.jpg"},
                                  {"instruction_text", specs[0].instruction_text},
                                  {"result_uri", "file://edits/s1_green.jpg"}}});
  FixtureEditClient client(dir);

  Registry reg;
  CHECK(code_of([&] { reg.execute(specs[0], client); }) == ErrorCode::kNotFound);
  reg.register_base(images[0].image);
  auto result = reg.execute(specs[0], client);
  CHECK(result.uri == "file://edits/s1_green.jpg");
  CHECK(result.source == ImageSource::kAugmented);
  CHECK(result.parent_id == "s1");
  CHECK(reg.execute(specs[0], client) == result);
  CHECK(reg.entries().size() == 1);
  CHECK(reg.lineage(result.image_id) == std::vector<std::string>{result.image_id, "s1"});
  CHECK(reg.verify().ok());

  auto path = dir / "registry.jsonl";
  reg.save(path);
  Registry loaded;
  loaded.load(path);
  CHECK(loaded.image(result.image_id) == result);
  CHECK(loaded.verify().ok());

  AugmentationSpec unknown = specs[0];
  unknown.changes = {{Variable::kLaneWidth, "wide"}};
  unknown.instruction_text = render_instruction(unknown.changes);
  CHECK(code_of([&] { reg.execute(unknown, client, {.attempts = 2}); }) == ErrorCode::kBackend);
  REQUIRE(reg.failed_jobs().size() == 1);
  CHECK(reg.failed_jobs()[0].attempts == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("execute: retries and concurrent duplicate submissions") {
  Registry reg;
  reg.register_base(base_ref("s1"));
  std::vector<BaseImage> images = {laned("s1")};
  auto specs = plan_pairs(images, Variable::kBufferType);

  CountingClient flaky;
  flaky.fail_first = 2;
  auto r = reg.execute(specs[0], flaky, {.attempts = 3});
  CHECK(flaky.calls == 3);
  CHECK(r.uri == "file://images/s1.jpg.edited");

  CountingClient client;
  std::vector<std::thread> threads;
  std::vector<ImageRef> results(16);
  for (int t = 0; t < 16; ++t) {
    threads.emplace_back([&, t] { results[t] = reg.execute(specs[1 + t % 2], client); });
  }
  for (auto& t : threads) t.join();
  CHECK(client.calls == 2);
  for (int t = 0; t < 16; ++t) CHECK(results[t] == results[t % 2]);
  CHECK(reg.verify().ok());
}

TEST_CASE("http edit client") {
  httplib::Server server;
  server.Post("/edit", [](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    json reply = {{"result_uri", body["image_uri"].get<std::string>() + "#" +
                                     std::to_string(body["instruction_text"].get<std::string>().size())}};
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  auto client = make_edit_client("http://127.0.0.1:" + std::to_string(port));
  CHECK(client->edit("u", "abc") == "u#3");
  server.stop();
  th.join();
  CHECK(code_of([&] { client->edit("u", "abc"); }) == ErrorCode::kBackend);
  CHECK(code_of([] { make_edit_client("ftp://x"); }) == ErrorCode::kConfig);
}
