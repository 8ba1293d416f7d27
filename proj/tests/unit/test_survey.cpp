#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <thread>

#include <httplib.h>

#include "bikelab/io.hpp"
#include "bikelab/survey.hpp"

using namespace bikelab;
using namespace bikelab::survey;

namespace {

std::vector<ImageRef> images(const std::vector<synth::Segment>& segments) {
  std::vector<ImageRef> out;
  for (const auto& s : segments) out.push_back(s.image);
  return out;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("bikelab_survey_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

json ratings(int s, int c, int w) { return {{"safety", s}, {"comfort", c}, {"willingness", w}}; }

/// Spins up the API on an ephemeral port for one test.
struct LiveServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit LiveServer(Service& service) {
    bind_routes(server, service);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10);
    return c;
  }
};

std::vector<preference::CandidatePair> pairs(std::size_t n) {
  std::vector<preference::CandidatePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    preference::CandidatePair p;
    p.pair_id = "pair-" + std::to_string(i);
    p.instance.persona = Persona::kIBC;
    p.instance.image_ref = ImageRef{"seg-000" + std::to_string(i + 1), ImageSource::kStreetview,
                                    std::nullopt, ""};
    p.prompt = "prompt";
    p.completion_a = "a";
    p.completion_b = "b";
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("assignment invariants") {
  auto segments = synth::segment_registry(200, 60, 1);
  Service service(images(segments), std::nullopt, {.seed = 3});
  for (int p = 0; p < 50; ++p) {
    auto a = service.create_participant();
    REQUIRE(a.items.size() == 20);
    std::set<std::string> ids, base_ids;
    std::size_t augmented = 0;
    for (const auto& item : a.items) {
      ids.insert(item.image_id);
      if (item.source == ImageSource::kAugmented) {
        ++augmented;
      } else {
        base_ids.insert(item.image_id);
      }
    }
    CHECK(ids.size() == 20);
    CHECK(augmented == 5);
    for (const auto& item : a.items) {
      if (item.parent_id) CHECK_FALSE(base_ids.count(*item.parent_id));
    }
    CHECK(a.participant_id.rfind("anon-", 0) == 0);
  }
  CHECK(service.warnings().empty());
}

TEST_CASE("assignment balance: spread <= 2 after 100 participants") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto segments = synth::segment_registry(200, 50, seed);
    Service service(images(segments), std::nullopt, {.seed = seed});
    for (int p = 0; p < 100; ++p) service.create_participant();
    auto counts = service.assignment_counts();
    for (auto source : {ImageSource::kStreetview, ImageSource::kAugmented}) {
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto& s : segments) {
        if (s.image.source != source) continue;
        lo = std::min(lo, counts.at(s.image.image_id));
        hi = std::max(hi, counts.at(s.image.image_id));
      }
      CHECK(hi - lo <= 2);
    }
  }
}

TEST_CASE("tight registry falls back but keeps the parent constraint") {
  // 20 base segments, 6 of them parents: the least-assigned base set soon
  // covers too many parents and the uniform fallback takes over.
  auto segments = synth::segment_registry(20, 6, 9);
  Service service(images(segments), std::nullopt, {.seed = 1});
  for (int p = 0; p < 30; ++p) {
    auto a = service.create_participant();
    std::set<std::string> base_ids;
    for (const auto& item : a.items) {
      if (!item.parent_id) base_ids.insert(item.image_id);
    }
    for (const auto& item : a.items) {
      if (item.parent_id) CHECK_FALSE(base_ids.count(*item.parent_id));
    }
    CHECK(a.items.size() == 20);
  }
  CHECK_FALSE(service.warnings().empty());
  Service tiny(images(synth::segment_registry(10, 5, 1)), std::nullopt);
  CHECK_THROWS_AS(tiny.create_participant(), Error);
}

TEST_CASE("HTTP: participants, responses, validation and audit") {
  auto segments = synth::segment_registry(200, 50, 4);
  Service service(images(segments), std::nullopt, {.seed = 4});
  LiveServer live(service);
  auto cli = live.client();

  auto created = cli.Post("/participants", "", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  CHECK(created->get_header_value("Access-Control-Allow-Origin") == "*");
  auto a = json::parse(created->body).get<Assignment>();
  CHECK(a.items.size() == 20);

  auto fetched = cli.Get("/participants/" + a.participant_id + "/assignment");
  REQUIRE(fetched);
  CHECK(fetched->status == 200);
  CHECK(json::parse(fetched->body).get<Assignment>().items == a.items);
  CHECK(cli.Get("/participants/anon-missing/assignment")->status == 404);

  const auto& first = a.items[0].image_id;
  auto post = [&](const json& body) {
    auto r = cli.Post("/responses", body.dump(), "application/json");
    REQUIRE(r);
    return std::make_pair(r->status, json::parse(r->body));
  };

  auto [ok, ack] = post({{"participant_id", a.participant_id},
                         {"assessments", {{{"image_id", first}, {"ratings", ratings(3, 2, 4)},
                                           {"factors", {"painted bike lane"}}}}}});
  CHECK(ok == 200);
  CHECK(ack["accepted"] == 1);
  CHECK(ack["replaced"] == 0);

  auto [bad, err] = post({{"participant_id", a.participant_id},
                          {"assessments", {{{"image_id", first}, {"ratings", ratings(5, 2, 2)}}}}});
  CHECK(bad == 422);
  CHECK(err["field"] == "assessments[0].ratings.safety");

  auto [frac, ferr] = post({{"participant_id", a.participant_id},
                            {"assessments", {{{"image_id", first},
                                              {"ratings", {{"safety", 2.6}, {"comfort", 2}, {"willingness", 2}}}}}}});
  CHECK(frac == 422);
  CHECK(ferr["field"] == "assessments[0].ratings.safety");

  auto [unassigned, uerr] = post({{"participant_id", a.participant_id},
                                  {"assessments", {{{"image_id", "seg-9999"}, {"ratings", ratings(2, 2, 2)}}}}});
  CHECK(unassigned == 422);
  CHECK(uerr["field"] == "assessments[0].image_id");

  auto [comfort_bad, cerr] = post({{"participant_id", a.participant_id},
                                   {"comfort_profile", {{"ratings", {{"sidewalks", 6}}}}}});
  CHECK(comfort_bad == 422);
  CHECK(cerr["field"].get<std::string>().rfind("comfort_profile.ratings.", 0) == 0);

  auto [pii, perr] = post({{"participant_id", a.participant_id}, {"demographics", {{"email", "x@y"}}}});
  CHECK(pii == 422);
  CHECK(perr["field"] == "demographics.email");

  CHECK(post({{"participant_id", "anon-nobody"}}).first == 404);
  auto malformed = cli.Post("/responses", "{not json", "application/json");
  CHECK(malformed->status == 400);

  auto [again, ack2] = post({{"participant_id", a.participant_id},
                             {"assessments", {{{"image_id", first}, {"ratings", ratings(1, 1, 1)}}}}});
  CHECK(again == 200);
  CHECK(ack2["replaced"] == 1);
  auto trail = service.audit(a.participant_id, first);
  REQUIRE(trail.size() == 2);
  CHECK(trail[0].ratings == RatingTriple{3, 2, 4});
  CHECK(trail[1].ratings == RatingTriple{1, 1, 1});

  auto options = cli.Options("/responses");
  CHECK(options->status == 204);
}

TEST_CASE("export: completed sessions only, pure function of the log") {
  auto dir = fresh_dir("export");
  auto segments = synth::segment_registry(200, 50, 5);
  {
    Service service(images(segments), dir, {.seed = 5});
    auto empty = service.export_dataset();
    CHECK(empty.completed_sessions == 0);
    CHECK(empty.profiles == io::schema_header("comfort_profile").dump() + "\n");
    CHECK(empty.assessments == io::schema_header("segment_assessment").dump() + "\n");

    auto sims = simulate_participants(service, segments, 12, 5);
    auto partial = service.create_participant();
    service.submit_response({{"participant_id", partial.participant_id},
                             {"assessments", {{{"image_id", partial.items[0].image_id},
                                               {"ratings", ratings(2, 2, 2)}}}}});
    auto e = service.export_dataset();
    CHECK(e.completed_sessions == 12);
    auto rows = io::parse_jsonl(e.assessments);
    CHECK(rows.size() == 12 * 20);
    for (const auto& r : rows) CHECK(validate_json("SegmentAssessment", r).ok());
    auto profiles = io::parse_jsonl(e.profiles);
    CHECK(profiles.size() == 12);
    for (const auto& r : profiles) CHECK(validate_json("ComfortProfile", r).ok());
    CHECK(service.export_dataset().assessments == e.assessments);
  }
  // Replay from disk reproduces the export byte for byte.
  Service first(images(segments), dir, {.seed = 5});
  Service second(images(segments), dir, {.seed = 5});
  CHECK(first.participant_count() == 13);
  CHECK(first.export_dataset().assessments == second.export_dataset().assessments);
  CHECK(first.export_dataset().profiles == second.export_dataset().profiles);
  std::filesystem::remove_all(dir);
}

TEST_CASE("simulated 427-participant run exports >= 427 x 20 assessments") {
  auto segments = synth::segment_registry(200, 50, 6);
  Service service(images(segments), std::nullopt, {.seed = 6});
  auto sims = simulate_participants(service, segments, 427, 6);
  CHECK(sims.size() == 427);
  auto e = service.export_dataset();
  CHECK(e.completed_sessions == 427);
  CHECK(io::parse_jsonl(e.assessments).size() >= 427 * 20);
}

TEST_CASE("HTTP: preference tasks and votes") {
  auto dir = fresh_dir("votes");
  auto segments = synth::segment_registry(20, 5, 7);
  Service service(images(segments), dir);
  auto ps = pairs(4);
  service.add_pairs(ps);
  CHECK_THROWS_AS(service.add_pairs(ps), Error);
  LiveServer live(service);
  auto cli = live.client();

  auto tasks = [&](const std::string& annotator) {
    auto r = cli.Get("/preference-tasks?annotator=" + annotator);
    REQUIRE(r);
    REQUIRE(r->status == 200);
    std::vector<std::string> ids;
    const json body = json::parse(r->body);
    for (const auto& t : body["tasks"]) ids.push_back(t["pair_id"]);
    return ids;
  };
  auto vote = [&](const std::string& pair, const std::string& who, const std::string& choice) {
    json body = {{"pair_id", pair}, {"annotator_id", who}, {"choice", choice}};
    return cli.Post("/preference-votes", body.dump(), "application/json")->status;
  };

  CHECK(tasks("e1").size() == 4);
  CHECK(cli.Get("/preference-tasks")->status == 422);
  CHECK(vote("pair-0", "e1", "A") == 201);
  CHECK(vote("pair-0", "e1", "B") == 409);
  CHECK(vote("pair-9", "e1", "A") == 404);
  CHECK(vote("pair-1", "e1", "C") == 422);
  CHECK(tasks("e1").size() == 3);
  CHECK(tasks("e2").size() == 4);
  CHECK(vote("pair-0", "e2", "B") == 201);
  CHECK(vote("pair-0", "e3", "A") == 201);
  for (const auto& who : {"e1", "e2", "e3", "e4"}) {
    auto ids = tasks(who);
    CHECK(std::find(ids.begin(), ids.end(), "pair-0") == ids.end());
  }
  CHECK(vote("pair-0", "e4", "A") == 409);

  // Concurrent votes on one pair: exactly three succeed.
  std::vector<std::thread> threads;
  std::atomic<int> created{0}, conflicts{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      auto c = live.client();
      json body = {{"pair_id", "pair-2"}, {"annotator_id", "x" + std::to_string(t)}, {"choice", "A"}};
      int status = c.Post("/preference-votes", body.dump(), "application/json")->status;
      (status == 201 ? created : conflicts)++;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(created == 3);
  CHECK(conflicts == 5);

  auto votes = json::parse(cli.Get("/preference-votes")->body)["votes"];
  CHECK(votes.size() == 6);
  auto summary = preference::tally_all(service.pairs(), service.votes());
  CHECK(summary.decided.size() == 2);

  Service replayed(images(segments), dir);
  CHECK(replayed.votes().size() == 6);
  CHECK(replayed.list_tasks("e1").size() == 2);
  std::filesystem::remove_all(dir);
}
