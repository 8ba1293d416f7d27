#include <httplib.h>

#include "bikelab/backend.hpp"

namespace bikelab::training {

namespace {

template <typename Fn>
httplib::Server::Handler json_route(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      json body = req.body.empty() ? json::object() : json::parse(req.body);
      res.set_content(fn(body).dump(), "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  };
}

}  // namespace

void bind_backend_routes(httplib::Server& server, ModelBackend& backend) {
  server.Post("/generate", json_route([&backend](const json& j) {
                return json{{"text", backend.generate(j.get<GenerationRequest>())}};
              }));
  server.Post("/logprob", json_route([&backend](const json& j) {
                return json{{"logprob", backend.sequence_logprob(j.at("prompt").get<std::string>(),
                                                                 j.at("completion").get<std::string>())}};
              }));
  server.Post("/sft_step", json_route([&backend](const json& j) {
                auto batch = j.at("batch").get<std::vector<dataset::TrainingExample>>();
                return json{{"loss", backend.apply_sft_step(batch, j.at("lr").get<double>())}};
              }));
  server.Post("/dpo_step", json_route([&backend](const json& j) {
                auto updates = j.at("updates").get<std::vector<PreferenceUpdate>>();
                backend.apply_preference_step(updates, j.at("lr").get<double>());
                return json{{"ok", true}};
              }));
  server.Post("/snapshot", json_route([&backend](const json&) {
                return json{{"snapshot", backend.snapshot()}};
              }));
  server.Post("/restore", json_route([&backend](const json& j) {
                backend.restore(j.at("snapshot").get<std::string>());
                return json{{"ok", true}};
              }));
}

}  // namespace bikelab::training
