#include <httplib.h>

#include "bikelab/survey.hpp"

namespace bikelab::survey {

namespace {

void send_error(httplib::Response& res, const std::exception& e) {
  res.status = http_status(e);
  json body = {{"error", e.what()}};
  if (const auto* v = dynamic_cast<const ValidationError*>(&e)) {
    body["field"] = v->field();
  }
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    body["code"] = error_code_name(err->code());
  }
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler route(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      json reply = fn(req, res);
      res.set_content(reply.dump(), "application/json");
    } catch (const std::exception& e) {
      send_error(res, e);
    }
  };
}

json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return parse_json(req.body);
}

}  // namespace

int http_status(const std::exception& e) {
  if (dynamic_cast<const json::exception*>(&e)) return 400;
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return 500;
  switch (err->code()) {
    case ErrorCode::kValidation: return 422;
    case ErrorCode::kParse: return 400;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict:
    case ErrorCode::kDuplicateAnnotator: return 409;
    default: return 500;
  }
}

void bind_routes(httplib::Server& server, Service& service) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/participants", route([&service](const httplib::Request&, httplib::Response& res) {
                res.status = 201;
                return json(service.create_participant());
              }));
  server.Get(R"(/participants/([^/]+)/assignment)",
             route([&service](const httplib::Request& req, httplib::Response&) {
               return json(service.assignment(req.matches[1]));
             }));
  server.Post("/responses", route([&service](const httplib::Request& req, httplib::Response&) {
                return json(service.submit_response(body_of(req)));
              }));
  server.Get("/preference-tasks", route([&service](const httplib::Request& req, httplib::Response&) {
               const auto annotator = req.get_param_value("annotator");
               if (annotator.empty()) throw ValidationError("annotator", "query parameter required");
               return json{{"annotator", annotator}, {"tasks", service.list_tasks(annotator)}};
             }));
  server.Post("/preference-votes", route([&service](const httplib::Request& req, httplib::Response& res) {
                auto vote = body_of(req).get<preference::Vote>();
                service.submit_vote(vote);
                res.status = 201;
                return json{{"ok", true}, {"pair_id", vote.pair_id}};
              }));
  server.Get("/preference-votes", route([&service](const httplib::Request&, httplib::Response&) {
               return json{{"votes", service.votes()}};
             }));
  server.Get("/export", route([&service](const httplib::Request&, httplib::Response&) {
               auto e = service.export_dataset();
               return json{{"completed_sessions", e.completed_sessions},
                           {"profiles", e.profiles},
                           {"assessments", e.assessments}};
             }));
  server.Get("/health", route([&service](const httplib::Request&, httplib::Response&) {
               return json{{"ok", true}, {"participants", service.participant_count()}};
             }));
}

}  // namespace bikelab::survey
