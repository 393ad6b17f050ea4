#include <filesystem>
#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "httplib.h"
#include "msjudge/serve.hpp"

using namespace msjudge;
using nlohmann::json;

namespace {

struct Fixture {
  std::vector<Case> cases = synth_generate(31, 6);
  Model model = testing::random_model(cases, testing::tiny_config(2), 8);
  PredictionService service{Model(model)};

  json payload(std::size_t i = 0) const {
    json j = case_to_json(cases[i]);
    j.erase("facts");
    j.erase("judgments");
    return j;
  }
};

json parse(const HttpResponse& r) { return json::parse(r.body); }

}  // namespace

TEST_CASE("certainty buckets at their boundaries") {
  CHECK(certainty_bucket(0.7) == Bucket::other);
  CHECK(certainty_bucket(std::nextafter(0.7, 1.0)) == Bucket::certain);
  CHECK(certainty_bucket(0.45) == Bucket::uncertain);
  CHECK(certainty_bucket(0.55) == Bucket::uncertain);
  CHECK(certainty_bucket(std::nextafter(0.45, 0.0)) == Bucket::other);
  CHECK(certainty_bucket(std::nextafter(0.55, 1.0)) == Bucket::other);
  CHECK(bucket_name(Bucket::certain) == "certain");
}

TEST_CASE("prediction returns one normalized distribution per claim") {
  Fixture f;
  for (std::size_t i = 0; i < f.cases.size(); ++i) {
    HttpResponse r = f.service.predict(f.payload(i).dump());
    REQUIRE(r.status == 200);
    json j = parse(r);
    CHECK(j["claims"].size() == f.cases[i].claims.size());
    for (const auto& c : j["claims"]) {
      double total = 0.0;
      for (double p : c["probabilities"]) total += p;
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    CHECK(j["facts"].size() == kFactCount);
    CHECK(j["schema_version"] == kSchemaVersion);
  }
}

TEST_CASE("the response mirrors the library forward trace") {
  Fixture f;
  const Case c = case_from_json(f.payload(2), false);
  const ForwardTrace t = f.model.infer(c).trace;
  json j = parse(f.service.predict(f.payload(2).dump()));
  CHECK(j["attention"]["utterance_word"].get<std::vector<std::vector<double>>>() == t.utterance_word_attention);
  CHECK(j["attention"]["claim_word"].get<std::vector<std::vector<double>>>() == t.claim_word_attention);
  CHECK(j["attention"]["debate_to_fact"].get<Matrix>() == t.debate_to_fact);
  REQUIRE(j["attention"]["hops"].size() == t.hops.size());
  for (std::size_t h = 0; h < t.hops.size(); ++h) {
    CHECK(j["attention"]["hops"][h]["debate_to_claim"].get<Matrix>() == t.hops[h].debate_to_claim);
    CHECK(j["attention"]["hops"][h]["fact_to_claim"].get<Matrix>() == t.hops[h].fact_to_claim);
    CHECK(j["attention"]["hops"][h]["across_claim"].get<Matrix>() == t.hops[h].across_claim);
  }
  for (std::size_t k = 0; k < t.claim_probs.size(); ++k)
    CHECK(j["claims"][k]["probabilities"].get<std::vector<double>>() == t.claim_probs[k]);
  for (std::size_t p = 0; p < kFactCount; ++p) CHECK(j["facts"][p]["probability"].get<double>() == t.fact_probs[p]);
}

TEST_CASE("identical requests give byte-identical responses") {
  Fixture f;
  const std::string body = f.payload(1).dump();
  CHECK(f.service.predict(body).body == f.service.predict(body).body);
}

TEST_CASE("an empty override map equals plain prediction") {
  Fixture f;
  json req{{"case", f.payload(3)}, {"overrides", json::object()}};
  CHECK(f.service.predict_with_overrides(req.dump()).body == f.service.predict(f.payload(3).dump()).body);
  json no_field{{"case", f.payload(3)}};
  CHECK(f.service.predict_with_overrides(no_field.dump()).body == f.service.predict(f.payload(3).dump()).body);
}

TEST_CASE("overrides are reported and change only the fact memory") {
  Fixture f;
  json req{{"case", f.payload(0)}, {"overrides", {{"Couple Debt", 1.0}, {"Loan Established", 0.0}}}};
  HttpResponse r = f.service.predict_with_overrides(req.dump());
  REQUIRE(r.status == 200);
  json j = parse(r);
  CHECK(j["overridden"] == json{"Couple Debt", "Loan Established"});
  CHECK(j["facts"][1]["overridden"] == true);
  CHECK(j["facts"][1]["memory_probability"] == 1.0);
  CHECK(j["facts"][0]["overridden"] == false);
  json plain = parse(f.service.predict(f.payload(0).dump()));
  for (std::size_t p = 0; p < kFactCount; ++p) CHECK(j["facts"][p]["probability"] == plain["facts"][p]["probability"]);
}

TEST_CASE("request errors map to status codes") {
  Fixture f;
  CHECK(f.service.predict("{nope").status == 400);
  CHECK(f.service.predict("[1,2]").status == 400);
  json missing = f.payload();
  missing.erase("claims");
  HttpResponse r = f.service.predict(missing.dump());
  CHECK(r.status == 400);
  CHECK(parse(r)["error"].get<std::string>().find("claims") != std::string::npos);
  json no_claims = f.payload();
  no_claims["claims"] = json::array();
  CHECK(f.service.predict(no_claims.dump()).status == 422);
  json silent = f.payload();
  silent["utterances"] = json::array();
  CHECK(f.service.predict(silent.dump()).status == 422);

  json bad_label{{"case", f.payload()}, {"overrides", {{"Weather", 1.0}}}};
  HttpResponse b = f.service.predict_with_overrides(bad_label.dump());
  CHECK(b.status == 400);
  CHECK(parse(b)["error"].get<std::string>().find("Weather") != std::string::npos);
  json out_of_range{{"case", f.payload()}, {"overrides", {{"Couple Debt", 1.5}}}};
  CHECK(f.service.predict_with_overrides(out_of_range.dump()).status == 400);
  json not_number{{"case", f.payload()}, {"overrides", {{"Couple Debt", "yes"}}}};
  CHECK(f.service.predict_with_overrides(not_number.dump()).status == 400);
  CHECK(f.service.predict_with_overrides(json{{"overrides", json::object()}}.dump()).status == 400);

  PredictionService empty;
  CHECK(empty.predict(f.payload().dump()).status == 503);
  CHECK(empty.model_info().status == 503);
  CHECK(!empty.loaded());
}

TEST_CASE("overrides on a model without fact memory are refused") {
  const auto cases = synth_generate(32, 2);
  Ablation ab;
  ab.no_fact_memory = true;
  PredictionService s(testing::random_model(cases, testing::tiny_config(1, ab), 3));
  json c = case_to_json(cases[0]);
  json req{{"case", c}, {"overrides", {{"Couple Debt", 1.0}}}};
  CHECK(s.predict_with_overrides(req.dump()).status == 422);
}

TEST_CASE("model info lists labels, dims and a hash that tracks parameters") {
  Fixture f;
  json info = parse(f.service.model_info());
  REQUIRE(info["fact_labels"].size() == 10);
  CHECK(info["fact_labels"][0] == "Agreed Loan Period");
  CHECK(info["fact_labels"][9] == "Loan Established");
  CHECK(info["judgment_labels"] == json{"reject", "partially_support", "support"});
  CHECK(info["parameter_count"] == f.model.parameter_count());
  CHECK(info["hops"] == 2);
  const std::string before = info["checkpoint_hash"];
  CHECK(before == checkpoint_hash(f.model));
  Model changed(f.model);
  changed.params().tensors()[3].mutable_data()[0] += 1e-9;
  CHECK(checkpoint_hash(changed) != before);
  f.service.set_model(std::move(changed));
  CHECK(parse(f.service.model_info())["checkpoint_hash"] != before);
}

TEST_CASE("loading a checkpoint serves the saved model") {
  Fixture f;
  const auto path = std::filesystem::temp_directory_path() / "msjudge_serve.ckpt";
  f.model.save(path);
  PredictionService s;
  s.load(path);
  std::filesystem::remove(path);
  CHECK(s.predict(f.payload().dump()).body == f.service.predict(f.payload().dump()).body);
}

TEST_CASE("HTTP routes answer over a real socket, concurrently") {
  Fixture f;
  httplib::Server server;
  mount_routes(server, f.service);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread loop([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const std::string body = f.payload(4).dump();
  auto res = client.Post("/predict", body, "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == f.service.predict(body).body);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  auto info = client.Get("/model/info");
  REQUIRE(info);
  CHECK(info->status == 200);
  auto bad = client.Post("/predict_with_overrides", "{}", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  std::vector<std::string> replies(8);
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < replies.size(); ++i)
    workers.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      if (auto r = c.Post("/predict", body, "application/json")) replies[i] = r->body;
    });
  for (auto& w : workers) w.join();
  for (const auto& r : replies) CHECK(r == res->body);

  server.stop();
  loop.join();
}
