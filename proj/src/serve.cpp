#include "msjudge/serve.hpp"

#include <cstdio>
#include <mutex>

#include "httplib.h"

namespace msjudge {

using nlohmann::json;

Bucket certainty_bucket(double p) {
  if (p > 0.7) return Bucket::certain;
  if (p >= 0.45 && p <= 0.55) return Bucket::uncertain;
  return Bucket::other;
}

std::string_view bucket_name(Bucket b) {
  switch (b) {
    case Bucket::certain: return "certain";
    case Bucket::uncertain: return "uncertain";
    case Bucket::other: return "other";
  }
  return "other";
}

std::string checkpoint_hash(const Model& model) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(model.fingerprint()),
                static_cast<unsigned long long>(model.vocab().fingerprint()));
  return buf;
}

json prediction_json(const Model& model, const Case& c, const ForwardResult& result,
                     const std::set<std::size_t>& overridden) {
  const ForwardTrace& t = result.trace;
  json claims = json::array();
  for (std::size_t j = 0; j < t.claim_probs.size(); ++j) {
    const auto& p = t.claim_probs[j];
    const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    claims.push_back({{"index", j},
                      {"text", c.claims[j].text},
                      {"probabilities", p},
                      {"label", kJudgmentLabels[best]}});
  }
  json facts = json::array();
  for (std::size_t f = 0; f < t.fact_probs.size(); ++f) {
    json entry{{"label", kFactLabels[f]},
               {"probability", t.fact_probs[f]},
               {"bucket", bucket_name(certainty_bucket(t.fact_probs[f]))},
               {"overridden", overridden.count(f) > 0}};
    entry["memory_probability"] = f < t.fact_memory_scale.size() ? json(t.fact_memory_scale[f]) : json(nullptr);
    facts.push_back(std::move(entry));
  }
  json hops = json::array();
  for (const auto& h : t.hops)
    hops.push_back({{"debate_to_claim", h.debate_to_claim},
                    {"fact_to_claim", h.fact_to_claim},
                    {"across_claim", h.across_claim}});
  json overridden_labels = json::array();
  for (auto f : overridden) overridden_labels.push_back(kFactLabels[f]);
  return {
      {"schema_version", kSchemaVersion},
      {"case_id", c.case_id},
      {"checkpoint_hash", checkpoint_hash(model)},
      {"judgment_labels", kJudgmentLabels},
      {"claims", claims},
      {"facts", facts},
      {"overridden", overridden_labels},
      {"attention",
       {{"utterance_word", t.utterance_word_attention},
        {"claim_word", t.claim_word_attention},
        {"debate_to_fact", t.debate_to_fact},
        {"hops", hops}}},
      {"truncated",
       {{"utterances", c.utterances.size() > model.config().limits.max_utterances},
        {"claims", c.claims.size() > model.config().limits.max_claims}}},
  };
}

namespace {

HttpResponse error(int status, const std::string& message) {
  return {status, json{{"schema_version", kSchemaVersion}, {"error", message}, {"status", status}}.dump()};
}

struct BadRequest {
  int status;
  std::string message;
};

json parse_body(std::string_view body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw BadRequest{400, std::string("request body is not valid JSON: ") + e.what()};
  }
}

Case parse_case(const json& j) {
  if (!j.is_object()) throw BadRequest{400, "case payload must be an object"};
  json payload = j;
  if (!payload.contains("case_id")) payload["case_id"] = "";
  Case c;
  try {
    c = case_from_json(payload, false);
  } catch (const ValidationError& e) {
    throw BadRequest{400, e.what()};
  }
  if (c.claims.empty()) throw BadRequest{422, "case has no claims"};
  if (c.utterances.empty()) throw BadRequest{422, "case has no utterances"};
  return c;
}

}  // namespace

PredictionService::PredictionService(Model model) { set_model(std::move(model)); }

void PredictionService::load(const std::filesystem::path& checkpoint) { set_model(Model::load(checkpoint)); }

void PredictionService::set_model(Model model) {
  auto next = std::make_shared<const Model>(std::move(model));
  std::string hash = checkpoint_hash(*next);
  std::unique_lock lock(mutex_);
  model_ = std::move(next);
  hash_ = std::move(hash);
}

bool PredictionService::loaded() const { return current() != nullptr; }

std::shared_ptr<const Model> PredictionService::current() const {
  std::shared_lock lock(mutex_);
  return model_;
}

HttpResponse PredictionService::predict(std::string_view body) const {
  auto model = current();
  if (!model) return error(503, "no model loaded");
  try {
    Case c = parse_case(parse_body(body));
    return {200, prediction_json(*model, c, model->infer(c)).dump()};
  } catch (const BadRequest& e) {
    return error(e.status, e.message);
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

HttpResponse PredictionService::predict_with_overrides(std::string_view body) const {
  auto model = current();
  if (!model) return error(503, "no model loaded");
  try {
    json j = parse_body(body);
    if (!j.is_object()) throw BadRequest{400, "request must be an object with 'case' and 'overrides'"};
    if (!j.contains("case")) throw BadRequest{400, "missing field 'case'"};
    Case c = parse_case(j["case"]);
    std::vector<std::pair<std::size_t, double>> overrides;
    std::set<std::size_t> overridden;
    if (auto it = j.find("overrides"); it != j.end() && !it->is_null()) {
      if (!it->is_object()) throw BadRequest{400, "field 'overrides' must map fact labels to probabilities"};
      for (const auto& [label, value] : it->items()) {
        auto index = fact_index(label);
        if (!index) throw BadRequest{400, "unknown fact label '" + label + "'"};
        if (!value.is_number()) throw BadRequest{400, "override for '" + label + "' must be a number"};
        const double p = value.get<double>();
        if (!(p >= 0.0 && p <= 1.0)) throw BadRequest{400, "override for '" + label + "' must lie in [0, 1]"};
        overrides.emplace_back(*index, p);
        overridden.insert(*index);
      }
    }
    if (!overrides.empty() && !model->config().ablation.fact_memory())
      throw BadRequest{422, "the loaded model has no fact memory to override"};
    return {200, prediction_json(*model, c, model->infer(c, overrides), overridden).dump()};
  } catch (const BadRequest& e) {
    return error(e.status, e.message);
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

HttpResponse PredictionService::model_info() const {
  std::shared_ptr<const Model> model;
  std::string hash;
  {
    std::shared_lock lock(mutex_);
    model = model_;
    hash = hash_;
  }
  if (!model) return error(503, "no model loaded");
  const ModelConfig& cfg = model->config();
  json info{{"schema_version", kSchemaVersion},
            {"dims", {{"word", cfg.word_dim}, {"role", cfg.ablation.no_role ? 0 : cfg.role_dim}, {"hidden", cfg.hidden}}},
            {"hops", cfg.hops},
            {"vocab_size", model->vocab().size()},
            {"parameter_count", model->parameter_count()},
            {"checkpoint_hash", hash},
            {"ablation", cfg.ablation.name()},
            {"fact_labels", kFactLabels},
            {"judgment_labels", kJudgmentLabels},
            {"limits", to_json(cfg)["limits"]}};
  return {200, info.dump()};
}

void mount_routes(httplib::Server& server, PredictionService& service,
                  const std::optional<std::filesystem::path>& static_dir) {
  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Post("/predict", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.predict(req.body));
  });
  server.Post("/predict_with_overrides", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.predict_with_overrides(req.body));
  });
  server.Get("/model/info", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.model_info());
  });
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  if (static_dir && !server.set_mount_point("/", static_dir->string()))
    throw ValidationError("static directory " + static_dir->string() + " does not exist");
}

}  // namespace msjudge
