#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>

#include "json.hpp"
#include "msjudge/model.hpp"

namespace httplib {
class Server;
}

namespace msjudge {

inline constexpr int kSchemaVersion = 1;

enum class Bucket { certain, uncertain, other };

/// certain iff p > 0.7; uncertain iff 0.45 <= p <= 0.55; otherwise other.
Bucket certainty_bucket(double probability);
std::string_view bucket_name(Bucket b);

/// Hex digest of the parameter values and vocabulary.
std::string checkpoint_hash(const Model& model);

/// Body of a prediction response. `overridden` lists fact indices whose memory
/// probability was forced by the caller.
nlohmann::json prediction_json(const Model& model, const Case& c, const ForwardResult& result,
                               const std::set<std::size_t>& overridden = {});

struct HttpResponse {
  int status = 200;
  std::string body;
};

/// Transport-free request handlers. The loaded model is shared read-only; a
/// reload swaps it atomically, so in-flight requests finish on the old one.
class PredictionService {
 public:
  PredictionService() = default;
  explicit PredictionService(Model model);

  void load(const std::filesystem::path& checkpoint);
  void set_model(Model model);
  bool loaded() const;

  HttpResponse predict(std::string_view body) const;
  HttpResponse predict_with_overrides(std::string_view body) const;
  HttpResponse model_info() const;

 private:
  std::shared_ptr<const Model> current() const;

  mutable std::shared_mutex mutex_;
  std::shared_ptr<const Model> model_;
  std::string hash_;
};

/// Routes the service onto an httplib server. With `static_dir`, files under it
/// are served from "/".
void mount_routes(httplib::Server& server, PredictionService& service,
                  const std::optional<std::filesystem::path>& static_dir = std::nullopt);

}  // namespace msjudge
