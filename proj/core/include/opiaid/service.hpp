#pragma once

// JSON-over-HTTP facade. Handlers are plain functions from a request body to
// a (status, body) pair so they can be exercised without a socket; serve()
// binds them to an HTTP server.
//
//   POST /v1/recommend   {"features": {...}, "weights"?: {...}, "treatment"?: "morphine",
//                         "observed"?: {"administered_dose_meq", "pain_0_1h", "orades"?}}
//   POST /v1/curve       {"features": {...}, "weights"?: {...}, "treatment"?: "morphine"}
//   GET  /v1/model       snapshot metadata
//   GET  /v1/diagnostics overlap table
//   GET  /v1/health      liveness
//   POST /v1/admin/load  {"model_artifact": path, "diagnostics"?: path}
//
// Errors: 400 {"error", "field", "message"} for malformed bodies, 409 when no
// model is loaded, 404 for unknown routes.

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "opiaid/cadr.hpp"
#include "opiaid/validation.hpp"

namespace opiaid {

struct ModelSnapshot {
    CadrModel model;
    std::optional<OverlapDiagnostic> diagnostics;
    // SHA-256 of the artifact bytes.
    std::string version_hash;
    std::string artifact_path;
};

// grid_override replaces the artifact's grid; it must lie inside it.
// Throws IoError, VersionMismatch, CorruptArtifact or ValidationError.
std::shared_ptr<const ModelSnapshot> make_snapshot(std::string_view artifact_bytes,
                                                   std::optional<std::string_view> diagnostics_json = std::nullopt,
                                                   const std::optional<DoseGrid>& grid_override = std::nullopt,
                                                   std::string artifact_path = {});
std::shared_ptr<const ModelSnapshot> load_snapshot(const std::filesystem::path& artifact,
                                                   const std::optional<std::filesystem::path>& diagnostics = std::nullopt,
                                                   const std::optional<DoseGrid>& grid_override = std::nullopt);

struct ServiceConfig {
    std::optional<DoseGrid> grid;
    UtilityWeights default_weights;
};

struct Response {
    int status = 200;
    std::string body;
};

class Service {
public:
    explicit Service(ServiceConfig config = {});

    // Whole-snapshot swap; requests in flight keep the snapshot they started with.
    void set_snapshot(std::shared_ptr<const ModelSnapshot> snapshot);
    std::shared_ptr<const ModelSnapshot> snapshot() const;

    Response recommend(std::string_view body) const;
    Response curve(std::string_view body) const;
    Response model_info() const;
    Response diagnostics() const;
    Response health() const;
    Response admin_load(std::string_view body);

    // Route dispatch used by serve() and by tests.
    Response handle(std::string_view method, std::string_view path, std::string_view body);

    const ServiceConfig& config() const { return config_; }

private:
    ServiceConfig config_;
    mutable std::mutex mutex_;
    std::shared_ptr<const ModelSnapshot> snapshot_;
    std::chrono::steady_clock::time_point started_;
};

// HTTP binding of a Service.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // port 0 picks a free port. Returns the bound port, or -1.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    bool listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// bind + listen. Returns false when the port cannot be bound.
bool serve(Service& service, const std::string& host, int port);

}  // namespace opiaid
