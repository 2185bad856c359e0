// Eigen before httplib: <resolv.h> defines _res, an Eigen parameter name.
#include "opiaid/io.hpp"
#include "opiaid/service.hpp"

#include <httplib.h>

namespace opiaid {

struct HttpServer::Impl {
    Service& service;
    httplib::Server server;

    explicit Impl(Service& s) : service(s) {
        const auto route = [this](const httplib::Request& req, httplib::Response& res) {
            const Response r = service.handle(req.method, req.path, req.body);
            res.status = r.status;
            res.set_content(r.body, "application/json");
        };
        for (const char* path : {"/v1/recommend", "/v1/curve", "/v1/admin/load"}) server.Post(path, route);
        for (const char* path : {"/v1/model", "/v1/diagnostics", "/v1/health"}) server.Get(path, route);
        // The browser client is served from elsewhere.
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
        server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });
        server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (!res.body.empty()) return;
            const Json body = {{"error", "not_found"}, {"field", ""}, {"message", "no route " + req.method + " " + req.path}};
            res.set_content(body.dump(), "application/json");
        });
    }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
}

bool serve(Service& service, const std::string& host, int port) {
    HttpServer server(service);
    if (server.bind(host, port) < 0) return false;
    return server.listen();
}

}  // namespace opiaid
