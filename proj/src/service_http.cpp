#include "httplib.h"

#include "cxr/error.hpp"
#include "cxr/service.hpp"

namespace cxr {

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(Service& svc) : impl_(std::make_unique<Impl>()) {
    auto forward = [&svc](const httplib::Request& hreq, httplib::Response& hres) {
        Request req{hreq.method, hreq.path, {}, hreq.body};
        for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
        const Response r = svc.handle(req);
        hres.status = r.status;
        hres.set_header("Access-Control-Allow-Origin", "*");
        hres.set_content(r.body, r.content_type);
    };
    auto& server = impl_->server;
    server.Get(R"(/.*)", forward);
    server.Post(R"(/.*)", forward);
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void serve_http(Service& svc) {
    HttpServer http(svc);
    http.bind(svc.config().host, svc.config().port);
    http.run();
}

}  // namespace cxr
