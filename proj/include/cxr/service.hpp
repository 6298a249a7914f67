#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "cxr/error.hpp"
#include "cxr/labels.hpp"
#include "cxr/nnet.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/segbaseline.hpp"

namespace cxr {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path manifest;
    std::filesystem::path annotation_log;
    std::optional<std::filesystem::path> checkpoint;
    /// Defaults to `scores.jsonl` next to the annotation log.
    std::optional<std::filesystem::path> scores_log;
    GridSpec grid = GridSpec::sixteen();
    SegConfig seg;
};

enum class CaseStatus { Unread, InProgress, Labeled };
std::string_view to_string(CaseStatus s);

enum class WorklistOrder { Risk, Mean, Count };
WorklistOrder parse_worklist_order(std::string_view s);

struct WorklistEntry {
    std::string case_id;
    std::optional<double> risk;  // max patch probability; absent until scored
    std::optional<double> mean;
    std::optional<int> count_above;
    CaseStatus status = CaseStatus::Unread;
    std::optional<std::string> assigned_to;
    bool difficult = false;
};

nlohmann::json to_json(const WorklistEntry& e);

/// Risk-descending (or mean/count) order, ties by case id, unscored last.
void sort_worklist(std::vector<WorklistEntry>& entries, WorklistOrder order = WorklistOrder::Risk);

struct Request {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// HTTP status for an error category.
int http_status(ErrorCode code);

/// Annotation and triage state over one manifest. Reads take a shared lock;
/// log appends are serialized through a single writer, and scoring runs
/// outside the state lock.
class Service {
  public:
    explicit Service(ServiceConfig cfg);

    const ServiceConfig& config() const { return cfg_; }
    bool ready() const { return model_ != nullptr; }

    nlohmann::json case_detail(const std::string& id);
    AnnotationRecord annotate(const std::string& id, const nlohmann::json& body);
    /// unread -> in_progress with an assignee.
    WorklistEntry claim(const std::string& id, const std::string& annotator);
    std::vector<WorklistEntry> worklist(WorklistOrder order = WorklistOrder::Risk) const;
    std::vector<double> predict_case(const std::string& id);
    Image case_image(const std::string& id);
    Heatmap case_cam(const std::string& id, int patch);
    std::vector<AnnotationRecord> annotations(const std::string& id) const;

    /// Routes a request to the operations above; errors become JSON bodies.
    Response handle(const Request& req);

  private:
    struct Model {
        TinyResNet net;
        PreprocessConfig pp;
        double threshold = 0.9;
    };
    struct CaseState {
        CaseRecord record;
        std::vector<AnnotationRecord> annotations;
        std::optional<std::vector<double>> scores;
        CaseStatus status = CaseStatus::Unread;
        std::optional<std::string> assigned_to;
    };

    const CaseState& find(const std::string& id) const;
    std::shared_ptr<const CaseGeometry> geometry(const std::string& id);
    WorklistEntry entry_of(const CaseState& s) const;

    ServiceConfig cfg_;
    std::filesystem::path scores_log_;
    std::unique_ptr<const Model> model_;

    mutable std::shared_mutex mu_;
    std::map<std::string, CaseState> cases_;
    std::map<std::string, std::shared_ptr<const CaseGeometry>> geometry_;
    std::mutex writer_mu_;
};

/// HTTP front end forwarding every GET/POST to Service::handle.
class HttpServer {
  public:
    explicit HttpServer(Service& svc);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Port 0 picks a free port; returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void run();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Blocks serving `svc` over HTTP on cfg.host:cfg.port.
void serve_http(Service& svc);

}  // namespace cxr
