#include "cxr/service.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "cxr/error.hpp"

namespace cxr {

using json = nlohmann::json;

std::string_view to_string(CaseStatus s) {
    switch (s) {
    case CaseStatus::Unread: return "unread";
    case CaseStatus::InProgress: return "in_progress";
    case CaseStatus::Labeled: return "labeled";
    }
    return "unread";
}

WorklistOrder parse_worklist_order(std::string_view s) {
    if (s == "risk") return WorklistOrder::Risk;
    if (s == "mean") return WorklistOrder::Mean;
    if (s == "count") return WorklistOrder::Count;
    throw Error(ErrorCode::InvalidInput, "unknown worklist order '" + std::string(s) + "' (risk|mean|count)");
}

json to_json(const WorklistEntry& e) {
    json j = {{"case_id", e.case_id},
              {"risk", e.risk ? json(*e.risk) : json(nullptr)},
              {"mean", e.mean ? json(*e.mean) : json(nullptr)},
              {"count_above", e.count_above ? json(*e.count_above) : json(nullptr)},
              {"status", std::string(to_string(e.status))},
              {"difficult", e.difficult}};
    if (e.assigned_to) j["assigned_to"] = *e.assigned_to;
    return j;
}

void sort_worklist(std::vector<WorklistEntry>& entries, WorklistOrder order) {
    auto key = [order](const WorklistEntry& e) -> std::optional<double> {
        switch (order) {
        case WorklistOrder::Mean: return e.mean;
        case WorklistOrder::Count:
            return e.count_above ? std::optional<double>(*e.count_above) : std::nullopt;
        case WorklistOrder::Risk: break;
        }
        return e.risk;
    };
    std::sort(entries.begin(), entries.end(), [&](const WorklistEntry& a, const WorklistEntry& b) {
        const auto ka = key(a), kb = key(b);
        if (ka.has_value() != kb.has_value()) return ka.has_value();
        if (ka && *ka != *kb) return *ka > *kb;
        return a.case_id < b.case_id;
    });
}

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::ServiceNotReady: return 503;
    case ErrorCode::GridMismatch:
    case ErrorCode::Conflict:
    case ErrorCode::SegmentationFailed:
    case ErrorCode::InsufficientComponents:
    case ErrorCode::MaskMismatch:
    case ErrorCode::InvalidBox: return 409;
    case ErrorCode::ParseMalformedHeader:
    case ErrorCode::ParseBadMaxval:
    case ErrorCode::ParseTruncated:
    case ErrorCode::Io: return 500;
    default: return 400;
    }
}

namespace {

struct ScoreRecord {
    std::string case_id;
    GridSpec grid;
    std::vector<double> scores;
};

std::vector<ScoreRecord> read_scores_log(const std::filesystem::path& path) {
    std::vector<ScoreRecord> out;
    if (!std::filesystem::exists(path)) return out;
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            out.push_back({j.at("case_id").get<std::string>(), grid_spec_from_json(j.at("grid")),
                           j.at("scores").get<std::vector<double>>()});
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidInput, path.string() + ": " + e.what());
        }
    }
    return out;
}

json rect_json(const Rect& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

}  // namespace

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.grid.validate();
    cfg_.seg.validate();
    scores_log_ = cfg_.scores_log ? *cfg_.scores_log : cfg_.annotation_log.parent_path() / "scores.jsonl";
    for (auto& c : read_manifest(cfg_.manifest)) {
        const std::string id = c.case_id;
        cases_[id].record = std::move(c);
    }
    for (auto& a : read_annotation_log(cfg_.annotation_log)) {
        auto it = cases_.find(a.case_id);
        if (it == cases_.end()) continue;  // case dropped from the manifest; the log stays intact
        it->second.status = CaseStatus::Labeled;
        it->second.assigned_to = a.annotator;
        it->second.annotations.push_back(std::move(a));
    }
    for (auto& s : read_scores_log(scores_log_)) {
        auto it = cases_.find(s.case_id);
        if (it == cases_.end() || !(s.grid == cfg_.grid)) continue;
        it->second.scores = std::move(s.scores);
    }
    if (cfg_.checkpoint) {
        Checkpoint ck = load_checkpoint(*cfg_.checkpoint);
        auto m = std::make_unique<Model>();
        m->net = std::move(ck.net);
        m->pp = PreprocessConfig::from_json(ck.preprocess);
        m->pp.grid = cfg_.grid;
        m->threshold = ck.config.threshold;
        model_ = std::move(m);
    }
}

const Service::CaseState& Service::find(const std::string& id) const {
    auto it = cases_.find(id);
    if (it == cases_.end()) throw Error(ErrorCode::NotFound, "unknown case '" + id + "'");
    return it->second;
}

std::shared_ptr<const CaseGeometry> Service::geometry(const std::string& id) {
    CaseRecord record;
    {
        std::shared_lock lock(mu_);
        auto it = geometry_.find(id);
        if (it != geometry_.end()) return it->second;
        record = find(id).record;
    }
    // segmentation runs unlocked; a racing duplicate computes the same result
    auto g = std::make_shared<const CaseGeometry>(locate_case(record, cfg_.manifest, cfg_.grid, cfg_.seg));
    std::unique_lock lock(mu_);
    return geometry_.emplace(id, std::move(g)).first->second;
}

WorklistEntry Service::entry_of(const CaseState& s) const {
    WorklistEntry e;
    e.case_id = s.record.case_id;
    e.status = s.status;
    e.assigned_to = s.assigned_to;
    e.difficult = s.record.difficult;
    if (s.scores && !s.scores->empty()) {
        const auto& v = *s.scores;
        e.risk = *std::max_element(v.begin(), v.end());
        double sum = 0.0;
        int above = 0;
        for (double p : v) {
            sum += p;
            above += p > (model_ ? model_->threshold : 0.9) ? 1 : 0;
        }
        e.mean = sum / double(v.size());
        e.count_above = above;
    }
    return e;
}

json Service::case_detail(const std::string& id) {
    const auto g = geometry(id);
    std::shared_lock lock(mu_);
    const CaseState& s = find(id);
    json rects = json::array();
    for (std::size_t i = 0; i < g->grid.size(); ++i) {
        json r = rect_json(g->grid.at(i));
        r["patch_index"] = i;
        r["lung"] = g->grid.lung_of(i) == 0 ? "left" : "right";
        rects.push_back(std::move(r));
    }
    json anns = json::array();
    for (const auto& a : s.annotations) anns.push_back(to_json(a));
    json j = {{"case_id", id},
              {"image", "/cases/" + id + "/image"},
              {"width", g->image.width},
              {"height", g->image.height},
              {"difficult", s.record.difficult},
              {"status", std::string(to_string(s.status))},
              {"grid", to_json(cfg_.grid)},
              {"lungs", {{"left", rect_json(g->boxes.left)}, {"right", rect_json(g->boxes.right)}}},
              {"mask_source", g->mask_from_file ? "file" : "segmentation"},
              {"rects", std::move(rects)},
              {"annotations", std::move(anns)}};
    if (s.assigned_to) j["assigned_to"] = *s.assigned_to;
    if (s.scores) j["scores"] = *s.scores;
    if (model_) {
        json cams = json::array();
        for (std::size_t i = 0; i < g->grid.size(); ++i) cams.push_back("/cases/" + id + "/cam/" + std::to_string(i));
        j["cams"] = std::move(cams);
    }
    return j;
}

AnnotationRecord Service::annotate(const std::string& id, const json& body) {
    {
        std::shared_lock lock(mu_);
        find(id);
    }
    if (!body.is_object()) throw Error(ErrorCode::InvalidInput, "annotation body must be an object");
    AnnotationRecord a;
    try {
        if (body.contains("case_id") && body["case_id"].get<std::string>() != id)
            throw Error(ErrorCode::InvalidInput, "body case_id does not match the request path");
        a.case_id = id;
        a.grid_spec = body.contains("grid") ? grid_spec_from_json(body["grid"]) : cfg_.grid;
        for (const auto& p : body.at("positives")) a.positives.insert(p.get<int>());
        a.annotator = body.value("annotator", std::string());
        a.started_at = parse_rfc3339(body.at("started_at").get<std::string>());
        a.finished_at = parse_rfc3339(body.at("finished_at").get<std::string>());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidInput, std::string("malformed annotation: ") + e.what());
    }
    if (!(a.grid_spec == cfg_.grid))
        throw Error(ErrorCode::GridMismatch, "annotation was made on a different grid than the one served");
    validate_annotation(a, cfg_.grid);
    a.received_at = std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());

    std::lock_guard writer(writer_mu_);
    append_annotation(cfg_.annotation_log, a);
    std::unique_lock lock(mu_);
    CaseState& s = cases_.at(id);
    s.annotations.push_back(a);
    s.status = CaseStatus::Labeled;
    if (!a.annotator.empty()) s.assigned_to = a.annotator;
    return a;
}

WorklistEntry Service::claim(const std::string& id, const std::string& annotator) {
    std::unique_lock lock(mu_);
    find(id);
    CaseState& s = cases_.at(id);
    if (s.status == CaseStatus::Labeled) throw Error(ErrorCode::Conflict, "case '" + id + "' is already labeled");
    if (s.status == CaseStatus::InProgress && s.assigned_to && *s.assigned_to != annotator)
        throw Error(ErrorCode::Conflict, "case '" + id + "' is assigned to " + *s.assigned_to);
    s.status = CaseStatus::InProgress;
    s.assigned_to = annotator;
    return entry_of(s);
}

std::vector<WorklistEntry> Service::worklist(WorklistOrder order) const {
    std::vector<WorklistEntry> out;
    {
        std::shared_lock lock(mu_);
        out.reserve(cases_.size());
        for (const auto& [id, s] : cases_) out.push_back(entry_of(s));
    }
    sort_worklist(out, order);
    return out;
}

std::vector<double> Service::predict_case(const std::string& id) {
    if (!model_) throw Error(ErrorCode::ServiceNotReady, "no model checkpoint loaded");
    std::shared_ptr<const CaseGeometry> g;
    try {
        g = geometry(id);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NotFound) throw;
        throw Error(e.code(), std::string(e.what()).starts_with("case ") ? e.what() : "case " + id + ": " + e.what());
    }
    std::vector<double> scores;
    for (const auto& x : extract_patches(g->image, g->grid, model_->pp))
        scores.push_back(predict(model_->net, x, model_->threshold).p_positive);

    std::lock_guard writer(writer_mu_);
    {
        std::ofstream out(scores_log_, std::ios::app);
        if (!out) throw Error(ErrorCode::Io, "cannot append to " + scores_log_.string());
        out << json{{"case_id", id}, {"grid", to_json(cfg_.grid)}, {"scores", scores}}.dump() << '\n';
        out.flush();
    }
    std::unique_lock lock(mu_);
    cases_.at(id).scores = scores;
    return scores;
}

Image Service::case_image(const std::string& id) { return geometry(id)->image; }

Heatmap Service::case_cam(const std::string& id, int patch) {
    if (!model_) throw Error(ErrorCode::ServiceNotReady, "no model checkpoint loaded");
    const auto g = geometry(id);
    if (patch < 0 || std::size_t(patch) >= g->grid.size())
        throw Error(ErrorCode::NotFound, "patch " + std::to_string(patch) + " not in grid");
    return cam(model_->net, preprocess_patch(g->image, g->grid.at(std::size_t(patch)), model_->pp), 1);
}

std::vector<AnnotationRecord> Service::annotations(const std::string& id) const {
    std::shared_lock lock(mu_);
    return find(id).annotations;
}

namespace {

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::size_t i = 0;
    while (i < path.size()) {
        const std::size_t j = path.find('/', i);
        const std::size_t end = j == std::string::npos ? path.size() : j;
        if (end > i) parts.push_back(path.substr(i, end - i));
        i = end + 1;
    }
    return parts;
}

Response json_response(const json& j, int status = 200) { return {status, "application/json", j.dump()}; }

Response pgm_response(const Image& img) {
    const auto bytes = encode_pgm(img);
    return {200, "image/x-portable-graymap", std::string(bytes.begin(), bytes.end())};
}

int parse_index(const std::string& s) {
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw Error(ErrorCode::NotFound, "bad patch index '" + s + "'");
    return v;
}

}  // namespace

Response Service::handle(const Request& req) {
    try {
        const auto parts = split_path(req.path);
        const bool get = req.method == "GET", post = req.method == "POST";
        if (get && parts.size() == 1 && parts[0] == "health")
            return json_response({{"ready", ready()}, {"cases", cases_.size()}});
        if (get && parts.size() == 1 && parts[0] == "worklist") {
            auto it = req.query.find("order");
            const auto order = parse_worklist_order(it == req.query.end() ? "risk" : it->second);
            json arr = json::array();
            for (const auto& e : worklist(order)) arr.push_back(to_json(e));
            return json_response(arr);
        }
        if (parts.size() >= 2 && parts[0] == "cases") {
            const std::string& id = parts[1];
            if (get && parts.size() == 2) return json_response(case_detail(id));
            if (get && parts.size() == 3 && parts[2] == "image") return pgm_response(case_image(id));
            if (get && parts.size() == 3 && parts[2] == "annotations") {
                json arr = json::array();
                for (const auto& a : annotations(id)) arr.push_back(to_json(a));
                return json_response(arr);
            }
            if (get && parts.size() == 4 && parts[2] == "cam") {
                const Heatmap h = case_cam(id, parse_index(parts[3]));
                Image img(h.width, h.height);
                for (std::size_t i = 0; i < h.values.size(); ++i)
                    img.data[i] = std::uint8_t(std::lround(std::clamp(h.values[i], 0.0, 1.0) * 255.0));
                return pgm_response(img);
            }
            if (post && parts.size() == 3 && parts[2] == "annotations") {
                json body;
                try {
                    body = json::parse(req.body);
                } catch (const json::exception& e) {
                    throw Error(ErrorCode::InvalidInput, std::string("body is not valid JSON: ") + e.what());
                }
                return json_response(to_json(annotate(id, body)), 201);
            }
            if (post && parts.size() == 3 && parts[2] == "claim") {
                const json body = req.body.empty() ? json::object() : json::parse(req.body, nullptr, false);
                if (!body.is_object() || !body.contains("annotator") || !body["annotator"].is_string())
                    throw Error(ErrorCode::InvalidInput, "claim needs {\"annotator\": name}");
                return json_response(to_json(claim(id, body["annotator"].get<std::string>())));
            }
        }
        if (post && parts.size() == 2 && parts[0] == "predict") {
            const auto scores = predict_case(parts[1]);
            json j = {{"case_id", parts[1]}, {"scores", scores}};
            j["risk"] = *std::max_element(scores.begin(), scores.end());
            return json_response(j);
        }
        return json_response({{"error", "not-found"}, {"message", req.method + " " + req.path + " is not a route"}}, 404);
    } catch (const Error& e) {
        return json_response({{"error", std::string(to_string(e.code()))}, {"message", e.what()}}, http_status(e.code()));
    } catch (const std::exception& e) {
        return json_response({{"error", "internal"}, {"message", e.what()}}, 500);
    }
}

}  // namespace cxr
