#include "doctest.h"

#include <atomic>
#include <fstream>
#include <thread>

#include "httplib.h"

#include "cxr/random.hpp"
#include "cxr/service.hpp"
#include "cxr/synthetic.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cxr;
using nlohmann::json;

namespace {

struct Fixture {
    TempDir dir{"svc"};
    std::vector<CaseRecord> cases;

    Fixture() {
        cases = generate_synthetic(4, 7, dir.path(), true);
        // one case whose image cannot be segmented
        save_pgm(Image(64, 64, 128), dir / "images/flat.pgm");
        CaseRecord flat;
        flat.case_id = "flat";
        flat.image_path = "images/flat.pgm";
        auto all = cases;
        all.push_back(flat);
        write_manifest(all, dir / "manifest.jsonl");
    }

    ServiceConfig config(bool with_model = false) {
        ServiceConfig c;
        c.manifest = dir / "manifest.jsonl";
        c.annotation_log = dir / "annotations.jsonl";
        if (with_model) {
            const auto ckpt = dir / "model.json";
            if (!std::filesystem::exists(ckpt)) {
                PreprocessConfig pp;
                pp.patch_size = 24;
                Checkpoint ck{TinyResNet::initialized(1, 2, 3), TrainConfig{}, std::nullopt, pp.to_json()};
                save_checkpoint(ck, ckpt);
            }
            c.checkpoint = ckpt;
        }
        return c;
    }
};

Request get(const std::string& path, std::map<std::string, std::string> query = {}) {
    return {"GET", path, std::move(query), ""};
}

Request post(const std::string& path, const json& body) { return {"POST", path, {}, body.dump()}; }

json annotation_body(std::vector<int> positives, const std::string& annotator = "dr-a") {
    return {{"positives", positives},
            {"annotator", annotator},
            {"started_at", "2024-03-01T10:00:00.000Z"},
            {"finished_at", "2024-03-01T10:00:07.500Z"}};
}

std::size_t line_count(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) return 0;
    const std::string s = oracle::slurp(p);
    return std::size_t(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("worklist ordering examples") {
    std::vector<WorklistEntry> e{{"A", 0.2}, {"B", 0.9}};
    sort_worklist(e);
    CHECK(e[0].case_id == "B");
    CHECK(e[1].case_id == "A");

    std::vector<WorklistEntry> ties{{"c", 0.5}, {"a", 0.5}, {"b", 0.5}};
    sort_worklist(ties);
    CHECK(ties[0].case_id == "a");
    CHECK(ties[2].case_id == "c");

    std::vector<WorklistEntry> unscored{{"a"}, {"z", 0.1}, {"m", 0.05}};
    sort_worklist(unscored);
    CHECK(unscored[0].case_id == "z");
    CHECK(unscored[1].case_id == "m");
    CHECK(unscored[2].case_id == "a");

    std::vector<WorklistEntry> by_count{{"a", 0.99, 0.2, 1}, {"b", 0.95, 0.5, 3}};
    sort_worklist(by_count, WorklistOrder::Count);
    CHECK(by_count[0].case_id == "b");
    sort_worklist(by_count, WorklistOrder::Risk);
    CHECK(by_count[0].case_id == "a");
    CHECK(code_of([] { parse_worklist_order("alpha"); }) == ErrorCode::InvalidInput);
}

TEST_CASE("ordering is a total order independent of input permutation") {
    Rng rng(4);
    std::vector<WorklistEntry> base;
    for (int i = 0; i < 40; ++i) {
        WorklistEntry e;
        e.case_id = "c" + std::to_string(i);
        if (rng.bernoulli(0.8)) e.risk = double(rng.uniform_int(0, 5)) / 5;
        base.push_back(e);
    }
    auto sorted = base;
    sort_worklist(sorted);
    for (int k = 0; k < 20; ++k) {
        auto shuffled = base;
        rng.shuffle(std::span<WorklistEntry>(shuffled));
        sort_worklist(shuffled);
        for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(shuffled[i].case_id == sorted[i].case_id);
    }
}

TEST_CASE("error codes map to HTTP statuses") {
    CHECK(http_status(ErrorCode::NotFound) == 404);
    CHECK(http_status(ErrorCode::ServiceNotReady) == 503);
    CHECK(http_status(ErrorCode::GridMismatch) == 409);
    CHECK(http_status(ErrorCode::SegmentationFailed) == 409);
    CHECK(http_status(ErrorCode::InvalidAnnotation) == 400);
    CHECK(http_status(ErrorCode::Io) == 500);
}

TEST_CASE("case detail serves the build_grid rects") {
    Fixture f;
    Service svc(f.config());
    const auto r = svc.handle(get("/cases/case_0001"));
    REQUIRE(r.status == 200);
    const json j = json::parse(r.body);
    const SyntheticCase sc = make_synthetic_case(7, 1);
    const PatchGrid g = build_grid(sc.left_lung, sc.right_lung, GridSpec::sixteen());
    REQUIRE(j["rects"].size() == 16);
    for (std::size_t i = 0; i < 16; ++i) {
        const auto& jr = j["rects"][i];
        CHECK(Rect{jr["x"], jr["y"], jr["w"], jr["h"]} == g.at(i));
        CHECK(jr["patch_index"] == i);
        CHECK(jr["lung"] == (i < 8 ? "left" : "right"));
    }
    CHECK(j["grid"] == to_json(GridSpec::sixteen()));
    CHECK(j["status"] == "unread");
    CHECK(j["mask_source"] == "file");
    CHECK(j["width"] == 256);
    CHECK_FALSE(j.contains("scores"));
    CHECK_FALSE(j.contains("cams"));

    std::vector<Rect> served;
    for (const auto& jr : j["rects"]) served.push_back({jr["x"], jr["y"], jr["w"], jr["h"]});
    const Rect l{j["lungs"]["left"]["x"], j["lungs"]["left"]["y"], j["lungs"]["left"]["w"], j["lungs"]["left"]["h"]};
    CHECK(oracle::pixel_sweep_covers(std::vector<Rect>(served.begin(), served.begin() + 8), l));

    const auto img = svc.handle(get("/cases/case_0001/image"));
    CHECK(img.status == 200);
    CHECK(img.content_type == "image/x-portable-graymap");
    CHECK(parse_pgm(std::vector<std::uint8_t>(img.body.begin(), img.body.end())) == sc.image);
}

TEST_CASE("unknown ids, routes and unsegmentable cases") {
    Fixture f;
    Service svc(f.config());
    const auto nf = svc.handle(get("/cases/nope"));
    CHECK(nf.status == 404);
    CHECK(json::parse(nf.body)["error"] == "not-found");
    CHECK(svc.handle(get("/nothing/here")).status == 404);
    CHECK(svc.handle(post("/cases/nope/annotations", annotation_body({1}))).status == 404);
    const auto seg = svc.handle(get("/cases/flat"));
    CHECK(seg.status == 409);
    CHECK(json::parse(seg.body)["message"].get<std::string>().find("flat") != std::string::npos);
    CHECK(svc.handle(get("/worklist", {{"order", "alpha"}})).status == 400);
}

TEST_CASE("annotations persist and validate") {
    Fixture f;
    const auto cfg = f.config();
    Service svc(cfg);
    const auto r = svc.handle(post("/cases/case_0002/annotations", annotation_body({3})));
    REQUIRE(r.status == 201);
    const json rec = json::parse(r.body);
    CHECK(rec["positives"] == json::array({3}));
    CHECK(rec["duration_ms"] == 7500);
    CHECK(rec.contains("received_at"));
    CHECK(line_count(cfg.annotation_log) == 1);

    const json listed = json::parse(svc.handle(get("/cases/case_0002/annotations")).body);
    REQUIRE(listed.size() == 1);
    CHECK(listed[0] == rec);
    const json detail = json::parse(svc.handle(get("/cases/case_0002")).body);
    CHECK(detail["status"] == "labeled");
    CHECK(detail["annotations"][0] == rec);

    CHECK(svc.handle(post("/cases/case_0002/annotations", annotation_body({99}))).status == 400);
    auto backwards = annotation_body({1});
    std::swap(backwards["started_at"], backwards["finished_at"]);
    CHECK(svc.handle(post("/cases/case_0002/annotations", backwards)).status == 400);
    auto six = annotation_body({1});
    six["grid"] = to_json(GridSpec::six());
    const auto stale = svc.handle(post("/cases/case_0002/annotations", six));
    CHECK(stale.status == 409);
    CHECK(json::parse(stale.body)["error"] == "grid-mismatch");
    CHECK(svc.handle(Request{"POST", "/cases/case_0002/annotations", {}, "{oops"}).status == 400);
    auto wrong_case = annotation_body({1});
    wrong_case["case_id"] = "case_0001";
    CHECK(svc.handle(post("/cases/case_0002/annotations", wrong_case)).status == 400);
    CHECK(line_count(cfg.annotation_log) == 1);

    // a second annotator on the same case is kept alongside the first
    CHECK(svc.handle(post("/cases/case_0002/annotations", annotation_body({}, "dr-b"))).status == 201);
    CHECK(svc.annotations("case_0002").size() == 2);
}

TEST_CASE("claims move unread cases to in progress") {
    Fixture f;
    Service svc(f.config());
    const auto r = svc.handle(post("/cases/case_0000/claim", {{"annotator", "dr-a"}}));
    REQUIRE(r.status == 200);
    CHECK(json::parse(r.body)["status"] == "in_progress");
    CHECK(json::parse(r.body)["assigned_to"] == "dr-a");
    CHECK(svc.handle(post("/cases/case_0000/claim", {{"annotator", "dr-a"}})).status == 200);
    CHECK(svc.handle(post("/cases/case_0000/claim", {{"annotator", "dr-b"}})).status == 409);
    CHECK(svc.handle(post("/cases/case_0000/claim", json::object())).status == 400);
    CHECK(svc.handle(post("/cases/case_0000/annotations", annotation_body({2}))).status == 201);
    CHECK(svc.handle(post("/cases/case_0000/claim", {{"annotator", "dr-a"}})).status == 409);
}

TEST_CASE("prediction needs a model") {
    Fixture f;
    Service svc(f.config());
    CHECK_FALSE(svc.ready());
    const auto r = svc.handle(post("/predict/case_0000", json::object()));
    CHECK(r.status == 503);
    CHECK(json::parse(r.body)["error"] == "service-not-ready");
    CHECK(svc.handle(get("/cases/case_0000/cam/0")).status == 503);
}

TEST_CASE("prediction scores, worklist risk and replay") {
    Fixture f;
    const auto cfg = f.config(true);
    json first_worklist;
    std::vector<json> details;
    {
        Service svc(cfg);
        CHECK(svc.ready());
        const auto a = svc.handle(post("/predict/case_0001", json::object()));
        REQUIRE(a.status == 200);
        const json ja = json::parse(a.body);
        REQUIRE(ja["scores"].size() == 16);
        const auto b = svc.predict_case("case_0001");
        CHECK(ja["scores"].get<std::vector<double>>() == b);
        CHECK(ja["risk"] == *std::max_element(b.begin(), b.end()));
        svc.predict_case("case_0003");
        CHECK(svc.handle(post("/predict/flat", json::object())).status == 409);
        CHECK(svc.handle(post("/predict/nope", json::object())).status == 404);

        const auto wl = svc.worklist();
        REQUIRE(wl.size() == 5);
        CHECK(wl[0].risk.has_value());
        CHECK(wl[1].risk.has_value());
        CHECK(*wl[0].risk >= *wl[1].risk);
        CHECK_FALSE(wl[2].risk.has_value());
        CHECK(wl[2].case_id == "case_0000");

        const json detail = json::parse(svc.handle(get("/cases/case_0001")).body);
        CHECK(detail["scores"].get<std::vector<double>>() == b);
        REQUIRE(detail["cams"].size() == 16);
        const auto cam_r = svc.handle(get(detail["cams"][5].get<std::string>()));
        REQUIRE(cam_r.status == 200);
        const Image heat = parse_pgm(std::vector<std::uint8_t>(cam_r.body.begin(), cam_r.body.end()));
        CHECK(heat.width == 24);
        CHECK(svc.handle(get("/cases/case_0001/cam/16")).status == 404);
        CHECK(svc.handle(get("/cases/case_0001/cam/x")).status == 404);

        CHECK(svc.handle(post("/cases/case_0003/annotations", annotation_body({4, 9}))).status == 201);
        CHECK(svc.handle(post("/cases/case_0000/annotations", annotation_body({}))).status == 201);
        first_worklist = json::parse(svc.handle(get("/worklist")).body);
        for (const auto& c : f.cases) details.push_back(json::parse(svc.handle(get("/cases/" + c.case_id)).body));
    }
    Service again(cfg);
    CHECK(json::parse(again.handle(get("/worklist")).body) == first_worklist);
    for (std::size_t i = 0; i < f.cases.size(); ++i)
        CHECK(json::parse(again.handle(get("/cases/" + f.cases[i].case_id)).body) == details[i]);
    CHECK(again.annotations("case_0003").at(0).positives == std::set<int>{4, 9});

    // scores recorded on another grid are not served
    auto six = cfg;
    six.grid = GridSpec::six();
    Service other(six);
    CHECK_FALSE(json::parse(other.handle(get("/cases/case_0001")).body).contains("scores"));
    CHECK(json::parse(other.handle(get("/cases/case_0001")).body)["rects"].size() == 6);
}

TEST_CASE("concurrent annotators and readers") {
    Fixture f;
    const auto cfg = f.config(true);
    Service svc(cfg);
    constexpr int kWriters = 4, kEach = 15;
    std::atomic<int> failures{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < kWriters; ++t)
        threads.emplace_back([&, t] {
            for (int i = 0; i < kEach; ++i) {
                const std::string id = f.cases[std::size_t((t + i) % 4)].case_id;
                if (svc.handle(post("/cases/" + id + "/annotations", annotation_body({t, i % 16}, "a" + std::to_string(t))))
                        .status != 201)
                    ++failures;
            }
        });
    threads.emplace_back([&] {
        for (int i = 0; i < 4; ++i)
            if (svc.handle(post("/predict/" + f.cases[std::size_t(i)].case_id, json::object())).status != 200) ++failures;
    });
    for (int t = 0; t < 2; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < 40; ++i) {
                if (svc.handle(get("/worklist")).status != 200) ++failures;
                if (svc.handle(get("/cases/" + f.cases[std::size_t(i % 4)].case_id)).status != 200) ++failures;
            }
        });
    for (auto& th : threads) th.join();
    CHECK(failures == 0);
    const auto log = read_annotation_log(cfg.annotation_log);
    CHECK(log.size() == std::size_t(kWriters * kEach));
    std::size_t served = 0;
    for (const auto& c : f.cases) served += svc.annotations(c.case_id).size();
    CHECK(served == log.size());
    Service replay(cfg);
    for (const auto& c : f.cases) {
        const auto a = svc.annotations(c.case_id), b = replay.annotations(c.case_id);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(to_json(a[i]) == to_json(b[i]));
    }
}

TEST_CASE("HTTP round trip on an ephemeral port") {
    Fixture f;
    Service svc(f.config());
    HttpServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread runner([&] { server.run(); });
    httplib::Client cli("127.0.0.1", port);
    cli.set_connection_timeout(5);

    auto health = cli.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(json::parse(health->body)["ready"] == false);

    auto detail = cli.Get("/cases/case_0000");
    REQUIRE(detail);
    CHECK(detail->status == 200);
    CHECK(json::parse(detail->body)["rects"].size() == 16);
    CHECK(detail->get_header_value("Access-Control-Allow-Origin") == "*");

    auto posted = cli.Post("/cases/case_0000/annotations", annotation_body({3, 7}).dump(), "application/json");
    REQUIRE(posted);
    CHECK(posted->status == 201);
    CHECK(json::parse(posted->body)["positives"] == json::array({3, 7}));

    auto wl = cli.Get("/worklist?order=risk");
    REQUIRE(wl);
    const json entries = json::parse(wl->body);
    CHECK(entries.size() == 5);
    CHECK(entries[0]["case_id"] == "case_0000");
    CHECK(entries[0]["status"] == "labeled");

    auto missing = cli.Get("/cases/none");
    REQUIRE(missing);
    CHECK(missing->status == 404);

    server.stop();
    runner.join();
}

}
