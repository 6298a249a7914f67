#include "cxr/labels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "cxr/error.hpp"
#include "cxr/random.hpp"

namespace cxr {

using nlohmann::json;
namespace chr = std::chrono;

std::string format_rfc3339(Timestamp t) {
    const auto day = chr::floor<chr::days>(t);
    const chr::year_month_day ymd{day};
    const auto ms_of_day = (t - day).count();
    const long long hh = ms_of_day / 3'600'000;
    const long long mm = ms_of_day / 60'000 % 60;
    const long long ss = ms_of_day / 1000 % 60;
    const long long ms = ms_of_day % 1000;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld.%03lldZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()), hh, mm, ss, ms);
    return buf;
}

namespace {

int take_digits(std::string_view text, std::size_t& pos, std::size_t n) {
    if (pos + n > text.size()) throw Error(ErrorCode::InvalidAnnotation, "timestamp too short: " + std::string(text));
    int v = 0;
    auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + n, v);
    if (ec != std::errc() || p != text.data() + pos + n)
        throw Error(ErrorCode::InvalidAnnotation, "bad digits in timestamp: " + std::string(text));
    pos += n;
    return v;
}

void expect(std::string_view text, std::size_t& pos, std::string_view chars) {
    if (pos >= text.size() || chars.find(text[pos]) == std::string_view::npos)
        throw Error(ErrorCode::InvalidAnnotation, "malformed RFC 3339 timestamp: " + std::string(text));
    ++pos;
}

}  // namespace

Timestamp parse_rfc3339(std::string_view text) {
    std::size_t pos = 0;
    const int year = take_digits(text, pos, 4);
    expect(text, pos, "-");
    const int month = take_digits(text, pos, 2);
    expect(text, pos, "-");
    const int day = take_digits(text, pos, 2);
    expect(text, pos, "Tt ");
    const int hour = take_digits(text, pos, 2);
    expect(text, pos, ":");
    const int minute = take_digits(text, pos, 2);
    expect(text, pos, ":");
    const int second = take_digits(text, pos, 2);
    long long millis = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        int digits = 0;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            if (digits < 3) millis = millis * 10 + (text[pos] - '0');
            ++digits;
            ++pos;
        }
        if (digits == 0) throw Error(ErrorCode::InvalidAnnotation, "empty fractional seconds: " + std::string(text));
        for (int d = digits; d < 3; ++d) millis *= 10;
    }
    long long offset_min = 0;
    if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
        ++pos;
    } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
        const int sign = text[pos] == '-' ? -1 : 1;
        ++pos;
        const int oh = take_digits(text, pos, 2);
        expect(text, pos, ":");
        const int om = take_digits(text, pos, 2);
        offset_min = sign * (oh * 60LL + om);
    } else {
        throw Error(ErrorCode::InvalidAnnotation, "timestamp lacks a UTC offset: " + std::string(text));
    }
    if (pos != text.size()) throw Error(ErrorCode::InvalidAnnotation, "trailing characters in timestamp: " + std::string(text));

    const chr::year_month_day ymd{chr::year{year}, chr::month{unsigned(month)}, chr::day{unsigned(day)}};
    if (!ymd.ok() || hour > 23 || minute > 59 || second > 60)
        throw Error(ErrorCode::InvalidAnnotation, "timestamp out of range: " + std::string(text));
    const auto local = chr::sys_days{ymd} + chr::hours{hour} + chr::minutes{minute} + chr::seconds{second} +
                       chr::milliseconds{millis};
    return chr::time_point_cast<chr::milliseconds>(local - chr::minutes{offset_min});
}

std::string_view to_string(DataSource s) {
    switch (s) {
    case DataSource::NckuhLike: return "nckuh-like";
    case DataSource::VbdLike: return "vbd-like";
    case DataSource::MohwLike: return "mohw-like";
    case DataSource::Synthetic: return "synthetic";
    }
    return "synthetic";
}

std::string_view to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
    }
    return "unassigned";
}

DataSource parse_source(std::string_view s) {
    for (auto v : {DataSource::NckuhLike, DataSource::VbdLike, DataSource::MohwLike, DataSource::Synthetic})
        if (to_string(v) == s) return v;
    throw Error(ErrorCode::InvalidInput, "unknown data source '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
    for (auto v : {Split::Train, Split::Val, Split::Test, Split::Unassigned})
        if (to_string(v) == s) return v;
    throw Error(ErrorCode::InvalidInput, "unknown split '" + std::string(s) + "'");
}

PatchLabelVector assign_patch_labels(const PatchGrid& grid, const std::vector<NoduleBox>& nodules, LabelMode mode) {
    const auto rects = grid.all();
    PatchLabelVector labels(rects.size(), false);
    std::vector<std::string> uncovered;
    for (const auto& nodule : nodules) {
        std::int64_t best_area = 0;
        std::size_t best = rects.size();
        for (std::size_t i = 0; i < rects.size(); ++i) {
            const auto area = intersection_area(rects[i], nodule.rect);
            if (area <= 0) continue;
            if (mode == LabelMode::AllIntersecting) labels[i] = true;
            if (area > best_area) {
                best_area = area;
                best = i;
            }
        }
        if (best == rects.size()) {
            uncovered.push_back(nodule.id);
            continue;
        }
        labels[best] = true;
    }
    if (!uncovered.empty()) throw UncoveredNoduleError(std::move(uncovered));
    return labels;
}

std::vector<CaseRecord> split_cases(std::vector<CaseRecord> cases, std::uint64_t seed, int train_parts, int val_parts) {
    if (cases.empty()) throw Error(ErrorCode::InvalidInput, "cannot split an empty case list");
    if (train_parts <= 0 || val_parts <= 0) throw Error(ErrorCode::InvalidConfig, "split ratio parts must be positive");
    const auto n = cases.size();
    const auto n_val = std::size_t(std::llround(double(n) * val_parts / (train_parts + val_parts)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t k = 0; k < n; ++k) cases[order[k]].split = k < n_val ? Split::Val : Split::Train;
    return cases;
}

void validate_annotation(const AnnotationRecord& a, const GridSpec& spec) {
    const int total = spec.total();
    for (int idx : a.positives)
        if (idx < 0 || idx >= total)
            throw Error(ErrorCode::InvalidAnnotation,
                        "patch index " + std::to_string(idx) + " outside grid of " + std::to_string(total));
    if (a.finished_at < a.started_at) throw Error(ErrorCode::InvalidAnnotation, "finished_at precedes started_at");
}

PatchLabelVector annotation_to_labels(const AnnotationRecord& a, const PatchGrid& grid) {
    if (!(a.grid_spec == grid.spec)) throw Error(ErrorCode::GridMismatch, "annotation grid spec differs from case grid");
    validate_annotation(a, grid.spec);
    PatchLabelVector labels(grid.size(), false);
    for (int idx : a.positives) labels[std::size_t(idx)] = true;
    return labels;
}

json to_json(const GridSpec& g) { return {{"cols", g.cols_per_lung}, {"rows", g.rows_per_lung}, {"overlap", g.overlap}}; }

GridSpec grid_spec_from_json(const json& j) {
    GridSpec g{j.at("cols").get<int>(), j.at("rows").get<int>(), j.at("overlap").get<double>()};
    g.validate();
    return g;
}

json to_json(const CaseRecord& c) {
    json nodules = json::array();
    for (const auto& n : c.nodules)
        nodules.push_back({{"id", n.id}, {"x", n.rect.x}, {"y", n.rect.y}, {"w", n.rect.w}, {"h", n.rect.h}});
    json j = {{"case_id", c.case_id}, {"image", c.image_path}};
    if (c.mask_path) j["mask"] = *c.mask_path;
    j["nodules"] = std::move(nodules);
    j["difficult"] = c.difficult;
    j["source"] = std::string(to_string(c.source));
    j["split"] = std::string(to_string(c.split));
    return j;
}

CaseRecord case_from_json(const json& j) {
    CaseRecord c;
    c.case_id = j.at("case_id").get<std::string>();
    c.image_path = j.at("image").get<std::string>();
    if (j.contains("mask") && !j["mask"].is_null()) c.mask_path = j["mask"].get<std::string>();
    for (const auto& n : j.value("nodules", json::array())) {
        NoduleBox box{{n.at("x").get<int>(), n.at("y").get<int>(), n.at("w").get<int>(), n.at("h").get<int>()},
                      n.value("id", std::string())};
        if (box.rect.empty())
            throw Error(ErrorCode::InvalidInput, "nodule '" + box.id + "' of case " + c.case_id + " has no area");
        c.nodules.push_back(std::move(box));
    }
    c.difficult = j.value("difficult", false);
    c.source = parse_source(j.value("source", std::string("synthetic")));
    c.split = parse_split(j.value("split", std::string("unassigned")));
    return c;
}

json to_json(const AnnotationRecord& a) {
    json j = {{"case_id", a.case_id},
              {"grid", to_json(a.grid_spec)},
              {"positives", std::vector<int>(a.positives.begin(), a.positives.end())},
              {"annotator", a.annotator},
              {"started_at", format_rfc3339(a.started_at)},
              {"finished_at", format_rfc3339(a.finished_at)},
              {"duration_ms", a.duration_ms()}};
    if (a.received_at) j["received_at"] = format_rfc3339(*a.received_at);
    return j;
}

AnnotationRecord annotation_from_json(const json& j) {
    AnnotationRecord a;
    a.case_id = j.at("case_id").get<std::string>();
    a.grid_spec = grid_spec_from_json(j.at("grid"));
    for (const auto& p : j.at("positives")) a.positives.insert(p.get<int>());
    a.annotator = j.value("annotator", std::string());
    a.started_at = parse_rfc3339(j.at("started_at").get<std::string>());
    a.finished_at = parse_rfc3339(j.at("finished_at").get<std::string>());
    if (j.contains("received_at")) a.received_at = parse_rfc3339(j["received_at"].get<std::string>());
    return a;
}

namespace {

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidInput, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        try {
            f(j);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidInput, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace

std::vector<CaseRecord> read_manifest(const std::filesystem::path& path) {
    std::vector<CaseRecord> cases;
    std::unordered_set<std::string> seen;
    for_each_line(path, [&](const json& j) {
        auto c = case_from_json(j);
        if (!seen.insert(c.case_id).second)
            throw Error(ErrorCode::InvalidInput, "duplicate case_id '" + c.case_id + "' in " + path.string());
        cases.push_back(std::move(c));
    });
    return cases;
}

void write_manifest(const std::vector<CaseRecord>& cases, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    for (const auto& c : cases) out << to_json(c).dump() << '\n';
}

std::filesystem::path resolve_manifest_path(const std::filesystem::path& manifest, const std::string& entry) {
    std::filesystem::path p(entry);
    if (p.is_absolute()) return p;
    return manifest.parent_path() / p;
}

std::vector<AnnotationRecord> read_annotation_log(const std::filesystem::path& path) {
    std::vector<AnnotationRecord> out;
    if (!std::filesystem::exists(path)) return out;
    for_each_line(path, [&](const json& j) { out.push_back(annotation_from_json(j)); });
    return out;
}

void append_annotation(const std::filesystem::path& path, const AnnotationRecord& a) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error(ErrorCode::Io, "cannot append to " + path.string());
    out << to_json(a).dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

}  // namespace cxr
