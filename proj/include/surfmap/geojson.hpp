#pragma once

// GeoJSON FeatureCollection reading and writing for vector layers, and the
// topology report files.

#include "surfmap/util.hpp"
#include "surfmap/vector.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace surfmap {

namespace detail {

inline Point json_point(const nlohmann::json& j) {
    if (!j.is_array() || j.size() < 2) throw IoError("geojson: bad coordinate");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline std::vector<Point> json_points(const nlohmann::json& j) {
    if (!j.is_array()) throw IoError("geojson: bad coordinate list");
    std::vector<Point> out;
    out.reserve(j.size());
    for (const auto& p : j) out.push_back(json_point(p));
    return out;
}

inline Polygon json_polygon(const nlohmann::json& rings) {
    if (!rings.is_array() || rings.empty()) throw IoError("geojson: polygon without rings");
    Polygon p;
    p.exterior = json_points(rings[0]);
    for (std::size_t i = 1; i < rings.size(); ++i) p.holes.push_back(json_points(rings[i]));
    return p;
}

inline nlohmann::json points_json(const std::vector<Point>& pts) {
    auto a = nlohmann::json::array();
    for (const auto& p : pts) a.push_back({p.x, p.y});
    return a;
}

inline nlohmann::json polygon_json(const Polygon& p) {
    auto rings = nlohmann::json::array();
    rings.push_back(points_json(p.exterior));
    for (const auto& h : p.holes) rings.push_back(points_json(h));
    return rings;
}

inline std::string feature_id(const nlohmann::json& f, std::size_t index) {
    auto text = [](const nlohmann::json& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_integer()) return std::to_string(v.get<long long>());
        if (v.is_number()) return fmt_double(v.get<double>());
        return {};
    };
    if (f.contains("id")) {
        auto s = text(f["id"]);
        if (!s.empty()) return s;
    }
    if (f.contains("properties") && f["properties"].is_object() && f["properties"].contains("id")) {
        auto s = text(f["properties"]["id"]);
        if (!s.empty()) return s;
    }
    return "f" + std::to_string(index);
}

}  // namespace detail

inline VectorLayer parse_geojson(const std::string& text, LineSource default_source = LineSource::Hydro) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("geojson: ") + e.what());
    }
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features"))
        throw IoError("geojson: expected a FeatureCollection");
    VectorLayer layer;
    std::size_t index = 0;
    try {
        for (const auto& f : doc["features"]) {
            const std::string id = detail::feature_id(f, index++);
            const auto& props = f.contains("properties") && f["properties"].is_object() ? f["properties"] : nlohmann::json::object();
            GeologicClass cls = GeologicClass::None;
            if (props.contains("unit") && !props["unit"].is_null()) {
                const auto name = props["unit"].get<std::string>();
                const auto c = class_from_name(name);
                if (!c) throw IoError("geojson: feature " + id + " has unknown unit '" + name + "'");
                cls = *c;
            }
            LineSource source = default_source;
            if (props.contains("source") && props["source"].is_string())
                source = props["source"].get<std::string>() == "infra" ? LineSource::Infra : LineSource::Hydro;
            if (!f.contains("geometry") || f["geometry"].is_null()) continue;
            const auto& g = f["geometry"];
            const std::string type = g.value("type", "");
            const auto& coords = g["coordinates"];
            auto add_polygon = [&](const nlohmann::json& rings) {
                Polygon p = detail::json_polygon(rings);
                p.cls = cls;
                p.id = id;
                normalize_orientation(p);
                layer.polygons.push_back(std::move(p));
            };
            auto add_line = [&](const nlohmann::json& pts) {
                layer.lines.push_back({detail::json_points(pts), source, id});
            };
            if (type == "Polygon") add_polygon(coords);
            else if (type == "MultiPolygon")
                for (const auto& part : coords) add_polygon(part);
            else if (type == "LineString") add_line(coords);
            else if (type == "MultiLineString")
                for (const auto& part : coords) add_line(part);
            else throw IoError("geojson: unsupported geometry type '" + type + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("geojson: ") + e.what());
    }
    return layer;
}

inline VectorLayer read_geojson(const std::string& path, LineSource default_source = LineSource::Hydro) {
    try {
        return parse_geojson(read_text_file(path), default_source);
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

inline nlohmann::json layer_json(const VectorLayer& layer) {
    nlohmann::json doc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
    for (const auto& p : layer.polygons) {
        nlohmann::json props = nlohmann::json::object();
        if (p.cls != GeologicClass::None) props["unit"] = class_name(p.cls);
        doc["features"].push_back({{"type", "Feature"},
                                   {"id", p.id},
                                   {"properties", props},
                                   {"geometry", {{"type", "Polygon"}, {"coordinates", detail::polygon_json(p)}}}});
    }
    for (const auto& l : layer.lines) {
        doc["features"].push_back({{"type", "Feature"},
                                   {"id", l.id},
                                   {"properties", {{"source", l.source == LineSource::Infra ? "infra" : "hydro"}}},
                                   {"geometry", {{"type", "LineString"}, {"coordinates", detail::points_json(l.points)}}}});
    }
    return doc;
}

inline void write_geojson(const std::string& path, const VectorLayer& layer) {
    write_text_file(path, layer_json(layer).dump(1) + "\n");
}

/// One row per overlapping pair, then invalid rings with their reason.
inline void write_topology_report(const std::string& csv_path, const std::string& summary_path, const TopologyReport& rep, double tol) {
    std::string csv = "feature_id_a,feature_id_b,overlap_area\n";
    for (const auto& o : rep.overlaps) csv += o.feature_a + "," + o.feature_b + "," + fmt_double(o.area) + "\n";
    write_text_file(csv_path, csv);
    std::string s;
    s += "tolerance_sqft: " + fmt_double(tol) + "\n";
    s += "overlaps: " + std::to_string(rep.overlaps.size()) + "\n";
    s += "gap_area_sqft: " + fmt_double(rep.gap_area) + "\n";
    s += "invalid_rings: " + std::to_string(rep.invalid_rings.size()) + "\n";
    for (const auto& r : rep.invalid_rings) s += "  " + r.feature_id + ": " + r.reason + "\n";
    s += std::string("status: ") + (rep.empty() ? "clean" : "failed") + "\n";
    write_text_file(summary_path, s);
}

}  // namespace surfmap
