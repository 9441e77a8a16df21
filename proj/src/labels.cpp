#include "m3net/labels.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace m3net {

using nlohmann::json;

void validate_labels(const VectorLabels& labels) {
    for (const auto& poly : labels.polygons) {
        if (poly.rings.empty()) throw ValidationError("polygon without rings");
        if (poly.cls != kClassBuilding && poly.cls != kClassFloodedBuilding)
            throw ValidationError("unknown label class '" + poly.cls + "'");
        for (const auto& ring : poly.rings) {
            if (ring.size() < 4)
                throw ValidationError("ring with " + std::to_string(ring.size()) + " vertices (need >= 4)");
            if (ring.front() != ring.back()) throw ValidationError("unclosed ring (first vertex != last)");
        }
    }
}

namespace {

Ring parse_ring(const json& coords) {
    Ring ring;
    for (const auto& pt : coords) ring.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    return ring;
}

json ring_to_json(const Ring& ring) {
    json out = json::array();
    for (const auto& pt : ring) out.push_back({pt[0], pt[1]});
    return out;
}

bool point_in_polygon(double px, double py, const LabeledPolygon& poly) {
    bool inside = false;
    for (const auto& ring : poly.rings) {
        size_t m = ring.size();
        // even-odd crossing number; the closing duplicate vertex contributes a
        // degenerate edge that never crosses
        for (size_t i = 0, j = m - 1; i < m; j = i++) {
            double yi = ring[i][1], yj = ring[j][1];
            if ((yi > py) != (yj > py)) {
                double t = (py - yi) / (yj - yi);
                if (px < ring[i][0] + t * (ring[j][0] - ring[i][0])) inside = !inside;
            }
        }
    }
    return inside;
}

}  // namespace

VectorLabels load_geojson(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open labels file: " + path.string());
    json doc = json::parse(is);
    if (doc.value("type", "") != "FeatureCollection")
        throw ValidationError("labels file is not a GeoJSON FeatureCollection: " + path.string());
    VectorLabels labels;
    for (const auto& feat : doc.at("features")) {
        std::string cls = feat.at("properties").at("class").get<std::string>();
        const json& geom = feat.at("geometry");
        std::string gtype = geom.at("type").get<std::string>();
        if (gtype == "Polygon") {
            LabeledPolygon poly;
            poly.cls = cls;
            for (const auto& ring : geom.at("coordinates")) poly.rings.push_back(parse_ring(ring));
            labels.polygons.push_back(std::move(poly));
        } else if (gtype == "MultiPolygon") {
            for (const auto& part : geom.at("coordinates")) {
                LabeledPolygon poly;
                poly.cls = cls;
                for (const auto& ring : part) poly.rings.push_back(parse_ring(ring));
                labels.polygons.push_back(std::move(poly));
            }
        } else {
            throw ValidationError("unsupported geometry type '" + gtype + "' in " + path.string());
        }
    }
    validate_labels(labels);
    return labels;
}

void save_geojson(const std::filesystem::path& path, const VectorLabels& labels) {
    validate_labels(labels);
    json features = json::array();
    for (const auto& poly : labels.polygons) {
        json rings = json::array();
        for (const auto& ring : poly.rings) rings.push_back(ring_to_json(ring));
        features.push_back({
            {"type", "Feature"},
            {"properties", {{"class", poly.cls}}},
            {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}},
        });
    }
    json doc = {{"type", "FeatureCollection"}, {"features", features}};
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write labels file: " + path.string());
    os << doc.dump(2) << "\n";
}

LabelGrid rasterize(const VectorLabels& labels, const GridSpec& grid, const std::string& cls) {
    if (grid.width < 1 || grid.height < 1 || !(grid.pixel_size > 0))
        throw ValidationError("rasterize: bad grid spec");
    validate_labels(labels);
    LabelGrid out;
    out.spec = grid;
    out.v.assign(static_cast<size_t>(grid.width * grid.height), 0);
    for (const auto& poly : labels.polygons) {
        if (poly.cls != cls) continue;
        // bounding box in pixel space limits the scan
        double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
        for (const auto& ring : poly.rings)
            for (const auto& pt : ring) {
                min_x = std::min(min_x, pt[0]);
                max_x = std::max(max_x, pt[0]);
                min_y = std::min(min_y, pt[1]);
                max_y = std::max(max_y, pt[1]);
            }
        int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor((min_x - grid.origin_x) / grid.pixel_size - 0.5)));
        int64_t c1 = std::min<int64_t>(grid.width - 1, static_cast<int64_t>(std::ceil((max_x - grid.origin_x) / grid.pixel_size)));
        int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor((grid.origin_y - max_y) / grid.pixel_size - 0.5)));
        int64_t r1 = std::min<int64_t>(grid.height - 1, static_cast<int64_t>(std::ceil((grid.origin_y - min_y) / grid.pixel_size)));
        for (int64_t r = r0; r <= r1; ++r) {
            double py = grid.origin_y - (static_cast<double>(r) + 0.5) * grid.pixel_size;
            for (int64_t c = c0; c <= c1; ++c) {
                double px = grid.origin_x + (static_cast<double>(c) + 0.5) * grid.pixel_size;
                if (point_in_polygon(px, py, poly)) out.v[r * grid.width + c] = 1;
            }
        }
    }
    return out;
}

}  // namespace m3net
