#ifndef CHUNKGEN_COLMAP_HPP
#define CHUNKGEN_COLMAP_HPP

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "chunkgen/geometry.hpp"

namespace chunkgen {

// COLMAP text-export model. Only PINHOLE and SIMPLE_PINHOLE camera models are
// accepted; anything else is rejected rather than silently approximated.
struct ColmapCamera {
    int id = 0;
    std::string model;
    CameraIntrinsics intrinsics;
};

struct ColmapImage {
    int id = 0;
    RigidTransform pose_cam_from_world;  // as stored on disk
    RigidTransform pose;                 // camera-to-world (inverse of the above)
    int camera_id = 0;
    std::string name;
};

struct ColmapPoint {
    uint64_t id = 0;
    Vec3 xyz;
    std::array<int, 3> rgb{0, 0, 0};
};

struct ColmapModel {
    std::map<int, ColmapCamera> cameras;
    std::vector<ColmapImage> images;
    std::vector<ColmapPoint> points;
};

namespace detail {

inline bool next_data_line(std::istream& is, std::string& line) {
    while (std::getline(is, line)) {
        size_t p = line.find_first_not_of(" \t\r");
        if (p == std::string::npos) continue;
        if (line[p] == '#') continue;
        return true;
    }
    return false;
}

}  // namespace detail

inline ColmapModel parse_colmap(const std::string& dir) {
    ColmapModel model;
    std::string line;

    {
        std::ifstream is(dir + "/cameras.txt");
        if (!is) throw FormatError("missing " + dir + "/cameras.txt");
        while (detail::next_data_line(is, line)) {
            std::istringstream ss(line);
            ColmapCamera cam;
            ss >> cam.id >> cam.model >> cam.intrinsics.width >> cam.intrinsics.height;
            if (!ss) throw FormatError("malformed camera line: " + line);
            if (cam.model == "PINHOLE") {
                ss >> cam.intrinsics.fx >> cam.intrinsics.fy >> cam.intrinsics.cx >>
                    cam.intrinsics.cy;
            } else if (cam.model == "SIMPLE_PINHOLE") {
                double f;
                ss >> f >> cam.intrinsics.cx >> cam.intrinsics.cy;
                cam.intrinsics.fx = cam.intrinsics.fy = f;
            } else {
                throw FormatError("unsupported camera model '" + cam.model +
                                  "' (only PINHOLE and SIMPLE_PINHOLE)");
            }
            if (!ss) throw FormatError("malformed camera params: " + line);
            cam.intrinsics.validate();
            model.cameras[cam.id] = cam;
        }
    }

    {
        std::ifstream is(dir + "/images.txt");
        if (!is) throw FormatError("missing " + dir + "/images.txt");
        while (detail::next_data_line(is, line)) {
            std::istringstream ss(line);
            ColmapImage img;
            double qw, qx, qy, qz;
            Vec3 t;
            ss >> img.id >> qw >> qx >> qy >> qz >> t.x >> t.y >> t.z >> img.camera_id >> img.name;
            if (!ss) throw FormatError("malformed image line: " + line);
            double qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
            if (std::abs(qn - 1.0) > 1e-6)
                throw FormatError(strfmt("image %d: quaternion norm %.8f not unit", img.id, qn));
            qw /= qn, qx /= qn, qy /= qn, qz /= qn;
            if (!model.cameras.count(img.camera_id))
                throw FormatError(strfmt("image %d references unknown camera %d", img.id,
                                         img.camera_id));
            img.pose_cam_from_world = {Mat3::from_quaternion(qw, qx, qy, qz), t};
            img.pose = img.pose_cam_from_world.inverse();
            model.images.push_back(img);
            // The trailing points2D line belongs to this image; skip it.
            std::getline(is, line);
        }
    }

    {
        std::ifstream is(dir + "/points3D.txt");
        if (!is) throw FormatError("missing " + dir + "/points3D.txt");
        while (detail::next_data_line(is, line)) {
            std::istringstream ss(line);
            ColmapPoint pt;
            ss >> pt.id >> pt.xyz.x >> pt.xyz.y >> pt.xyz.z >> pt.rgb[0] >> pt.rgb[1] >> pt.rgb[2];
            if (!ss) throw FormatError("malformed point line: " + line);
            if (!std::isfinite(pt.xyz.x) || !std::isfinite(pt.xyz.y) || !std::isfinite(pt.xyz.z))
                throw FormatError(strfmt("point %llu has non-finite coordinates",
                                         (unsigned long long)pt.id));
            model.points.push_back(pt);
        }
    }

    return model;
}

inline CameraView view_from_colmap(const ColmapModel& model, const ColmapImage& img) {
    CameraView v;
    v.intrinsics = model.cameras.at(img.camera_id).intrinsics;
    v.pose = img.pose;
    return v;
}

}  // namespace chunkgen

#endif
