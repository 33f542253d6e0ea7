#include <cstdio>
#include <deque>
#include <set>
#include <sstream>

#include <Eigen/Geometry>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "partflow/errors.hpp"
#include "partflow/interop.hpp"

namespace partflow {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const Vec3& v) { return fmt(v.x()) + " " + fmt(v.y()) + " " + fmt(v.z()); }

std::string link_name(int i) { return "part_" + std::to_string(i); }

void write_box(std::ostringstream& os, const char* tag, const Aabb& box, const Vec3& frame) {
  os << "    <" << tag << ">\n"
     << "      <origin xyz=\"" << fmt(Vec3(box.center() - frame)) << "\" rpy=\"0 0 0\"/>\n"
     << "      <geometry><box size=\"" << fmt(Vec3(box.extent())) << "\"/></geometry>\n"
     << "    </" << tag << ">\n";
}

Vec3 parse_vec3(const std::string& s, const std::string& what) {
  std::istringstream is(s);
  Vec3 v;
  if (!(is >> v.x() >> v.y() >> v.z())) throw SchemaError(what, "expected three numbers, got '" + s + "'");
  return v;
}

Eigen::Matrix3d rpy_matrix(const Vec3& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

}  // namespace

std::string export_urdf(const ArticulatedObject& obj, const std::string& robot_name) {
  require_tree(obj);
  if (!is_depth1(obj)) throw StructuralError("URDF export needs a depth-1 kinematic tree");
  const auto base = obj.base_index();
  if (!base) throw StructuralError("URDF export needs exactly one base part");

  std::ostringstream os;
  os << "<?xml version=\"1.0\"?>\n<robot name=\"" << robot_name << "\">\n";
  for (int i = 0; i < static_cast<int>(obj.size()); ++i) {
    const auto& part = obj.parts[i];
    const Vec3 frame = i == *base ? Vec3::Zero() : part.joint.origin;
    os << "  <link name=\"" << link_name(i) << "\">\n";
    if (!part.geometry.empty()) {
      write_box(os, "visual", part.geometry.bounds, frame);
      write_box(os, "collision", part.geometry.bounds, frame);
    }
    os << "  </link>\n";
  }
  for (int i = 0; i < static_cast<int>(obj.size()); ++i) {
    if (i == *base) continue;
    const auto& joint = obj.parts[i].joint;
    os << "  <joint name=\"joint_" << i << "\" type=\"" << to_string(joint.type) << "\">\n"
       << "    <parent link=\"" << link_name(joint.parent) << "\"/>\n"
       << "    <child link=\"" << link_name(i) << "\"/>\n"
       << "    <origin xyz=\"" << fmt(joint.origin) << "\" rpy=\"0 0 0\"/>\n";
    if (joint.movable()) {
      os << "    <axis xyz=\"" << fmt(joint.axis) << "\"/>\n"
         << "    <limit lower=\"" << fmt(joint.range.lower) << "\" upper=\"" << fmt(joint.range.upper)
         << "\" effort=\"0\" velocity=\"0\"/>\n";
    }
    os << "  </joint>\n";
  }
  os << "</robot>\n";
  return os.str();
}

UrdfModel parse_urdf(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_xml(is, tree);
  } catch (const pt::xml_parser_error& e) {
    throw SchemaError("robot", std::string("malformed XML: ") + e.what());
  }
  const auto robot = tree.get_child_optional("robot");
  if (!robot) throw SchemaError("robot", "missing <robot> element");

  UrdfModel model;
  model.name = robot->get<std::string>("<xmlattr>.name", "");
  for (const auto& [tag, node] : *robot) {
    if (tag == "link") {
      model.links.push_back(node.get<std::string>("<xmlattr>.name"));
    } else if (tag == "joint") {
      UrdfJoint j;
      j.name = node.get<std::string>("<xmlattr>.name");
      j.type = node.get<std::string>("<xmlattr>.type");
      const std::string where = "joint " + j.name;
      j.parent = node.get<std::string>("parent.<xmlattr>.link");
      j.child = node.get<std::string>("child.<xmlattr>.link");
      j.xyz = parse_vec3(node.get<std::string>("origin.<xmlattr>.xyz", "0 0 0"), where + " origin");
      j.rpy = parse_vec3(node.get<std::string>("origin.<xmlattr>.rpy", "0 0 0"), where + " origin");
      j.axis = parse_vec3(node.get<std::string>("axis.<xmlattr>.xyz", "1 0 0"), where + " axis");
      j.lower = node.get<double>("limit.<xmlattr>.lower", 0.0);
      j.upper = node.get<double>("limit.<xmlattr>.upper", 0.0);
      model.joints.push_back(std::move(j));
    }
  }
  return model;
}

std::map<std::string, RigidTransform> urdf_link_poses(const UrdfModel& model, const std::map<std::string, double>& q) {
  std::set<std::string> children;
  for (const auto& j : model.joints) children.insert(j.child);
  std::map<std::string, RigidTransform> poses;
  std::deque<std::string> queue;
  for (const auto& l : model.links) {
    if (!children.count(l)) {
      poses[l] = RigidTransform::identity();
      queue.push_back(l);
    }
  }
  while (!queue.empty()) {
    const std::string link = queue.front();
    queue.pop_front();
    for (const auto& j : model.joints) {
      if (j.parent != link) continue;
      const RigidTransform origin{rpy_matrix(j.rpy), j.xyz};
      RigidTransform motion;
      const auto it = q.find(j.name);
      const double value = it == q.end() ? 0.0 : it->second;
      const Vec3 axis = j.axis.normalized();
      if (j.type == "revolute" || j.type == "continuous") {
        motion.rotation = Eigen::AngleAxisd(value, axis).toRotationMatrix();
      } else if (j.type == "prismatic") {
        motion.translation = value * axis;
      }
      poses[j.child] = poses[link].compose(origin).compose(motion);
      queue.push_back(j.child);
    }
  }
  return poses;
}

}  // namespace partflow
