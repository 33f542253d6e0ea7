#include "partflow/feature_cache.hpp"

#include "partflow/errors.hpp"

namespace partflow {

std::string_view to_string(FeatureSource s) { return s == FeatureSource::kStage1 ? "stage1" : "stage2"; }

FeatureSource parse_feature_source(std::string_view s) {
  if (s == "stage1") return FeatureSource::kStage1;
  if (s == "stage2") return FeatureSource::kStage2;
  throw SchemaError("source", "expected \"stage1\" or \"stage2\"");
}

void FeatureCache::put(int step, int part, Eigen::MatrixXd features) {
  entries_[{step, part}] = std::move(features);
}

const Eigen::MatrixXd& FeatureCache::at(int step, int part) const {
  auto it = entries_.find({step, part});
  if (it == entries_.end()) {
    throw ShapeError("no cached features for step " + std::to_string(step) + ", part " + std::to_string(part));
  }
  return it->second;
}

std::set<FeatureCache::Key> FeatureCache::keys() const {
  std::set<Key> out;
  for (const auto& e : entries_) out.insert(e.first);
  return out;
}

std::vector<int> FeatureCache::steps() const {
  std::set<int> s;
  for (const auto& e : entries_) s.insert(e.first.first);
  return {s.begin(), s.end()};
}

std::vector<int> FeatureCache::parts() const {
  std::set<int> s;
  for (const auto& e : entries_) s.insert(e.first.second);
  return {s.begin(), s.end()};
}

std::vector<int> FeatureCache::steps_for(int part) const {
  std::vector<int> out;
  for (const auto& e : entries_) {
    if (e.first.second == part) out.push_back(e.first.first);
  }
  return out;
}

FeatureCache FeatureCache::last_steps(int count) const {
  const auto all = steps();
  if (count < 1 || count > static_cast<int>(all.size())) {
    throw RangeError("cannot keep " + std::to_string(count) + " of " + std::to_string(all.size()) + " cached steps");
  }
  const int first = all[all.size() - count];
  FeatureCache out(source_);
  for (const auto& [key, m] : entries_) {
    if (key.first >= first) out.entries_.emplace(key, m);
  }
  return out;
}

nlohmann::json FeatureCache::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [key, m] : entries_) {
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    // Row-major so that each token's features are contiguous.
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(), m.rows(), m.cols()) = m;
    entries.push_back({{"step", key.first}, {"part", key.second}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
  }
  return {{"source", std::string(to_string(source_))}, {"entries", entries}};
}

FeatureCache FeatureCache::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("$", "feature cache must be an object");
  FeatureCache cache(parse_feature_source(j.value("source", std::string("stage2"))));
  if (!j.contains("entries") || !j["entries"].is_array()) throw SchemaError("entries", "missing entry array");
  for (std::size_t i = 0; i < j["entries"].size(); ++i) {
    const auto& e = j["entries"][i];
    const std::string path = "entries[" + std::to_string(i) + "]";
    try {
      const auto rows = e.at("rows").get<Eigen::Index>();
      const auto cols = e.at("cols").get<Eigen::Index>();
      const auto data = e.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw SchemaError(path + ".data", "length mismatch");
      Eigen::MatrixXd m =
          Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(data.data(), rows, cols);
      cache.put(e.at("step").get<int>(), e.at("part").get<int>(), std::move(m));
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(path, ex.what());
    }
  }
  return cache;
}

}  // namespace partflow
