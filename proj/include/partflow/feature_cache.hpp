#pragma once

#include <map>
#include <set>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace partflow {

enum class FeatureSource { kStage1, kStage2 };

std::string_view to_string(FeatureSource s);
FeatureSource parse_feature_source(std::string_view s);

// Last-block token features H_i^t keyed by (denoising step, part).
class FeatureCache {
 public:
  using Key = std::pair<int, int>;  // (step, part)

  FeatureCache() = default;
  explicit FeatureCache(FeatureSource source) : source_(source) {}

  FeatureSource source() const { return source_; }
  void put(int step, int part, Eigen::MatrixXd features);
  bool contains(int step, int part) const { return entries_.count({step, part}) > 0; }
  const Eigen::MatrixXd& at(int step, int part) const;
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  std::set<Key> keys() const;
  std::vector<int> steps() const;
  std::vector<int> parts() const;
  std::vector<int> steps_for(int part) const;
  const std::map<Key, Eigen::MatrixXd>& entries() const { return entries_; }
  // Copy holding only the `count` largest step indices.
  FeatureCache last_steps(int count) const;

  nlohmann::json to_json() const;
  static FeatureCache from_json(const nlohmann::json& j);

  friend bool operator==(const FeatureCache& a, const FeatureCache& b) {
    return a.source_ == b.source_ && a.entries_ == b.entries_;
  }

 private:
  FeatureSource source_ = FeatureSource::kStage2;
  std::map<Key, Eigen::MatrixXd> entries_;
};

}  // namespace partflow
