#pragma once

#include <map>
#include <string>
#include <vector>

#include "sali/world.hpp"

namespace sali::metrics {

struct EpisodeRecord {
  std::vector<int> trajectory;  // every traversed node, in order
  Vec3 stop_position = Vec3::Zero();
  int goal_node_id = -1;
  world::InstrCategory category = world::InstrCategory::Plain;
};

struct MetricsSummary {
  double ne = 0.0;   // meters
  double tl = 0.0;   // meters
  double sr = 0.0;   // {0,1} per episode
  double osr = 0.0;  // {0,1} per episode
  double spl = 0.0;  // [0,1]
};

constexpr double kSuccessRadius = 3.0;

MetricsSummary episode_metrics(const EpisodeRecord& record,
                               const world::WorldGraph& world,
                               double success_radius = kSuccessRadius);

struct AggregateReport {
  MetricsSummary mean;           // SR/OSR scaled to percentages
  int count = 0;
  std::map<std::string, MetricsSummary> by_category;  // keyed by S1/S2/S3/plain
  std::map<std::string, int> category_counts;
};

AggregateReport aggregate(const std::vector<EpisodeRecord>& records,
                          const std::vector<MetricsSummary>& summaries);

}  // namespace sali::metrics
