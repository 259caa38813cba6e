#include "sali/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace sali::metrics {

MetricsSummary episode_metrics(const EpisodeRecord& record,
                               const world::WorldGraph& world, double success_radius) {
  if (record.trajectory.empty())
    fail(ErrorKind::Config, "episode trajectory must be nonempty");
  if (!world.has_node(record.goal_node_id))
    fail(ErrorKind::Lookup, "goal node not in world");
  const Vec3 goal = world.node(record.goal_node_id).position;

  MetricsSummary m;
  m.ne = (record.stop_position - goal).norm();
  for (size_t i = 0; i + 1 < record.trajectory.size(); ++i) {
    int a = record.trajectory[i];
    int b = record.trajectory[i + 1];
    double len = -1.0;
    for (const auto& [nb, w] : world.neighbors(a))
      if (nb == b) len = w;
    if (len < 0.0)
      fail(ErrorKind::Validation, "trajectory pair (" + std::to_string(a) + "," +
                                      std::to_string(b) + ") is not a world edge");
    m.tl += len;
  }
  m.sr = m.ne <= success_radius ? 1.0 : 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int id : record.trajectory)
    best = std::min(best, (world.node(id).position - goal).norm());
  m.osr = best <= success_radius ? 1.0 : 0.0;

  double l = world::shortest_path(world, record.trajectory.front(),
                                  record.goal_node_id)
                 .length;
  if (m.tl <= 0.0)
    m.spl = m.sr;
  else
    m.spl = m.sr * l / std::max(l, m.tl);
  return m;
}

AggregateReport aggregate(const std::vector<EpisodeRecord>& records,
                          const std::vector<MetricsSummary>& summaries) {
  if (records.empty() || records.size() != summaries.size())
    fail(ErrorKind::Config, "aggregate requires matching non-empty inputs");
  AggregateReport rep;
  rep.count = static_cast<int>(records.size());

  auto accumulate = [](MetricsSummary& acc, const MetricsSummary& m) {
    acc.ne += m.ne;
    acc.tl += m.tl;
    acc.sr += m.sr;
    acc.osr += m.osr;
    acc.spl += m.spl;
  };
  auto finish = [](MetricsSummary& acc, int n) {
    acc.ne /= n;
    acc.tl /= n;
    acc.sr = 100.0 * acc.sr / n;   // percentages
    acc.osr = 100.0 * acc.osr / n;
    acc.spl /= n;
  };

  for (size_t i = 0; i < records.size(); ++i) {
    accumulate(rep.mean, summaries[i]);
    std::string cat = world::category_name(records[i].category);
    accumulate(rep.by_category[cat], summaries[i]);
    rep.category_counts[cat] += 1;
  }
  finish(rep.mean, rep.count);
  for (auto& [cat, m] : rep.by_category) finish(m, rep.category_counts.at(cat));
  return rep;
}

}  // namespace sali::metrics
