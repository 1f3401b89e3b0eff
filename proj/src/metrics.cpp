#include "nasr/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <set>

#include "nasr/errors.hpp"

namespace nasr {

namespace {

void check_endpoints(std::span<const LocationId> actual, std::span<const LocationId> predicted) {
  if (actual.size() < 2 || predicted.size() < 2) throw ValidationError("routes need at least two locations");
  if (actual.front() != predicted.front() || actual.back() != predicted.back())
    throw ValidationError("routes do not share endpoints");
}

std::span<const LocationId> inner(std::span<const LocationId> r) { return r.subspan(1, r.size() - 2); }

}  // namespace

Prf prf(std::span<const LocationId> actual, std::span<const LocationId> predicted) {
  check_endpoints(actual, predicted);
  const auto a_in = inner(actual);
  const auto p_in = inner(predicted);
  const std::set<LocationId> a(a_in.begin(), a_in.end());
  const std::set<LocationId> p(p_in.begin(), p_in.end());
  if (a.empty() && p.empty()) return {1.0, 1.0, 1.0};
  std::size_t overlap = 0;
  for (LocationId l : p) overlap += a.count(l);
  Prf r;
  r.precision = p.empty() ? 0.0 : static_cast<double>(overlap) / static_cast<double>(p.size());
  r.recall = a.empty() ? 0.0 : static_cast<double>(overlap) / static_cast<double>(a.size());
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::size_t levenshtein(std::span<const LocationId> a, std::span<const LocationId> b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t edit_distance(std::span<const LocationId> actual, std::span<const LocationId> predicted) {
  check_endpoints(actual, predicted);
  return levenshtein(inner(actual), inner(predicted));
}

const BucketSummary* EvalReport::find(Bucket b) const {
  for (const auto& s : buckets)
    if (s.bucket == b) return &s;
  return nullptr;
}

double EvalReport::mean_f1() const {
  if (queries.empty()) return 0.0;
  double s = 0.0;
  for (const auto& q : queries) s += q.scores.f1;
  return s / static_cast<double>(queries.size());
}

EvalReport evaluate(const RoadNetwork& net, const Model& model, const UserHistoryBank& bank, const Dataset& data,
                    std::span<const std::size_t> indices, const SearchConfig& cfg) {
  EvalReport report;
  for (std::size_t i : indices) {
    const Trajectory& t = data.trajectories.at(i);
    QueryOutcome o;
    o.trajectory = i;
    o.bucket = bucket(t);
    if (o.bucket == Bucket::kExcluded) continue;
    const auto [query, actual] = make_query(t);
    try {
      o.predicted = astar(net, model, query, bank, cfg).route();
      o.scores = prf(actual, o.predicted);
      o.edt = edit_distance(actual, o.predicted);
    } catch (const SearchError& e) {
      o.failed = true;
      o.error = e.what();
      o.scores = {};
      o.edt = actual.size() - 2;
    }
    report.queries.push_back(std::move(o));
  }
  for (Bucket b : {Bucket::kShort, Bucket::kMedium, Bucket::kLong}) {
    BucketSummary s;
    s.bucket = b;
    for (const auto& q : report.queries) {
      if (q.bucket != b) continue;
      ++s.n_queries;
      s.n_failed += q.failed ? 1 : 0;
      s.precision += q.scores.precision;
      s.recall += q.scores.recall;
      s.f1 += q.scores.f1;
      s.edt += static_cast<double>(q.edt);
    }
    if (s.n_queries == 0) continue;
    const auto n = static_cast<double>(s.n_queries);
    s.precision /= n;
    s.recall /= n;
    s.f1 /= n;
    s.edt /= n;
    report.buckets.push_back(s);
  }
  return report;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "bucket,n_queries,n_failed,precision,recall,f1,edt\n";
  out << std::setprecision(17);
  for (const auto& s : report.buckets)
    out << to_string(s.bucket) << ',' << s.n_queries << ',' << s.n_failed << ',' << s.precision << ',' << s.recall
        << ',' << s.f1 << ',' << s.edt << '\n';
}

}  // namespace nasr
