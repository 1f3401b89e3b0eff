#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nasr/graph.hpp"
#include "nasr/model.hpp"
#include "nasr/observable_cost.hpp"
#include "nasr/search.hpp"
#include "nasr/trajectory.hpp"

namespace nasr {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Set overlap of intermediate locations. Throws ValidationError when the
// endpoints differ.
Prf prf(std::span<const LocationId> actual, std::span<const LocationId> predicted);

// Unit-cost Levenshtein distance between two sequences.
std::size_t levenshtein(std::span<const LocationId> a, std::span<const LocationId> b);

// Levenshtein distance between the intermediate sequences; endpoints must match.
std::size_t edit_distance(std::span<const LocationId> actual, std::span<const LocationId> predicted);

struct QueryOutcome {
  std::size_t trajectory = 0;
  Bucket bucket = Bucket::kExcluded;
  bool failed = false;
  std::string error;
  Prf scores;
  std::size_t edt = 0;
  std::vector<LocationId> predicted;
};

struct BucketSummary {
  Bucket bucket = Bucket::kShort;
  std::size_t n_queries = 0;
  std::size_t n_failed = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double edt = 0.0;
};

struct EvalReport {
  std::vector<BucketSummary> buckets;  // short, medium, long; only those with queries
  std::vector<QueryOutcome> queries;   // trajectories in excluded buckets are skipped

  const BucketSummary* find(Bucket b) const;
  // Mean over every scored query.
  double mean_f1() const;
};

// Searches every query of the given trajectories and scores the routes.
// Failed searches score (0, 0, 0) with edt = number of actual intermediates.
EvalReport evaluate(const RoadNetwork& net, const Model& model, const UserHistoryBank& bank, const Dataset& data,
                    std::span<const std::size_t> indices, const SearchConfig& cfg);

// bucket,n_queries,n_failed,precision,recall,f1,edt
void write_report_csv(std::ostream& out, const EvalReport& report);

}  // namespace nasr
