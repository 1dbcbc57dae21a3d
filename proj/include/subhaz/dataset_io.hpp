// Dataset directories: subjects.csv, sensor.csv, events.csv and samples.csv.
//
// Masked sensor values are written as NA. Every number uses the round-trip format, so
// write -> read -> write reproduces the files byte for byte.
#pragma once

#include "subhaz/design.hpp"
#include "subhaz/pipeline.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace subhaz {

/// Subjects plus pi at every event time (needed to rebuild the design offsets).
struct StoredDataset {
  std::vector<SubjectData> subjects;
  std::map<std::pair<int, double>, double> event_pi;

  /// Exact lookup by (subject, event time); unknown pairs are a validation error.
  PiAtEvent pi() const;
  std::size_t missing_values() const;
  std::size_t sensor_values() const;
};

/// Evaluates pi at each event with ds.pi_at.
StoredDataset to_stored(const Dataset& ds);

void write_dataset(const std::string& dir, const StoredDataset& ds);
StoredDataset read_dataset(const std::string& dir);

}  // namespace subhaz
