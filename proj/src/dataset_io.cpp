#include "subhaz/dataset_io.hpp"

#include "subhaz/io.hpp"

#include <filesystem>
#include <sstream>

namespace subhaz {

PiAtEvent StoredDataset::pi() const {
  return [map = event_pi](int id, double t) {
    const auto it = map.find({id, t});
    if (it == map.end()) fail_validation("no stored pi for subject " + std::to_string(id) + " at t = " + fmt(t));
    return it->second;
  };
}

std::size_t StoredDataset::missing_values() const {
  std::size_t n = 0;
  for (const auto& s : subjects)
    for (const auto& m : s.path.mask)
      for (auto v : m) n += v ? 0 : 1;
  return n;
}

std::size_t StoredDataset::sensor_values() const {
  std::size_t n = 0;
  for (const auto& s : subjects)
    for (const auto& m : s.path.mask) n += m.size();
  return n;
}

StoredDataset to_stored(const Dataset& ds) {
  StoredDataset out;
  out.subjects = ds.subjects;
  for (const auto& s : ds.subjects)
    for (double t : s.events.times) out.event_pi[{s.path.subject_id, t}] = ds.pi_at(s.path.subject_id, t);
  return out;
}

void write_dataset(const std::string& dir, const StoredDataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail_io("cannot create directory " + dir + ": " + ec.message());
  std::size_t streams = ds.subjects.empty() ? 1 : ds.subjects.front().path.streams();
  std::ostringstream subj, sensor, events, samples;
  subj << "subject_id,entry,tau\n";
  sensor << "subject_id,t";
  for (std::size_t l = 0; l < streams; ++l) sensor << ",x" << l << ",obs" << l;
  sensor << '\n';
  events << "subject_id,t,pi\n";
  samples << "subject_id,t,pi\n";
  for (const auto& s : ds.subjects) {
    const int id = s.path.subject_id;
    if (s.path.streams() != streams) fail_validation("subjects have different numbers of sensor streams");
    subj << id << ',' << fmt(s.events.entry) << ',' << fmt(s.events.tau) << '\n';
    for (std::size_t k = 0; k < s.path.size(); ++k) {
      sensor << id << ',' << fmt(s.path.grid[k]);
      for (std::size_t l = 0; l < streams; ++l) {
        const bool obs = s.path.observed(l, k);
        sensor << ',' << (obs ? fmt(s.path.values[l][k]) : std::string("NA")) << ',' << (obs ? 1 : 0);
      }
      sensor << '\n';
    }
    for (double t : s.events.times) {
      const auto it = ds.event_pi.find({id, t});
      if (it == ds.event_pi.end()) fail_validation("missing pi for an event of subject " + std::to_string(id));
      events << id << ',' << fmt(t) << ',' << fmt(it->second) << '\n';
    }
    for (std::size_t j = 0; j < s.samples.size(); ++j)
      samples << id << ',' << fmt(s.samples.times[j]) << ',' << fmt(s.samples.pi_values[j]) << '\n';
  }
  const std::filesystem::path p(dir);
  write_text((p / "subjects.csv").string(), subj.str());
  write_text((p / "sensor.csv").string(), sensor.str());
  write_text((p / "events.csv").string(), events.str());
  write_text((p / "samples.csv").string(), samples.str());
}

namespace {

int need(const CsvTable& t, const std::string& name, const std::string& file) {
  const int c = t.column(name);
  if (c < 0) fail_io(file + " has no column " + name);
  return c;
}

}  // namespace

StoredDataset read_dataset(const std::string& dir) {
  const std::filesystem::path p(dir);
  const std::string f_subj = (p / "subjects.csv").string(), f_sensor = (p / "sensor.csv").string(),
                    f_events = (p / "events.csv").string(), f_samples = (p / "samples.csv").string();
  const CsvTable subj = read_csv(f_subj), sensor = read_csv(f_sensor), events = read_csv(f_events),
                 samples = read_csv(f_samples);

  StoredDataset out;
  std::map<int, std::size_t> index;
  const int c_id = need(subj, "subject_id", f_subj), c_entry = need(subj, "entry", f_subj),
            c_tau = need(subj, "tau", f_subj);
  for (const auto& r : subj.rows) {
    SubjectData s;
    const int id = static_cast<int>(parse_long(r[static_cast<std::size_t>(c_id)]));
    if (index.count(id)) fail_io("duplicate subject " + std::to_string(id) + " in " + f_subj);
    s.path.subject_id = s.events.subject_id = s.samples.subject_id = id;
    s.events.entry = parse_double(r[static_cast<std::size_t>(c_entry)]);
    s.events.tau = parse_double(r[static_cast<std::size_t>(c_tau)]);
    index[id] = out.subjects.size();
    out.subjects.push_back(std::move(s));
  }
  const auto subject = [&](const std::string& v, const std::string& file) -> SubjectData& {
    const int id = static_cast<int>(parse_long(v));
    const auto it = index.find(id);
    if (it == index.end()) fail_io(file + " refers to unknown subject " + std::to_string(id));
    return out.subjects[it->second];
  };

  std::size_t streams = 0;
  while (sensor.column("x" + std::to_string(streams)) >= 0) ++streams;
  if (streams == 0) fail_io(f_sensor + " has no sensor columns");
  const int s_id = need(sensor, "subject_id", f_sensor), s_t = need(sensor, "t", f_sensor);
  for (auto& s : out.subjects) {
    s.path.values.assign(streams, {});
    s.path.mask.assign(streams, {});
  }
  for (const auto& r : sensor.rows) {
    SubjectData& s = subject(r[static_cast<std::size_t>(s_id)], f_sensor);
    s.path.grid.push_back(parse_double(r[static_cast<std::size_t>(s_t)]));
    for (std::size_t l = 0; l < streams; ++l) {
      const auto& xv = r[static_cast<std::size_t>(need(sensor, "x" + std::to_string(l), f_sensor))];
      const long ob = parse_long(r[static_cast<std::size_t>(need(sensor, "obs" + std::to_string(l), f_sensor))]);
      const bool obs = ob != 0 && xv != "NA";
      s.path.values[l].push_back(obs ? parse_double(xv) : 0.0);
      s.path.mask[l].push_back(obs ? 1 : 0);
    }
  }

  const int e_id = need(events, "subject_id", f_events), e_t = need(events, "t", f_events),
            e_pi = need(events, "pi", f_events);
  for (const auto& r : events.rows) {
    SubjectData& s = subject(r[static_cast<std::size_t>(e_id)], f_events);
    const double t = parse_double(r[static_cast<std::size_t>(e_t)]);
    s.events.times.push_back(t);
    out.event_pi[{s.path.subject_id, t}] = parse_double(r[static_cast<std::size_t>(e_pi)]);
  }
  const int m_id = need(samples, "subject_id", f_samples), m_t = need(samples, "t", f_samples),
            m_pi = need(samples, "pi", f_samples);
  for (const auto& r : samples.rows) {
    SubjectData& s = subject(r[static_cast<std::size_t>(m_id)], f_samples);
    s.samples.times.push_back(parse_double(r[static_cast<std::size_t>(m_t)]));
    s.samples.pi_values.push_back(parse_double(r[static_cast<std::size_t>(m_pi)]));
  }
  for (auto& s : out.subjects) {
    if (s.path.grid.size() < 2) fail_io("subject " + std::to_string(s.path.subject_id) + " has fewer than 2 sensor rows");
    s.path.validate();
    s.events.validate();
    s.samples.validate();
  }
  return out;
}

}  // namespace subhaz
