#include "subhaz/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace subhaz {

void SimConfig::validate() const {
  if (user_days < 0) fail_validation("user_days must be nonnegative");
  if (steps < 2) fail_validation("a day needs at least 2 grid steps");
  if (!(day_length > 0)) fail_validation("day length must be positive");
  matern.validate();
  beta.validate();
  design.validate();
  if (!(mcar >= 0.0 && mcar < 1.0)) fail_validation("MCAR fraction must be in [0, 1)");
  const double e = std::isnan(entry) ? beta.delta : entry;
  if (!(e >= 0.0 && e < day_length)) fail_validation("at-risk entry must lie inside the day");
}

double Dataset::pi_at(int subject, double t) const {
  if (design.kind == SamplingDesign::Kind::constant_rate) return design.rate_or_c;
  for (const auto& s : subjects)
    if (s.path.subject_id == subject) return design.rate_or_c * hazard_per_unit(s.path, beta, theta0, step, t);
  fail_validation("unknown subject " + std::to_string(subject));
}

int Dataset::total_events() const {
  int n = 0;
  for (const auto& s : subjects) n += static_cast<int>(s.events.times.size());
  return n;
}

int Dataset::total_samples() const {
  int n = 0;
  for (const auto& s : subjects) n += static_cast<int>(s.samples.size());
  return n;
}

double hazard_per_unit(const SensorPath& path, const TrueBeta& beta, double theta0, double step, double t,
                       bool zero_pad) {
  return hazard_eval(path, beta, theta0, t, zero_pad) / step;
}

Dataset simulate_dataset(const SimConfig& cfg, std::uint64_t seed, const GpSampler* sampler) {
  cfg.validate();
  Dataset ds;
  ds.design = cfg.design;
  ds.beta = cfg.beta;
  ds.theta0 = cfg.theta0;
  ds.step = cfg.step();
  if (cfg.user_days == 0) return ds;
  const auto grid = linspace(0.0, cfg.day_length, static_cast<std::size_t>(cfg.steps) + 1);
  std::optional<GpSampler> own;
  if (!sampler || sampler->grid().size() != grid.size() || sampler->grid().back() != grid.back()) {
    own.emplace(grid, cfg.matern);
    sampler = &*own;
  }
  EventOptions eo;
  eo.entry = std::isnan(cfg.entry) ? (cfg.zero_pad ? 0.0 : cfg.beta.delta) : cfg.entry;
  eo.zero_pad = cfg.zero_pad;
  for (int i = 0; i < cfg.user_days; ++i) {
    const auto id = static_cast<std::uint64_t>(i);
    SubjectData sub;
    sub.path.subject_id = i;
    sub.path.grid = grid;
    Rng path_rng = make_rng(seed, id, 0);
    sub.path.add_stream(sampler->draw(path_rng));
    Rng ev_rng = make_rng(seed, id, 1);
    sub.events = generate_events(sub.path, cfg.beta, cfg.theta0, ev_rng, eo);
    const SensorPath& path = sub.path;
    const RateFn hz = [&](double t) {
      return hazard_per_unit(path, cfg.beta, cfg.theta0, cfg.step(), t, cfg.zero_pad);
    };
    Rng s_rng = make_rng(seed, id, 2);
    sub.samples = draw_samples(cfg.design, sub.events.entry, sub.events.tau, hz, s_rng, sub.events.times);
    sub.samples.subject_id = i;
    if (cfg.mcar > 0.0) {
      Rng m_rng = make_rng(seed, id, 3);
      for (auto& flag : sub.path.mask[0]) flag = uniform_open(m_rng) < cfg.mcar ? 0 : 1;
    }
    ds.subjects.push_back(std::move(sub));
  }
  return ds;
}

PiAtEvent dataset_pi(const Dataset& ds, double keep_scale) {
  if (ds.design.kind == SamplingDesign::Kind::constant_rate) {
    const double rate = ds.design.rate_or_c * keep_scale;
    return [rate](int, double) { return rate; };
  }
  std::map<int, const SubjectData*> by_id;
  for (const auto& s : ds.subjects) by_id[s.path.subject_id] = &s;
  const double c = ds.design.rate_or_c * keep_scale;
  const TrueBeta beta = ds.beta;
  const double theta0 = ds.theta0, step = ds.step;
  return [by_id, c, beta, theta0, step](int id, double t) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) fail_validation("unknown subject " + std::to_string(id));
    return c * hazard_per_unit(it->second->path, beta, theta0, step, t);
  };
}

void ModelConfig::validate() const {
  if (!(delta > 0)) fail_validation("delta must be positive");
  if (m < 4) fail_validation("window grid needs at least 4 points");
  if (k_x < 1 || k_x > m - 1) fail_validation("K_x must be in [1, m - 1]");
  if (k_b < 4) fail_validation("K_b must be at least 4");
  if (k_b > k_x) fail_validation("K_b must not exceed K_x");
}

StreamModel build_stream_model(std::span<const SubjectData> subjects, std::size_t stream, const ModelConfig& cfg,
                               std::vector<std::string>* warnings) {
  cfg.validate();
  StreamModel sm;
  sm.stream = stream;
  sm.grid = make_window_grid(cfg.delta, cfg.m);
  sm.basis = build_basis(cfg.k_b, cfg.delta, cfg.k_x);
  sm.zero_pad = cfg.zero_pad;
  FpcaOptions fo = cfg.fpca;
  fo.k_x = cfg.k_x;
  const bool need_windows = !(fo.known_mean_zero && fo.known_cov);
  std::vector<WindowedHistory> windows;
  if (need_windows) {
    for (const auto& s : subjects) {
      auto w = subject_windows(s, stream, sm.grid, cfg.zero_pad);
      windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
  }
  if (cfg.pooled_labels) {
    for (auto& w : windows) w.label = 0;
    sm.fpca[0] = fit_label_fpca(windows, 0, sm.grid, fo, warnings);
    sm.fpca[1] = sm.fpca[0];
  } else {
    for (int y = 0; y < 2; ++y) sm.fpca[y] = fit_label_fpca(windows, y, sm.grid, fo, warnings);
  }
  for (int y = 0; y < 2; ++y) sm.cross[y] = cross_matrix(sm.fpca[y].es, sm.basis);
  return sm;
}

PipelineFit fit_dataset(std::span<const SubjectData> subjects, const PiAtEvent& pi_event, const ModelConfig& cfg,
                        std::span<const double> deltas) {
  PipelineFit out;
  std::vector<std::string> warnings;
  if (deltas.empty()) {
    out.models.push_back(build_stream_model(subjects, 0, cfg, &warnings));
  } else {
    for (std::size_t l = 0; l < deltas.size(); ++l) {
      ModelConfig c = cfg;
      c.delta = deltas[l];
      out.models.push_back(build_stream_model(subjects, l, c, &warnings));
    }
  }
  DesignOptions dopt;
  dopt.features = cfg.features;
  out.design = build_design(subjects, out.models, pi_event, dopt);
  out.fit = fit_alternating(out.design, cfg.fit);
  out.fit.warnings.insert(out.fit.warnings.begin(), warnings.begin(), warnings.end());
  return out;
}

std::vector<SubjectData> thin_subjects(std::span<const SubjectData> subjects, double keep_prob, std::uint64_t seed,
                                       std::uint64_t stage) {
  std::vector<SubjectData> out(subjects.begin(), subjects.end());
  for (auto& s : out) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(s.path.subject_id), 4, stage);
    s.samples = thin(s.samples, keep_prob, rng);
    s.samples.subject_id = s.path.subject_id;
  }
  return out;
}

}  // namespace subhaz
