#include "subhaz/design.hpp"

#include "subhaz/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

namespace subhaz {

Vec SplineBasis::eval(double s) const {
  Vec out = Vec::Zero(k_b);
  if (s < 0 || s > delta) return out;
  const double u = s / delta;
  out[0] = 1.0;
  out[1] = u;
  out[2] = u * u;
  for (int j = 3; j < k_b; ++j) {
    const double d = u - knots[static_cast<std::size_t>(j - 3)] / delta;
    out[j] = d > 0 ? d * d * d : 0.0;
  }
  return out;
}

Mat SplineBasis::on_grid(std::span<const double> s) const {
  Mat out(static_cast<Eigen::Index>(s.size()), k_b);
  for (std::size_t i = 0; i < s.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = eval(s[i]).transpose();
  return out;
}

std::vector<int> SplineBasis::penalized() const {
  std::vector<int> idx;
  for (int j = 3; j < k_b; ++j) idx.push_back(j);
  return idx;
}

SplineBasis build_basis(int k_b, double delta, int k_x) {
  if (k_b < 4) fail_validation("K_b must be at least 4");
  if (!(delta > 0)) fail_validation("basis window delta must be positive");
  if (k_x > 0 && k_b > k_x)
    fail_validation("K_b = " + std::to_string(k_b) + " exceeds K_x = " + std::to_string(k_x) +
                    "; the functional coefficients are not identifiable");
  SplineBasis b;
  b.k_b = k_b;
  b.delta = delta;
  const int n_knots = k_b - 3;
  for (int j = 1; j <= n_knots; ++j) b.knots.push_back(delta * j / (n_knots + 1));
  return b;
}

Mat penalty_selector(const SplineBasis& basis, int p, int offset) {
  Mat b = Mat::Zero(p, p);
  for (int j : basis.penalized()) b(offset + j, offset + j) = 1.0;
  return b;
}

Vec CrossMatrix::m_t(const MeanSurface& mean, double t, std::span<const double> s_grid) const {
  if (mean.kind() == MeanSurface::Kind::zero) return Vec::Zero(phi.cols());
  const Vec mu = mean.on_grid(t, s_grid);
  return phi.transpose() * w.cwiseProduct(mu);
}

CrossMatrix cross_matrix(const EigenSystem& es, const SplineBasis& basis) {
  if (es.s.empty() || std::abs(es.s.back() - basis.delta) > 1e-12 * basis.delta || es.s.front() != 0.0)
    fail_validation("eigenfunction grid does not span [0, delta] of the spline basis");
  CrossMatrix cm;
  cm.phi = basis.on_grid(es.s);
  cm.w = es.w;
  cm.j = es.psi.transpose() * cm.w.asDiagonal() * cm.phi;
  return cm;
}

Feature parse_feature(const std::string& name) {
  if (name == "intercept") return Feature::intercept;
  if (name == "time") return Feature::time;
  if (name == "count") return Feature::count;
  if (name == "since_last") return Feature::since_last;
  fail_validation("unknown history feature '" + name + "'");
}

std::string feature_name(Feature f) {
  switch (f) {
    case Feature::intercept:
      return "intercept";
    case Feature::time:
      return "time";
    case Feature::count:
      return "count";
    case Feature::since_last:
      return "since_last";
  }
  return "?";
}

int Design::n_subjects() const {
  std::set<int> ids(subject.begin(), subject.end());
  return static_cast<int>(ids.size());
}

void Design::validate() const {
  const auto n = w.rows();
  if (y.size() != n || log_pi.size() != n || static_cast<Eigen::Index>(subject.size()) != n ||
      static_cast<Eigen::Index>(t.size()) != n)
    fail_validation("design row arrays have inconsistent lengths");
  if (static_cast<Eigen::Index>(names.size()) != w.cols() || static_cast<Eigen::Index>(pen_group.size()) != w.cols())
    fail_validation("design column metadata does not match the matrix");
  if (!w.allFinite() || !log_pi.allFinite()) fail_validation("design has non-finite entries");
}

std::vector<WindowedHistory> subject_windows(const SubjectData& subject, std::size_t stream,
                                             const WindowGrid& grid, bool zero_pad) {
  std::vector<Anchor> anchors;
  anchors.reserve(subject.events.times.size() + subject.samples.size());
  for (double t : subject.events.times) anchors.push_back({t, 1});
  for (double t : subject.samples.times) anchors.push_back({t, 0});
  std::sort(anchors.begin(), anchors.end(), [](const Anchor& a, const Anchor& b) { return a.t < b.t; });
  return extract_windows(subject.path, anchors, grid, stream, zero_pad);
}

std::vector<WindowedHistory> subject_windows(const SubjectData& subject, const StreamModel& sm) {
  return subject_windows(subject, sm.stream, sm.grid, sm.zero_pad);
}

Design build_design(std::span<const SubjectData> subjects, std::span<const StreamModel> streams,
                    const PiAtEvent& pi_event, const DesignOptions& opt) {
  Design d;
  for (Feature f : opt.features) {
    d.names.push_back(feature_name(f));
    d.pen_group.push_back(-1);
  }
  int offset = static_cast<int>(opt.features.size());
  for (std::size_t l = 0; l < streams.size(); ++l) {
    d.block_offset.push_back(offset);
    d.bases.push_back(streams[l].basis);
    for (int j = 0; j < streams[l].basis.k_b; ++j) {
      d.names.push_back("s" + std::to_string(l) + "_b" + std::to_string(j));
      d.pen_group.push_back(j >= 3 ? static_cast<int>(l) : -1);
    }
    offset += streams[l].basis.k_b;
  }
  const int p = offset;

  std::vector<std::size_t> order(subjects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return subjects[a].path.subject_id < subjects[b].path.subject_id;
  });

  std::size_t n_rows = 0;
  for (const auto& s : subjects) n_rows += s.events.times.size() + s.samples.size();
  d.w.resize(static_cast<Eigen::Index>(n_rows), p);
  d.y.resize(static_cast<Eigen::Index>(n_rows));
  d.log_pi.resize(static_cast<Eigen::Index>(n_rows));
  d.subject.reserve(n_rows);
  d.t.reserve(n_rows);

  Eigen::Index row = 0;
  for (std::size_t si : order) {
    const SubjectData& sub = subjects[si];
    const int id = sub.path.subject_id;
    const std::size_t n_sub = sub.events.times.size() + sub.samples.size();
    std::vector<std::vector<WindowedHistory>> win(streams.size());
    for (std::size_t l = 0; l < streams.size(); ++l) win[l] = subject_windows(sub, streams[l]);

    // Stored pi for sampled anchors, matched by time.
    std::size_t next_sample = 0;
    for (std::size_t a = 0; a < n_sub; ++a) {
      double t;
      int label;
      if (!win.empty()) {
        t = win[0][a].anchor_t;
        label = win[0][a].label;
      } else {
        // No functional streams: merge events and samples directly.
        const std::size_t ne = a - next_sample;
        const bool take_event =
            ne < sub.events.times.size() &&
            (next_sample >= sub.samples.size() || sub.events.times[ne] < sub.samples.times[next_sample]);
        t = take_event ? sub.events.times[ne] : sub.samples.times[next_sample];
        label = take_event ? 1 : 0;
      }
      double log_pi;
      if (label == 1) {
        const double pi = pi_event(id, t);
        if (!(pi > 0)) fail_validation("sampling intensity at an event must be positive");
        log_pi = std::log(pi);
      } else {
        if (next_sample >= sub.samples.size() || sub.samples.times[next_sample] != t)
          fail_validation("sample anchors out of sync with the sample set");
        log_pi = std::log(sub.samples.pi_values[next_sample]);
        ++next_sample;
      }

      int col = 0;
      for (Feature f : opt.features) {
        double v = 0.0;
        switch (f) {
          case Feature::intercept:
            v = 1.0;
            break;
          case Feature::time:
            v = t;
            break;
          case Feature::count:
            v = sub.events.count_before(t);
            break;
          case Feature::since_last: {
            const double last = sub.events.last_before(t);
            v = std::isnan(last) ? t - sub.events.entry : t - last;
            break;
          }
        }
        d.w(row, col++) = v;
      }
      for (std::size_t l = 0; l < streams.size(); ++l) {
        const StreamModel& sm = streams[l];
        const WindowedHistory& w = win[l][a];
        if (!w.complete())
          fail_validation("window at t = " + std::to_string(t) + " (subject " + std::to_string(id) +
                          ") has missing sensor values; run imputation first");
        const LabelFpca& fp = sm.fpca[label];
        const CrossMatrix& cm = sm.cross[label];
        const Vec c = scores(w, fp.es, fp.mean);
        const Vec block = cm.m_t(fp.mean, t, sm.grid.s) + cm.j.transpose() * c;
        d.w.block(row, col, 1, sm.basis.k_b) = block.transpose();
        col += sm.basis.k_b;
      }
      d.y[row] = label;
      d.log_pi[row] = log_pi;
      d.subject.push_back(id);
      d.t.push_back(t);
      if (d.w.row(row).cwiseAbs().maxCoeff() > opt.max_abs_w)
        fail_validation("design entry exceeds the covariate bound at t = " + std::to_string(t));
      ++row;
    }
  }
  d.validate();
  return d;
}

void write_design_csv(const Design& d, const std::string& path) {
  std::ostringstream out;
  out << "subject_id,t,y,log_pi";
  for (const auto& n : d.names) out << ',' << n;
  out << '\n';
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    out << d.subject[static_cast<std::size_t>(i)] << ',' << fmt(d.t[static_cast<std::size_t>(i)]) << ','
        << static_cast<int>(d.y[i]) << ',' << fmt(d.log_pi[i]);
    for (Eigen::Index j = 0; j < d.cols(); ++j) out << ',' << fmt(d.w(i, j));
    out << '\n';
  }
  write_text(path, out.str());
}

Design read_design_csv(const std::string& path) {
  const CsvTable tab = read_csv(path);
  if (tab.header.size() < 5 || tab.header[0] != "subject_id" || tab.header[1] != "t" || tab.header[2] != "y" ||
      tab.header[3] != "log_pi")
    fail_io("design CSV header must start with subject_id,t,y,log_pi");
  Design d;
  const std::regex basis_col("s([0-9]+)_b([0-9]+)");
  for (std::size_t c = 4; c < tab.header.size(); ++c) {
    d.names.push_back(tab.header[c]);
    std::smatch m;
    int group = -1;
    if (std::regex_match(tab.header[c], m, basis_col) && std::stoi(m[2].str()) >= 3) group = std::stoi(m[1].str());
    d.pen_group.push_back(group);
  }
  const auto n = static_cast<Eigen::Index>(tab.rows.size());
  const auto p = static_cast<Eigen::Index>(d.names.size());
  d.w.resize(n, p);
  d.y.resize(n);
  d.log_pi.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = tab.rows[static_cast<std::size_t>(i)];
    d.subject.push_back(static_cast<int>(parse_long(r[0])));
    d.t.push_back(parse_double(r[1]));
    d.y[i] = parse_double(r[2]);
    d.log_pi[i] = parse_double(r[3]);
    for (Eigen::Index j = 0; j < p; ++j) d.w(i, j) = parse_double(r[static_cast<std::size_t>(4 + j)]);
  }
  d.validate();
  return d;
}

}  // namespace subhaz
