#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcox {

// One study participant: visit times, cumulative event counts at those
// visits, a covariate vector and a censoring (end of follow-up) time.
// Times are kept in the original study units; model code rescales.
struct Subject {
  std::string id;
  std::vector<double> obs_times;   // strictly increasing, in (0, censor_time]
  std::vector<long> cum_counts;    // nondecreasing, N_0 := 0
  std::vector<double> covariates;  // length p, shared across subjects
  double censor_time = 0.0;

  std::size_t n_visits() const { return obs_times.size(); }
  long final_count() const { return cum_counts.empty() ? 0 : cum_counts.back(); }
  double last_visit() const { return obs_times.empty() ? 0.0 : obs_times.back(); }
};

struct PanelDataset {
  std::vector<Subject> subjects;
  std::vector<std::string> covariate_names;

  std::size_t size() const { return subjects.size(); }
  std::size_t n_covariates() const { return covariate_names.size(); }

  double time_horizon() const {
    double t = 0.0;
    for (const auto& s : subjects) t = std::max(t, s.censor_time);
    return t;
  }
};

struct Increment {
  double t_lo, t_hi;  // interval (t_lo, t_hi]
  long count;         // y_ij = N_ij - N_{i,j-1}
};

inline std::vector<Increment> subject_increments(const Subject& s) {
  std::vector<Increment> out;
  out.reserve(s.obs_times.size());
  double prev_t = 0.0;
  long prev_n = 0;
  for (std::size_t j = 0; j < s.obs_times.size(); ++j) {
    out.push_back({prev_t, s.obs_times[j], s.cum_counts[j] - prev_n});
    prev_t = s.obs_times[j];
    prev_n = s.cum_counts[j];
  }
  return out;
}

inline std::vector<std::vector<Increment>> increments(const PanelDataset& data) {
  std::vector<std::vector<Increment>> out;
  out.reserve(data.size());
  for (const auto& s : data.subjects) out.push_back(subject_increments(s));
  return out;
}

// Structural checks shared by the loader and the fit entry point.
// `for_fit` additionally rejects subjects without any visit.
inline void validate_dataset(const PanelDataset& data, bool for_fit = false) {
  if (data.subjects.empty()) throw std::invalid_argument("dataset has no subjects");
  const std::size_t p = data.covariate_names.size();
  for (const auto& s : data.subjects) {
    if (s.covariates.size() != p)
      throw std::invalid_argument("covariate length mismatch for subject " + s.id);
    if (s.censor_time <= 0.0)
      throw std::invalid_argument("nonpositive censor time for subject " + s.id);
    if (s.obs_times.size() != s.cum_counts.size())
      throw std::invalid_argument("times/counts length mismatch for subject " + s.id);
    double prev_t = 0.0;
    long prev_n = 0;
    for (std::size_t j = 0; j < s.obs_times.size(); ++j) {
      if (!(s.obs_times[j] > prev_t))
        throw std::invalid_argument("observation times not strictly increasing for subject " + s.id);
      if (s.obs_times[j] > s.censor_time)
        throw std::invalid_argument("observation time exceeds censor time for subject " + s.id);
      if (s.cum_counts[j] < prev_n)
        throw std::invalid_argument("non-monotone counts for subject " + s.id);
      prev_t = s.obs_times[j];
      prev_n = s.cum_counts[j];
    }
    if (for_fit && s.obs_times.empty())
      throw std::invalid_argument("subject " + s.id + " has no visits; cannot be fit");
  }
  // A constant column duplicates the Gaussian-process mean level and breaks
  // identifiability, so it is refused outright (undetectable when n == 1).
  if (data.subjects.size() > 1) {
    for (std::size_t k = 0; k < p; ++k) {
      bool constant = true;
      const double v0 = data.subjects.front().covariates[k];
      for (const auto& s : data.subjects)
        if (s.covariates[k] != v0) { constant = false; break; }
      if (constant)
        throw std::invalid_argument("intercept column not permitted: covariate '" +
                                    data.covariate_names[k] + "' is constant");
    }
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw std::invalid_argument("could not parse " + what + " value '" + s + "'");
  }
}

inline long parse_long(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw std::invalid_argument("could not parse " + what + " value '" + s + "'");
  }
}

inline std::string format_sig(double v, int digits = 12) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

}  // namespace detail

// events CSV:     subject_id,time,cum_count        (one row per observation)
// covariates CSV: subject_id,censor_time,<names...> (one row per subject)
inline PanelDataset load_dataset(const std::string& events_path,
                                 const std::string& covariates_path) {
  std::ifstream cov(covariates_path);
  if (!cov) throw std::invalid_argument("cannot open covariates file: " + covariates_path);
  std::string line;
  if (!std::getline(cov, line)) throw std::invalid_argument("empty covariates file");
  auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "censor_time")
    throw std::invalid_argument("covariates header must be subject_id,censor_time,<names...>");

  PanelDataset data;
  data.covariate_names.assign(header.begin() + 2, header.end());
  std::map<std::string, std::size_t> index;
  std::vector<std::string> order;  // preserve file order
  while (std::getline(cov, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw std::invalid_argument("covariates row has wrong field count: " + line);
    Subject s;
    s.id = f[0];
    if (index.count(s.id)) throw std::invalid_argument("duplicate subject id: " + s.id);
    s.censor_time = detail::parse_double(f[1], "censor_time");
    for (std::size_t k = 2; k < f.size(); ++k)
      s.covariates.push_back(detail::parse_double(f[k], "covariate " + header[k]));
    index[s.id] = data.subjects.size();
    order.push_back(s.id);
    data.subjects.push_back(std::move(s));
  }

  std::ifstream ev(events_path);
  if (!ev) throw std::invalid_argument("cannot open events file: " + events_path);
  if (!std::getline(ev, line)) throw std::invalid_argument("empty events file");
  if (detail::split_csv_line(line) != std::vector<std::string>{"subject_id", "time", "cum_count"})
    throw std::invalid_argument("events header must be subject_id,time,cum_count");
  while (std::getline(ev, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 3) throw std::invalid_argument("events row has wrong field count: " + line);
    auto it = index.find(f[0]);
    if (it == index.end())
      throw std::invalid_argument("covariate row missing for subject id: " + f[0]);
    Subject& s = data.subjects[it->second];
    s.obs_times.push_back(detail::parse_double(f[1], "time"));
    s.cum_counts.push_back(detail::parse_long(f[2], "cum_count"));
  }

  validate_dataset(data);
  return data;
}

inline void write_dataset(const PanelDataset& data, const std::string& events_path,
                          const std::string& covariates_path) {
  std::ofstream ev(events_path);
  if (!ev) throw std::runtime_error("cannot write events file: " + events_path);
  ev << "subject_id,time,cum_count\n";
  for (const auto& s : data.subjects)
    for (std::size_t j = 0; j < s.obs_times.size(); ++j)
      ev << s.id << ',' << detail::format_sig(s.obs_times[j]) << ',' << s.cum_counts[j] << '\n';

  std::ofstream cov(covariates_path);
  if (!cov) throw std::runtime_error("cannot write covariates file: " + covariates_path);
  cov << "subject_id,censor_time";
  for (const auto& n : data.covariate_names) cov << ',' << n;
  cov << '\n';
  for (const auto& s : data.subjects) {
    cov << s.id << ',' << detail::format_sig(s.censor_time);
    for (double x : s.covariates) cov << ',' << detail::format_sig(x);
    cov << '\n';
  }
}

}  // namespace pcox
