#ifndef MVLONG_DATA_HPP
#define MVLONG_DATA_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace mvlong {

/// Malformed input file or dataset that violates the longitudinal layout.
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SubjectRecord {
  std::string id;
  std::vector<double> times;
  Eigen::MatrixXd responses;   // n_i x p
  Eigen::MatrixXd covariates;  // n_i x c
};

struct ColumnSchema {
  std::string subject = "subject";
  std::string time = "time";
  std::vector<std::string> responses;
  std::vector<std::string> covariates;
};

/// Immutable unbalanced multivariate longitudinal dataset.
///
/// Observations are stored flat in subject order; observation o belongs to
/// subject subject_of(o) and sits at position o - offset(subject) within it.
class LongitudinalDataset {
 public:
  LongitudinalDataset() = default;

  LongitudinalDataset(const std::vector<SubjectRecord>& subjects, std::vector<std::string> response_names,
                      std::vector<std::string> covariate_names)
      : response_names_(std::move(response_names)), covariate_names_(std::move(covariate_names)) {
    p_ = static_cast<int>(response_names_.size());
    if (p_ < 1) throw data_error("dataset needs at least one response");
    const Eigen::Index c = static_cast<Eigen::Index>(covariate_names_.size());
    std::size_t total = 0;
    for (const auto& s : subjects) total += s.times.size();
    responses_.resize(static_cast<Eigen::Index>(total), p_);
    covariates_.resize(static_cast<Eigen::Index>(total), c);
    times_.reserve(total);
    offsets_.push_back(0);
    for (const auto& s : subjects) {
      const Eigen::Index ni = static_cast<Eigen::Index>(s.times.size());
      if (ni == 0) throw data_error("subject '" + s.id + "' has no observations");
      if (s.responses.rows() != ni || s.responses.cols() != p_)
        throw data_error("subject '" + s.id + "' response matrix has wrong shape");
      if (s.covariates.rows() != ni || s.covariates.cols() != c)
        throw data_error("subject '" + s.id + "' covariate matrix has wrong shape");
      for (Eigen::Index j = 0; j < ni; ++j) {
        if (!std::isfinite(s.times[j])) throw data_error("subject '" + s.id + "' has a non-finite time");
        if (j > 0 && s.times[j] == s.times[j - 1])
          throw data_error("duplicate (subject, time) key for subject '" + s.id + "'");
        if (j > 0 && s.times[j] < s.times[j - 1])
          throw data_error("times are not increasing within subject '" + s.id + "'");
      }
      if (!s.responses.allFinite()) throw data_error("subject '" + s.id + "' has a missing or non-finite response");
      if (!s.covariates.allFinite()) throw data_error("subject '" + s.id + "' has a non-finite covariate");
      const Eigen::Index start = static_cast<Eigen::Index>(times_.size());
      responses_.middleRows(start, ni) = s.responses;
      covariates_.middleRows(start, ni) = s.covariates;
      times_.insert(times_.end(), s.times.begin(), s.times.end());
      ids_.push_back(s.id);
      offsets_.push_back(static_cast<int>(times_.size()));
    }
    registry_ = times_;
    std::sort(registry_.begin(), registry_.end());
    registry_.erase(std::unique(registry_.begin(), registry_.end()), registry_.end());
    time_index_.resize(times_.size());
    occupancy_.assign(registry_.size(), {});
    subject_of_.resize(times_.size());
    for (int i = 0; i < n_subjects(); ++i) {
      for (int o = offsets_[i]; o < offsets_[i + 1]; ++o) {
        auto it = std::lower_bound(registry_.begin(), registry_.end(), times_[o]);
        int t = static_cast<int>(it - registry_.begin());
        time_index_[o] = t;
        occupancy_[t].push_back(i);
        subject_of_[o] = i;
      }
    }
  }

  int n_subjects() const { return static_cast<int>(ids_.size()); }
  int response_dim() const { return p_; }
  int n_obs() const { return static_cast<int>(times_.size()); }
  int n_times() const { return static_cast<int>(registry_.size()); }
  int n_covariates() const { return static_cast<int>(covariate_names_.size()); }

  int offset(int i) const { return offsets_[i]; }
  int n_visits(int i) const { return offsets_[i + 1] - offsets_[i]; }
  int subject_of(int o) const { return subject_of_[o]; }
  const std::string& id(int i) const { return ids_[i]; }

  double time(int o) const { return times_[o]; }
  int time_index(int o) const { return time_index_[o]; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& time_registry() const { return registry_; }
  /// Subjects observed at registry time t (indices into the subject list).
  const std::vector<std::vector<int>>& occupancy() const { return occupancy_; }

  const Eigen::MatrixXd& responses() const { return responses_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const std::vector<std::string>& response_names() const { return response_names_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  int covariate_column(const std::string& name) const {
    auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
    if (it == covariate_names_.end()) return -1;
    return static_cast<int>(it - covariate_names_.begin());
  }

  SubjectRecord subject(int i) const {
    SubjectRecord s;
    s.id = ids_[i];
    const int ni = n_visits(i);
    s.times.assign(times_.begin() + offsets_[i], times_.begin() + offsets_[i] + ni);
    s.responses = responses_.middleRows(offsets_[i], ni);
    s.covariates = covariates_.middleRows(offsets_[i], ni);
    return s;
  }

  std::vector<SubjectRecord> subjects() const {
    std::vector<SubjectRecord> out;
    out.reserve(ids_.size());
    for (int i = 0; i < n_subjects(); ++i) out.push_back(subject(i));
    return out;
  }

  /// Same design (subjects, times, covariates) with a new N x p response matrix.
  LongitudinalDataset with_responses(const Eigen::MatrixXd& y) const {
    if (y.rows() != responses_.rows() || y.cols() != responses_.cols())
      throw data_error("with_responses: response matrix has wrong shape");
    LongitudinalDataset out = *this;
    out.responses_ = y;
    return out;
  }

  LongitudinalDataset without_subject(int i) const {
    auto subs = subjects();
    subs.erase(subs.begin() + i);
    return LongitudinalDataset(subs, response_names_, covariate_names_);
  }

 private:
  int p_ = 0;
  std::vector<std::string> response_names_;
  std::vector<std::string> covariate_names_;
  std::vector<std::string> ids_;
  std::vector<int> offsets_;
  std::vector<int> subject_of_;
  std::vector<double> times_;
  std::vector<int> time_index_;
  std::vector<double> registry_;
  std::vector<std::vector<int>> occupancy_;
  Eigen::MatrixXd responses_;
  Eigen::MatrixXd covariates_;
};

/// Time value to the set of subjects observed there.
inline std::map<double, std::vector<int>> occupancy_index(const LongitudinalDataset& data) {
  std::map<double, std::vector<int>> out;
  for (int t = 0; t < data.n_times(); ++t) out[data.time_registry()[t]] = data.occupancy()[t];
  return out;
}

/// Shortest decimal string that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  out.push_back(field);
  return out;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline bool is_missing_token(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == ".";
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  auto res = std::from_chars(begin, s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

struct LoadReport {
  int dropped_rows = 0;
  int rows_read = 0;
};

inline LongitudinalDataset load_csv(std::istream& in, const ColumnSchema& schema, LoadReport* report = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw data_error("empty CSV input: no header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  auto find_column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw data_error("column '" + name + "' not found in header");
    return static_cast<int>(it - header.begin());
  };
  if (schema.responses.empty()) throw data_error("schema names no response columns");
  const int subject_col = find_column(schema.subject);
  const int time_col = find_column(schema.time);
  std::vector<int> response_cols, covariate_cols;
  for (const auto& r : schema.responses) response_cols.push_back(find_column(r));
  for (const auto& c : schema.covariates) covariate_cols.push_back(find_column(c));

  struct Row {
    double time;
    std::vector<double> y, x;
    int line;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> rows;
  LoadReport local;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw data_error("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    for (auto& f : fields) f = detail::trim(f);
    ++local.rows_read;
    auto number = [&](int col, const std::string& name) {
      double v = 0.0;
      if (!detail::parse_double(fields[col], v))
        throw data_error("line " + std::to_string(line_no) + ": cannot parse '" + fields[col] + "' in column '" +
                         name + "'");
      return v;
    };
    Row row;
    row.line = line_no;
    const std::string& sid = fields[subject_col];
    if (sid.empty()) throw data_error("line " + std::to_string(line_no) + ": empty subject identifier");
    row.time = number(time_col, schema.time);
    bool missing = false;
    for (std::size_t k = 0; k < response_cols.size(); ++k) {
      if (detail::is_missing_token(fields[response_cols[k]])) {
        missing = true;
        continue;
      }
      row.y.push_back(number(response_cols[k], schema.responses[k]));
    }
    for (std::size_t k = 0; k < covariate_cols.size(); ++k) row.x.push_back(number(covariate_cols[k], schema.covariates[k]));
    if (missing) {
      ++local.dropped_rows;
      continue;
    }
    auto it = rows.find(sid);
    if (it == rows.end()) {
      order.push_back(sid);
      it = rows.emplace(sid, std::vector<Row>{}).first;
    }
    for (const auto& prev : it->second)
      if (prev.time == row.time)
        throw data_error("line " + std::to_string(line_no) + ": duplicate (subject, time) key for subject '" + sid +
                         "' (first seen on line " + std::to_string(prev.line) + ")");
    if (!it->second.empty() && row.time < it->second.back().time)
      throw data_error("line " + std::to_string(line_no) + ": times are not increasing within subject '" + sid + "'");
    it->second.push_back(std::move(row));
  }

  std::vector<SubjectRecord> subjects;
  const int p = static_cast<int>(schema.responses.size());
  const int c = static_cast<int>(schema.covariates.size());
  for (const auto& sid : order) {
    const auto& list = rows[sid];
    SubjectRecord s;
    s.id = sid;
    s.responses.resize(static_cast<Eigen::Index>(list.size()), p);
    s.covariates.resize(static_cast<Eigen::Index>(list.size()), c);
    for (std::size_t j = 0; j < list.size(); ++j) {
      s.times.push_back(list[j].time);
      for (int k = 0; k < p; ++k) s.responses(j, k) = list[j].y[k];
      for (int k = 0; k < c; ++k) s.covariates(j, k) = list[j].x[k];
    }
    subjects.push_back(std::move(s));
  }
  if (report) *report = local;
  return LongitudinalDataset(subjects, schema.responses, schema.covariates);
}

inline LongitudinalDataset load_csv(const std::string& path, const ColumnSchema& schema, LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open data file '" + path + "'");
  return load_csv(in, schema, report);
}

inline void write_csv(const LongitudinalDataset& data, std::ostream& out, const std::string& subject_name = "subject",
                      const std::string& time_name = "time") {
  out << subject_name << ',' << time_name;
  for (const auto& r : data.response_names()) out << ',' << r;
  for (const auto& c : data.covariate_names()) out << ',' << c;
  out << '\n';
  for (int o = 0; o < data.n_obs(); ++o) {
    out << data.id(data.subject_of(o)) << ',' << format_double(data.time(o));
    for (int k = 0; k < data.response_dim(); ++k) out << ',' << format_double(data.responses()(o, k));
    for (int k = 0; k < data.n_covariates(); ++k) out << ',' << format_double(data.covariates()(o, k));
    out << '\n';
  }
}

inline void write_csv(const LongitudinalDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write data file '" + path + "'");
  write_csv(data, out);
}

inline ColumnSchema schema_of(const LongitudinalDataset& data) {
  ColumnSchema s;
  s.responses = data.response_names();
  s.covariates = data.covariate_names();
  return s;
}

}  // namespace mvlong

#endif
