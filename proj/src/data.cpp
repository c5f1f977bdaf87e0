#include "netfx/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include "netfx/errors.hpp"

namespace netfx {

TreatmentVector::TreatmentVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw DomainError("treatment entries must be 0 or 1");
  }
}

TreatmentVector::TreatmentVector(std::initializer_list<int> bits) {
  bits_.reserve(bits.size());
  for (int b : bits) {
    if (b != 0 && b != 1) throw DomainError("treatment entries must be 0 or 1");
    bits_.push_back(static_cast<std::uint8_t>(b));
  }
}

TreatmentVector TreatmentVector::from_code(std::uint32_t code, std::size_t size) {
  std::vector<std::uint8_t> bits(size);
  for (std::size_t j = 0; j < size; ++j) bits[j] = static_cast<std::uint8_t>((code >> j) & 1u);
  return TreatmentVector(std::move(bits));
}

std::uint32_t TreatmentVector::code() const {
  std::uint32_t c = 0;
  for (std::size_t j = 0; j < bits_.size(); ++j) c |= static_cast<std::uint32_t>(bits_[j]) << j;
  return c;
}

int TreatmentVector::treated_count() const {
  int n = 0;
  for (auto b : bits_) n += b;
  return n;
}

std::string TreatmentVector::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

double TypeProportions::at(int k) const {
  auto it = p_hat.find(k);
  if (it == p_hat.end()) throw ConfigError("no type proportion for type " + std::to_string(k));
  return it->second;
}

Dataset::Dataset(std::vector<ClusterObservation> clusters, std::vector<std::string> covariate_names,
                 std::size_t enumeration_cap)
    : clusters_(std::move(clusters)),
      covariate_names_(std::move(covariate_names)),
      enumeration_cap_(enumeration_cap) {
  if (!clusters_.empty() && covariate_names_.empty()) {
    for (Eigen::Index c = 0; c < clusters_.front().x.cols(); ++c) {
      covariate_names_.push_back("x" + std::to_string(c + 1));
    }
  }
  const std::size_t d = covariate_names_.size();
  for (const auto& c : clusters_) {
    const std::size_t m = c.size();
    if (m == 0) throw DomainError("cluster " + c.id + " has no units");
    if (m > enumeration_cap_) throw CapacityError(m, enumeration_cap_);
    if (static_cast<std::size_t>(c.y.size()) != m || static_cast<std::size_t>(c.x.rows()) != m) {
      throw DomainError("cluster " + c.id + ": y, a and x row counts differ");
    }
    if (static_cast<std::size_t>(c.x.cols()) != d) {
      throw DomainError("cluster " + c.id + ": covariate dimension differs from the dataset");
    }
    if (!c.y.allFinite() || !c.x.allFinite()) {
      throw DomainError("cluster " + c.id + ": non-finite values");
    }
    auto [it, inserted] = types_.try_emplace(c.type, ClusterTypeInfo{c.type, m, d, 0});
    if (!inserted && it->second.size != m) {
      throw DomainError("cluster " + c.id + " has size " + std::to_string(m) + " but type " +
                        std::to_string(c.type) + " has size " + std::to_string(it->second.size));
    }
    ++it->second.count;
  }
}

const ClusterTypeInfo& Dataset::type(int k) const {
  auto it = types_.find(k);
  if (it == types_.end()) throw ConfigError("type " + std::to_string(k) + " is not present in the data");
  return it->second;
}

TypeProportions Dataset::proportions() const {
  TypeProportions p;
  const double n = static_cast<double>(clusters_.size());
  for (const auto& [k, info] : types_) p.p_hat[k] = static_cast<double>(info.count) / n;
  return p;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  std::vector<ClusterObservation> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(clusters_.at(i));
  return Dataset(std::move(picked), covariate_names_, enumeration_cap_);
}

Dataset Dataset::retyped(const std::vector<int>& labels) const {
  if (labels.size() != clusters_.size()) throw DomainError("one type label per cluster required");
  auto copy = clusters_;
  for (std::size_t i = 0; i < copy.size(); ++i) copy[i].type = labels[i];
  return Dataset(std::move(copy), covariate_names_, enumeration_cap_);
}

bool operator==(const Dataset& lhs, const Dataset& rhs) {
  if (lhs.covariate_names_ != rhs.covariate_names_ || lhs.clusters_.size() != rhs.clusters_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < lhs.clusters_.size(); ++i) {
    const auto& a = lhs.clusters_[i];
    const auto& b = rhs.clusters_[i];
    if (a.id != b.id || a.type != b.type || !(a.a == b.a) || a.y != b.y || a.x != b.x) return false;
  }
  return true;
}

std::vector<TreatmentVector> enumerate_assignments(std::size_t size, std::size_t cap) {
  if (size > cap) throw CapacityError(size, cap);
  const std::uint32_t count = 1u << size;
  std::vector<TreatmentVector> out;
  out.reserve(count);
  for (std::uint32_t code = 0; code < count; ++code) out.push_back(TreatmentVector::from_code(code, size));
  return out;
}

const std::vector<TreatmentVector>& assignments_of(std::size_t size) {
  static std::mutex mutex;
  static std::unordered_map<std::size_t, std::vector<TreatmentVector>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(size);
  if (it == cache.end()) {
    // capped at 24 here; the configurable cap is enforced at dataset construction
    it = cache.emplace(size, enumerate_assignments(size, 24)).first;
  }
  return it->second;
}

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DomainError("policy probability must lie in (0,1), got " + std::to_string(alpha));
  }
}

}  // namespace

double policy_weight(const TreatmentVector& peers, double alpha) {
  check_alpha(alpha);
  double w = 1.0;
  for (std::size_t j = 0; j < peers.size(); ++j) w *= peers[j] ? alpha : 1.0 - alpha;
  return w;
}

double policy_weight_excluding(const TreatmentVector& a, std::size_t j, double alpha) {
  check_alpha(alpha);
  double w = 1.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (l != j) w *= a[l] ? alpha : 1.0 - alpha;
  }
  return w;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

double parse_real(std::string_view s, std::size_t row, const std::string& column) {
  if (s.empty() || s == "NA" || s == "NaN" || s == "nan") {
    throw ParseError(row, "missing value in column '" + column + "'");
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(row, "invalid number '" + std::string(s) + "' in column '" + column + "'");
  }
  return v;
}

long parse_integer(std::string_view s, std::size_t row, const std::string& column) {
  if (s.empty()) throw ParseError(row, "missing value in column '" + column + "'");
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(row, "expected an integer in column '" + column + "', got '" + std::string(s) + "'");
  }
  return v;
}

struct PendingUnit {
  long unit_id;
  double y;
  int a;
  std::vector<double> x;
  std::size_t row;
};

struct PendingCluster {
  std::string id;
  std::optional<long> type;
  std::size_t first_row;
  std::vector<PendingUnit> units;
};

}  // namespace

Dataset read_dataset(std::istream& in, const IngestSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty input, header required");
  const auto header_views = split_fields(line);
  std::vector<std::string> header(header_views.begin(), header_views.end());

  auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto cid_col = find_col("cluster_id");
  const auto uid_col = find_col("unit_id");
  const auto y_col = find_col("y");
  const auto a_col = find_col("a");
  if (!cid_col || !uid_col || !y_col || !a_col) {
    throw ParseError(1, "header must contain cluster_id, unit_id, y and a");
  }
  std::optional<std::size_t> type_col;
  if (!schema.type_column.empty()) type_col = find_col(schema.type_column);

  std::vector<std::size_t> x_cols;
  std::vector<std::string> x_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == *cid_col || c == *uid_col || c == *y_col || c == *a_col || (type_col && c == *type_col)) continue;
    x_cols.push_back(c);
    x_names.push_back(header[c]);
  }

  std::vector<PendingCluster> pending;
  std::unordered_map<std::string, std::size_t> index_of;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(row, "expected " + std::to_string(header.size()) + " fields, found " +
                                std::to_string(fields.size()));
    }
    const std::string cid(fields[*cid_col]);
    if (cid.empty()) throw ParseError(row, "missing cluster_id");
    PendingUnit unit;
    unit.row = row;
    unit.unit_id = parse_integer(fields[*uid_col], row, "unit_id");
    unit.y = parse_real(fields[*y_col], row, "y");
    const long a = parse_integer(fields[*a_col], row, "a");
    if (a != 0 && a != 1) throw ParseError(row, "treatment must be 0 or 1, got " + std::to_string(a));
    unit.a = static_cast<int>(a);
    unit.x.reserve(x_cols.size());
    for (std::size_t c = 0; c < x_cols.size(); ++c) unit.x.push_back(parse_real(fields[x_cols[c]], row, x_names[c]));

    auto [it, inserted] = index_of.try_emplace(cid, pending.size());
    if (inserted) pending.push_back(PendingCluster{cid, std::nullopt, row, {}});
    auto& cluster = pending[it->second];
    if (type_col) {
      const long t = parse_integer(fields[*type_col], row, schema.type_column);
      if (cluster.type && *cluster.type != t) throw ParseError(row, "type label changes within cluster " + cid);
      cluster.type = t;
    }
    cluster.units.push_back(std::move(unit));
  }
  if (pending.empty()) throw ParseError(row, "no data rows");

  // size-derived types are ranked 1..K by ascending cluster size
  std::map<std::size_t, int> size_rank;
  if (!type_col) {
    for (const auto& c : pending) size_rank[c.units.size()] = 0;
    int r = 0;
    for (auto& [size, rank] : size_rank) rank = ++r;
  }

  std::vector<ClusterObservation> clusters;
  clusters.reserve(pending.size());
  for (auto& pc : pending) {
    std::stable_sort(pc.units.begin(), pc.units.end(),
                     [](const PendingUnit& l, const PendingUnit& r) { return l.unit_id < r.unit_id; });
    for (std::size_t u = 1; u < pc.units.size(); ++u) {
      if (pc.units[u].unit_id == pc.units[u - 1].unit_id) {
        throw ParseError(pc.units[u].row, "duplicate unit_id in cluster " + pc.id);
      }
    }
    const std::size_t m = pc.units.size();
    if (m > schema.enumeration_cap) {
      throw ParseError(pc.first_row, "cluster " + pc.id + ": " + CapacityError(m, schema.enumeration_cap).what());
    }
    ClusterObservation obs;
    obs.id = pc.id;
    obs.type = type_col ? static_cast<int>(*pc.type) : size_rank.at(m);
    obs.y.resize(static_cast<Eigen::Index>(m));
    obs.x.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(x_cols.size()));
    std::vector<std::uint8_t> bits(m);
    for (std::size_t j = 0; j < m; ++j) {
      const auto& u = pc.units[j];
      obs.y(static_cast<Eigen::Index>(j)) = u.y;
      bits[j] = static_cast<std::uint8_t>(u.a);
      for (std::size_t c = 0; c < x_cols.size(); ++c) {
        obs.x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = u.x[c];
      }
    }
    obs.a = TreatmentVector(std::move(bits));
    clusters.push_back(std::move(obs));
  }
  try {
    return Dataset(std::move(clusters), x_names, schema.enumeration_cap);
  } catch (const DomainError& e) {
    throw ParseError(row, e.what());
  }
}

Dataset load_dataset(const std::string& path, const IngestSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_dataset(in, schema);
}

void write_dataset(std::ostream& out, const Dataset& data, bool with_type) {
  out << "cluster_id,unit_id,y,a";
  for (const auto& n : data.covariate_names()) out << ',' << n;
  if (with_type) out << ",type";
  out << '\n';
  char buf[64];
  auto put = [&](double v) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, ptr - buf);
  };
  for (const auto& c : data.clusters()) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      out << c.id << ',' << (j + 1) << ',';
      put(c.y(r));
      out << ',' << c.a[j];
      for (Eigen::Index col = 0; col < c.x.cols(); ++col) {
        out << ',';
        put(c.x(r, col));
      }
      if (with_type) out << ',' << c.type;
      out << '\n';
    }
  }
}

void save_dataset(const std::string& path, const Dataset& data, bool with_type) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_dataset(out, data, with_type);
}

}  // namespace netfx
