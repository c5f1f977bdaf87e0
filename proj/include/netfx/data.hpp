#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace netfx {

inline constexpr std::size_t kDefaultEnumerationCap = 15;

/// Binary treatment assignment of one cluster; entry j is unit j's treatment.
class TreatmentVector {
 public:
  TreatmentVector() = default;
  explicit TreatmentVector(std::vector<std::uint8_t> bits);
  TreatmentVector(std::initializer_list<int> bits);

  /// Vector of length `size` whose bit j is bit j of `code`.
  static TreatmentVector from_code(std::uint32_t code, std::size_t size);

  std::size_t size() const { return bits_.size(); }
  int operator[](std::size_t j) const { return bits_[j]; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  /// Bitmask with bit j set iff unit j is treated. Equals the position of
  /// this vector in enumerate_assignments(size()).
  std::uint32_t code() const;
  int treated_count() const;
  /// Number of treated units other than unit j.
  int peers_treated(std::size_t j) const { return treated_count() - bits_[j]; }

  std::string to_string() const;

  friend bool operator==(const TreatmentVector&, const TreatmentVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct ClusterObservation {
  std::string id;
  int type = 1;
  Eigen::VectorXd y;
  TreatmentVector a;
  Eigen::MatrixXd x;  // row j holds unit j's covariates

  std::size_t size() const { return a.size(); }
  std::size_t covariate_dim() const { return static_cast<std::size_t>(x.cols()); }
};

struct ClusterTypeInfo {
  int k = 1;
  std::size_t size = 0;
  std::size_t covariate_dim = 0;
  std::size_t count = 0;
};

struct TypeProportions {
  std::map<int, double> p_hat;
  bool known = false;

  double at(int k) const;
};

/// Immutable collection of clusters; validated on construction.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<ClusterObservation> clusters,
          std::vector<std::string> covariate_names = {},
          std::size_t enumeration_cap = kDefaultEnumerationCap);

  const std::vector<ClusterObservation>& clusters() const { return clusters_; }
  const ClusterObservation& operator[](std::size_t i) const { return clusters_[i]; }
  const std::map<int, ClusterTypeInfo>& types() const { return types_; }
  const ClusterTypeInfo& type(int k) const;
  bool has_type(int k) const { return types_.count(k) != 0; }
  std::size_t size() const { return clusters_.size(); }
  std::size_t covariate_dim() const { return covariate_names_.size(); }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  std::size_t enumeration_cap() const { return enumeration_cap_; }

  /// Empirical type proportions N_k / N.
  TypeProportions proportions() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
  /// Same clusters relabelled with new types (one label per cluster).
  Dataset retyped(const std::vector<int>& labels) const;

  friend bool operator==(const Dataset& lhs, const Dataset& rhs);

 private:
  std::vector<ClusterObservation> clusters_;
  std::vector<std::string> covariate_names_;
  std::map<int, ClusterTypeInfo> types_;
  std::size_t enumeration_cap_ = kDefaultEnumerationCap;
};

/// All 2^M assignments, least-significant unit index varying fastest.
std::vector<TreatmentVector> enumerate_assignments(
    std::size_t size, std::size_t cap = kDefaultEnumerationCap);

/// Shared, lazily built enumeration tables (thread safe).
const std::vector<TreatmentVector>& assignments_of(std::size_t size);

/// Probability of the peers' treatments under independent Bernoulli(alpha).
double policy_weight(const TreatmentVector& peers, double alpha);

/// Probability of a's peers (all units but j) under Bernoulli(alpha).
double policy_weight_excluding(const TreatmentVector& a, std::size_t j, double alpha);

struct IngestSchema {
  /// Column holding explicit type labels; when empty (or absent from the
  /// header) types are derived from cluster size.
  std::string type_column = "type";
  std::size_t enumeration_cap = kDefaultEnumerationCap;
};

Dataset load_dataset(const std::string& path, const IngestSchema& schema = {});
Dataset read_dataset(std::istream& in, const IngestSchema& schema = {});
void write_dataset(std::ostream& out, const Dataset& data, bool with_type = true);
void save_dataset(const std::string& path, const Dataset& data, bool with_type = true);

}  // namespace netfx
