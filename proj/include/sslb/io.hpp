#pragma once

#include "sslb/evaluate.hpp"
#include "sslb/simulate.hpp"
#include "sslb/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sslb {

// Delimited expression matrix: header row of gene ids, first column of
// sample ids; tab or comma separated (sniffed on read, tabs on write).
ExpressionMatrix read_expression_matrix(const std::string& path);
void write_expression_matrix(const std::string& path,
                             const ExpressionMatrix& x);

// Outcome file: two columns sample_id,class_label. Class order is the
// sorted set of labels; the reference class is selected by name.
OutcomeMatrix read_outcome_matrix(const std::string& path,
                                  const std::vector<std::string>& sample_ids,
                                  const std::string& reference_label);
void write_outcome_matrix(const std::string& path, const OutcomeMatrix& y,
                          const std::vector<std::string>& sample_ids);

// Arbitrary numeric matrix with row/column labels (for Z, gamma_tilde dumps).
void write_labeled_matrix(const std::string& path, const Matrix& m,
                          const std::vector<std::string>& row_ids,
                          const std::vector<std::string>& col_ids);

BiclusterSet read_biclusters_json(const std::string& path);
void write_biclusters_json(const std::string& path, const BiclusterSet& set,
                           const std::string& score_convention = "");

// Flat sectioned key=value configuration text. Parse errors carry line
// numbers. Values keep their raw text; typed getters convert on demand.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text,
                                 const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  int get_int(const std::string& section, const std::string& key,
              int fallback) const;
  std::uint64_t get_seed(const std::string& section, const std::string& key,
                         std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;
  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<std::string> get_string_list(
      const std::string& section, const std::string& key,
      const std::vector<std::string>& fallback) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::string origin_;

  const std::string* find(const std::string& section,
                          const std::string& key) const;
  [[noreturn]] void fail(const std::string& section, const std::string& key,
                         const std::string& what) const;
};

FitConfig fit_config_from_file(const ConfigFile& cfg);
SimConfig sim_config_from_file(const ConfigFile& cfg);
StudyConfig study_config_from_file(const ConfigFile& cfg);
std::string reference_label_from_file(const ConfigFile& cfg);

// Atomic text write (temp file + rename).
void write_text_atomic(const std::string& path, const std::string& content);

// Run manifest (JSON): command, resolved config snapshot, seed, timestamps,
// artifact paths, plus command-specific extras.
std::string manifest_json(const std::string& command, const FitConfig& fit,
                          const SimConfig* sim, std::uint64_t seed,
                          const std::string& started_at,
                          const std::string& finished_at,
                          const std::vector<std::string>& artifacts,
                          const std::map<std::string, std::string>& extras);

std::string iso_timestamp_now();

std::string format_double(double v);

}  // namespace sslb
