#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedchem/molgraph.hpp"
#include "fedchem/nnet.hpp"
#include "fedchem/tensor.hpp"

namespace fedchem {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingColumn : DatasetError {
  using DatasetError::DatasetError;
};

// A label cell that is present but unusable: not a number, or (for
// classification) not exactly 0 or 1.
struct BadLabelValue : DatasetError {
  using DatasetError::DatasetError;
};

/**
 * RFC-4180-style CSV: quoted fields may contain commas, doubled quotes and
 * newlines; CRLF and LF both end records. Returns one string vector per
 * record, including the header.
 */
std::vector<std::vector<std::string>> read_csv(const std::string& path);

struct DatasetFileSpec {
  std::string path;
  std::string smiles_column = "smiles";
  std::vector<std::string> task_columns;  // empty: every column but the SMILES one
  TaskType task_type = TaskType::Regression;
};

struct RejectedRow {
  std::size_t record = 0;  // 1-based data record index (header excluded)
  std::string smiles;
  std::string reason;
};

struct Dataset {
  TaskType task_type = TaskType::Regression;
  std::vector<std::string> task_names;
  std::vector<std::string> smiles;  // accepted rows, in file order
  std::vector<MolGraph> graphs;
  std::vector<GraphFeatures> feats;
  Matrix labels;  // n x T; 0.0 placeholder where mask is 0
  Matrix mask;    // n x T; 1.0 observed, 0.0 missing
  std::vector<RejectedRow> rejects;

  std::size_t size() const { return graphs.size(); }
};

/**
 * Loads a molecular property table. Rows whose structure text fails to parse,
 * and rows with every label missing (empty, NA or NaN cells), are recorded in
 * `rejects` and excluded; individually missing labels only clear the mask.
 * Malformed numeric cells and non-binary classification labels abort the load
 * with BadLabelValue.
 */
Dataset load_dataset(const DatasetFileSpec& spec);

}  // namespace fedchem
