#include "fedchem/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fedchem {

namespace {

bool is_missing_token(const std::string& cell) {
  if (cell.empty()) return true;
  std::string lower(cell.size(), '\0');
  std::transform(cell.begin(), cell.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return lower == "na" || lower == "nan" || lower == "null" || lower == "none";
}

double parse_label(const std::string& cell, TaskType task_type, std::size_t record,
                   const std::string& column) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  if (end == begin || end != begin + cell.size()) {
    throw BadLabelValue("record " + std::to_string(record) + ", column '" + column +
                        "': not a number: '" + cell + "'");
  }
  if (task_type == TaskType::BinaryMultilabel && value != 0.0 && value != 1.0) {
    throw BadLabelValue("record " + std::to_string(record) + ", column '" + column +
                        "': classification labels must be 0 or 1, got '" + cell + "'");
  }
  return value;
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name,
                        const std::string& path) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw MissingColumn("column '" + name + "' not found in " + path);
  }
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;  // distinguishes a trailing newline from an empty record

  const auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  const auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        field_started = true;
        break;
      case ',':
        field_started = true;  // the record now has at least two fields
        end_field();
        break;
      case '\r':
        break;  // handled with the following \n; stray \r is ignored
      case '\n':
        if (field_started || !field.empty() || !record.empty()) end_record();
        break;
      default:
        field.push_back(c);
        field_started = true;
        break;
    }
  }
  if (quoted) throw DatasetError("unterminated quoted field in " + path);
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

Dataset load_dataset(const DatasetFileSpec& spec) {
  const std::vector<std::vector<std::string>> rows = read_csv(spec.path);
  if (rows.empty()) throw DatasetError("empty file: " + spec.path);
  const std::vector<std::string>& header = rows.front();

  const std::size_t smiles_col = find_column(header, spec.smiles_column, spec.path);

  std::vector<std::string> task_names = spec.task_columns;
  if (task_names.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c != smiles_col) task_names.push_back(header[c]);
    }
  }
  if (task_names.empty()) throw DatasetError("no task columns in " + spec.path);
  std::vector<std::size_t> task_cols;
  task_cols.reserve(task_names.size());
  for (const std::string& name : task_names) {
    task_cols.push_back(find_column(header, name, spec.path));
  }

  Dataset ds;
  ds.task_type = spec.task_type;
  ds.task_names = task_names;
  const std::size_t T = task_names.size();

  std::vector<double> label_rows;
  std::vector<double> mask_rows;

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::vector<std::string>& row = rows[r];
    const std::size_t record = r;  // 1-based data record
    if (row.size() != header.size()) {
      throw DatasetError("record " + std::to_string(record) + " has " +
                         std::to_string(row.size()) + " fields, header has " +
                         std::to_string(header.size()) + " in " + spec.path);
    }
    const std::string& smiles = row[smiles_col];

    std::vector<double> labels(T, 0.0), present(T, 0.0);
    bool any_present = false;
    for (std::size_t t = 0; t < T; ++t) {
      const std::string& cell = row[task_cols[t]];
      if (is_missing_token(cell)) continue;
      labels[t] = parse_label(cell, spec.task_type, record, task_names[t]);
      present[t] = 1.0;
      any_present = true;
    }
    if (!any_present) {
      ds.rejects.push_back({record, smiles, "all labels missing"});
      continue;
    }

    MolGraph graph;
    try {
      graph = parse_smiles(smiles);
    } catch (const ParseError& err) {
      ds.rejects.push_back({record, smiles, std::string("structure parse error: ") + err.what()});
      continue;
    }

    ds.smiles.push_back(smiles);
    ds.feats.push_back(featurize(graph));
    ds.graphs.push_back(std::move(graph));
    label_rows.insert(label_rows.end(), labels.begin(), labels.end());
    mask_rows.insert(mask_rows.end(), present.begin(), present.end());
  }

  const std::size_t n = ds.graphs.size();
  ds.labels = Matrix(n, T);
  ds.mask = Matrix(n, T);
  ds.labels.data = std::move(label_rows);
  ds.mask.data = std::move(mask_rows);
  return ds;
}

}  // namespace fedchem
