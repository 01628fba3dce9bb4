#include "popsynth/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace popsynth {

namespace fs = std::filesystem;

const char* to_string(FeatureKind kind) noexcept {
  switch (kind) {
    case FeatureKind::ContinuousPositive: return "continuous-positive";
    case FeatureKind::ContinuousReal: return "continuous-real";
    case FeatureKind::Share: return "share";
  }
  return "?";
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "continuous-positive") return FeatureKind::ContinuousPositive;
  if (text == "continuous-real") return FeatureKind::ContinuousReal;
  if (text == "share") return FeatureKind::Share;
  throw Error(Errc::SchemaInvalid, "unknown feature kind '" + std::string(text) + "'");
}

std::string CategoricalGroup::class_label(Index cls, const std::vector<FeatureDef>& features) const {
  if (binary) return cls == 0 ? "1" : "0";
  const std::string& col = features.at(static_cast<std::size_t>(columns.at(static_cast<std::size_t>(cls)))).name;
  const std::string prefix = name + "_";
  if (col.size() > prefix.size() && col.compare(0, prefix.size(), prefix) == 0) {
    return col.substr(prefix.size());
  }
  return col;
}

// ---------------------------------------------------------------------------
// FeatureSchema

FeatureSchema::FeatureSchema(std::vector<FeatureDef> features) : features_(std::move(features)) {
  std::set<std::string> names;
  for (const auto& f : features_) {
    if (f.name.empty()) throw Error(Errc::SchemaInvalid, "feature with empty name");
    if (f.name == "unit_id" || f.name == "n" || f.name == "k") {
      throw Error(Errc::SchemaInvalid, "feature name '" + f.name + "' is reserved");
    }
    if (!names.insert(f.name).second) {
      throw Error(Errc::SchemaInvalid, "duplicate feature '" + f.name + "'");
    }
    if (f.group && f.kind != FeatureKind::Share) {
      throw Error(Errc::SchemaInvalid, "feature '" + f.name + "' has a group but is not a share");
    }
    if (f.role == Role::Batch && f.batch.empty()) {
      throw Error(Errc::SchemaInvalid, "batch feature '" + f.name + "' has no batch label");
    }
    if (f.role == Role::Core && !f.batch.empty()) {
      throw Error(Errc::SchemaInvalid, "core feature '" + f.name + "' also names a batch");
    }
  }

  group_index_.assign(features_.size(), std::nullopt);
  std::unordered_map<std::string, Index> group_by_name;
  for (Index i = 0; i < size(); ++i) {
    const auto& f = features_[static_cast<std::size_t>(i)];
    if (f.kind != FeatureKind::Share) continue;
    if (!f.group) {
      CategoricalGroup g{f.name, {i}, true, f.role, f.batch};
      group_index_[static_cast<std::size_t>(i)] = static_cast<Index>(groups_.size());
      groups_.push_back(std::move(g));
      continue;
    }
    auto it = group_by_name.find(*f.group);
    if (it == group_by_name.end()) {
      if (names.count(*f.group)) {
        throw Error(Errc::SchemaInvalid, "group '" + *f.group + "' collides with a feature name");
      }
      it = group_by_name.emplace(*f.group, static_cast<Index>(groups_.size())).first;
      groups_.push_back(CategoricalGroup{*f.group, {}, false, f.role, f.batch});
    }
    auto& g = groups_[static_cast<std::size_t>(it->second)];
    if (g.role != f.role || g.batch != f.batch) {
      throw Error(Errc::SchemaInvalid,
                  "columns of group '" + g.name + "' must share role and batch");
    }
    g.columns.push_back(i);
    group_index_[static_cast<std::size_t>(i)] = it->second;
  }
  for (const auto& g : groups_) {
    if (!g.binary && g.columns.size() < 2) {
      throw Error(Errc::SchemaInvalid, "group '" + g.name + "' needs at least two share columns");
    }
  }

  for (const auto& f : features_) {
    if (f.role == Role::Core) {
      core_.push_back(f.name);
      continue;
    }
    auto pos = std::find(batch_labels_.begin(), batch_labels_.end(), f.batch);
    if (pos == batch_labels_.end()) {
      batch_labels_.push_back(f.batch);
      batches_.emplace_back();
      pos = batch_labels_.end() - 1;
    }
    batches_[static_cast<std::size_t>(pos - batch_labels_.begin())].push_back(f.name);
  }
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& doc) {
  const nlohmann::json* list = &doc;
  if (doc.is_object()) {
    for (const auto& [key, _] : doc.items()) {
      if (key != "features") throw Error(Errc::SchemaInvalid, "unknown schema key '" + key + "'");
    }
    if (!doc.contains("features")) throw Error(Errc::SchemaInvalid, "schema has no 'features'");
    list = &doc.at("features");
  }
  if (!list->is_array()) throw Error(Errc::SchemaInvalid, "'features' must be an array");

  std::vector<FeatureDef> defs;
  for (const auto& item : *list) {
    if (!item.is_object()) throw Error(Errc::SchemaInvalid, "feature entries must be objects");
    FeatureDef def;
    bool has_role = false;
    for (const auto& [key, value] : item.items()) {
      if (key == "name") {
        def.name = value.get<std::string>();
      } else if (key == "kind") {
        def.kind = parse_feature_kind(value.get<std::string>());
      } else if (key == "group") {
        if (!value.is_null()) def.group = value.get<std::string>();
      } else if (key == "role") {
        const auto role = value.get<std::string>();
        if (role == "core") {
          def.role = Role::Core;
        } else if (role == "batch") {
          def.role = Role::Batch;
        } else {
          throw Error(Errc::SchemaInvalid, "unknown role '" + role + "'");
        }
        has_role = true;
      } else if (key == "batch") {
        if (value.is_number_integer()) {
          def.batch = std::to_string(value.get<long long>());
        } else if (value.is_string()) {
          def.batch = value.get<std::string>();
        } else if (!value.is_null()) {
          throw Error(Errc::SchemaInvalid, "'batch' must be a string or integer");
        }
      } else {
        throw Error(Errc::SchemaInvalid, "unknown feature key '" + key + "'");
      }
    }
    if (!has_role) def.role = def.batch.empty() ? Role::Core : Role::Batch;
    defs.push_back(std::move(def));
  }
  return FeatureSchema(std::move(defs));
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : features_) {
    nlohmann::json item{{"name", f.name}, {"kind", to_string(f.kind)},
                        {"role", f.role == Role::Core ? "core" : "batch"}};
    if (f.group) item["group"] = *f.group;
    if (!f.batch.empty()) item["batch"] = f.batch;
    features.push_back(std::move(item));
  }
  return nlohmann::json{{"features", std::move(features)}};
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  out.reserve(features_.size());
  for (const auto& f : features_) out.push_back(f.name);
  return out;
}

std::optional<Index> FeatureSchema::find(std::string_view name) const {
  for (Index i = 0; i < size(); ++i) {
    if (features_[static_cast<std::size_t>(i)].name == name) return i;
  }
  return std::nullopt;
}

Index FeatureSchema::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw Error(Errc::MissingColumn, "feature '" + std::string(name) + "' not in schema");
}

std::optional<Index> FeatureSchema::group_of(Index feature) const {
  return group_index_.at(static_cast<std::size_t>(feature));
}

std::optional<Index> FeatureSchema::find_group(std::string_view name) const {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (groups_[g].name == name) return static_cast<Index>(g);
  }
  return std::nullopt;
}

std::vector<Variable> FeatureSchema::variables() const {
  std::vector<Variable> out;
  std::vector<bool> seen(groups_.size(), false);
  for (Index i = 0; i < size(); ++i) {
    const auto& f = features_[static_cast<std::size_t>(i)];
    if (f.continuous()) {
      out.push_back({f.name, false, i});
      continue;
    }
    const Index g = *group_index_[static_cast<std::size_t>(i)];
    if (seen[static_cast<std::size_t>(g)]) continue;
    seen[static_cast<std::size_t>(g)] = true;
    out.push_back({groups_[static_cast<std::size_t>(g)].name, true, g});
  }
  return out;
}

std::vector<std::string> FeatureSchema::in_schema_order(const std::vector<std::string>& names) const {
  std::vector<std::pair<Index, std::string>> keyed;
  keyed.reserve(names.size());
  for (const auto& n : names) keyed.emplace_back(index_of(n), n);
  std::sort(keyed.begin(), keyed.end());
  keyed.erase(std::unique(keyed.begin(), keyed.end()), keyed.end());
  std::vector<std::string> out;
  for (auto& [_, n] : keyed) out.push_back(std::move(n));
  return out;
}

FeatureSchema load_schema(const fs::path& path) {
  const std::string text = read_text(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaInvalid, path.string() + ": " + e.what());
  }
  try {
    return FeatureSchema::from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaInvalid, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CoarseTable

CoarseTable::CoarseTable(std::vector<std::string> unit_ids, std::vector<long> sizes, Matrix values,
                         std::vector<std::string> columns)
    : unit_ids_(std::move(unit_ids)),
      sizes_(std::move(sizes)),
      values_(std::move(values)),
      columns_(std::move(columns)) {
  if (static_cast<Index>(sizes_.size()) != num_units() || values_.rows() != num_units()) {
    throw Error(Errc::RowLength, "coarse table unit/size/value counts disagree");
  }
  if (values_.cols() != static_cast<Index>(columns_.size())) {
    throw Error(Errc::RowLength, "coarse table has " + std::to_string(values_.cols()) +
                                     " value columns for " + std::to_string(columns_.size()) +
                                     " names");
  }
  std::set<std::string> ids;
  for (std::size_t m = 0; m < unit_ids_.size(); ++m) {
    if (!ids.insert(unit_ids_[m]).second) {
      throw Error(Errc::SchemaInvalid, "duplicate unit id '" + unit_ids_[m] + "'");
    }
    if (sizes_[m] < 1) {
      throw Error(Errc::InvalidUnitSize, "unit '" + unit_ids_[m] + "' has n = " +
                                             std::to_string(sizes_[m]));
    }
  }
}

Index CoarseTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i] == name) return static_cast<Index>(i);
  }
  throw Error(Errc::MissingColumn, "coarse table has no column '" + std::string(name) + "'");
}

std::optional<Index> CoarseTable::find_unit(std::string_view unit_id) const {
  for (std::size_t m = 0; m < unit_ids_.size(); ++m) {
    if (unit_ids_[m] == unit_id) return static_cast<Index>(m);
  }
  return std::nullopt;
}

long CoarseTable::total_size() const {
  long total = 0;
  for (long n : sizes_) total += n;
  return total;
}

CoarseTable CoarseTable::select_units(const std::vector<Index>& rows) const {
  std::vector<std::string> ids;
  std::vector<long> sizes;
  Matrix values(static_cast<Index>(rows.size()), values_.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto m = static_cast<std::size_t>(rows[r]);
    ids.push_back(unit_ids_.at(m));
    sizes.push_back(sizes_.at(m));
    values.row(static_cast<Index>(r)) = values_.row(rows[r]);
  }
  return CoarseTable(std::move(ids), std::move(sizes), std::move(values), columns_);
}

void validate_coarse(const CoarseTable& table, const FeatureSchema& schema) {
  if (table.columns() != schema.names()) {
    throw Error(Errc::SchemaInvalid, "coarse table columns do not follow schema order");
  }
  if (table.num_units() < 2) {
    throw Error(Errc::TooFewUnits, "coarse table needs at least 2 units, has " +
                                       std::to_string(table.num_units()));
  }
  const Matrix& v = table.values();
  for (Index m = 0; m < table.num_units(); ++m) {
    const std::string& uid = table.unit_ids()[static_cast<std::size_t>(m)];
    for (Index d = 0; d < schema.size(); ++d) {
      const auto& f = schema.feature(d);
      const double x = v(m, d);
      if (!std::isfinite(x)) {
        throw Error(Errc::NonNumeric, "row " + std::to_string(m + 1) + " (" + uid + "), column '" +
                                          f.name + "': non-finite value");
      }
      if (f.kind == FeatureKind::Share && (x < 0.0 || x > 1.0)) {
        throw Error(Errc::ShareOutOfRange, "row " + std::to_string(m + 1) + " (" + uid +
                                               "), column '" + f.name + "': " + format_double(x));
      }
    }
    for (const auto& g : schema.groups()) {
      if (g.binary) continue;
      double sum = 0.0;
      for (Index c : g.columns) sum += v(m, c);
      if (std::abs(sum - 1.0) > 1e-6) {
        throw Error(Errc::GroupSumMismatch, "row " + std::to_string(m + 1) + " (" + uid +
                                                "), group '" + g.name + "' sums to " +
                                                format_double(sum));
      }
    }
  }
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

long parse_count(std::string_view text, std::size_t row) {
  long n = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, n);
  if (ec != std::errc() || ptr != end) {
    throw Error(Errc::NonNumeric, "row " + std::to_string(row) + ", column 'n': '" +
                                      std::string(text) + "' is not an integer");
  }
  return n;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto* begin = text.data();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw Error(Errc::NonNumeric, "'" + std::string(text) + "' is not a decimal number");
  }
  return v;
}

CoarseTable parse_coarse_csv(std::string_view text, const FeatureSchema& schema) {
  const StringTable raw = parse_csv(text);
  if (raw.header.empty()) throw Error(Errc::MissingHeader, "coarse table is empty");
  if (raw.header.size() < 2 || raw.header[0] != "unit_id" || raw.header[1] != "n") {
    throw Error(Errc::MissingHeader, "coarse header must start with 'unit_id,n'");
  }
  std::vector<Index> source(static_cast<std::size_t>(schema.size()), -1);
  for (std::size_t c = 2; c < raw.header.size(); ++c) {
    const auto d = schema.find(raw.header[c]);
    if (!d) {
      throw Error(Errc::SchemaInvalid, "column " + std::to_string(c + 1) + " '" + raw.header[c] +
                                           "' is not in the schema");
    }
    source[static_cast<std::size_t>(*d)] = static_cast<Index>(c);
  }
  for (Index d = 0; d < schema.size(); ++d) {
    if (source[static_cast<std::size_t>(d)] < 0) {
      throw Error(Errc::MissingColumn, "coarse table lacks column '" + schema.feature(d).name + "'");
    }
  }

  const auto rows = static_cast<Index>(raw.rows.size());
  std::vector<std::string> ids;
  std::vector<long> sizes;
  Matrix values(rows, schema.size());
  for (Index r = 0; r < rows; ++r) {
    const auto& row = raw.rows[static_cast<std::size_t>(r)];
    const std::size_t line = static_cast<std::size_t>(r) + 2;
    if (row.size() != raw.header.size()) {
      throw Error(Errc::RowLength, "line " + std::to_string(line) + " has " +
                                       std::to_string(row.size()) + " cells, header has " +
                                       std::to_string(raw.header.size()));
    }
    ids.push_back(row[0]);
    const long n = parse_count(row[1], line);
    if (n <= 0) {
      throw Error(Errc::InvalidUnitSize, "line " + std::to_string(line) + ", column 'n': " +
                                             std::to_string(n) + " is not positive");
    }
    sizes.push_back(n);
    for (Index d = 0; d < schema.size(); ++d) {
      const auto c = static_cast<std::size_t>(source[static_cast<std::size_t>(d)]);
      const auto& f = schema.feature(d);
      double x = 0.0;
      try {
        x = parse_double(row[c]);
      } catch (const Error&) {
        throw Error(Errc::NonNumeric, "line " + std::to_string(line) + ", column '" + f.name +
                                          "': '" + row[c] + "' is not a decimal number");
      }
      if (f.kind == FeatureKind::Share && !(x >= 0.0 && x <= 1.0)) {
        throw Error(Errc::ShareOutOfRange, "line " + std::to_string(line) + ", column '" + f.name +
                                               "': " + row[c] + " outside [0, 1]");
      }
      values(r, d) = x;
    }
  }
  CoarseTable table(std::move(ids), std::move(sizes), std::move(values), schema.names());
  validate_coarse(table, schema);
  return table;
}

CoarseTable load_coarse_table(const fs::path& path, const FeatureSchema& schema) {
  return parse_coarse_csv(read_text(path), schema);
}

void write_coarse_table(const CoarseTable& table, const fs::path& path) {
  std::string out = "unit_id,n";
  for (const auto& c : table.columns()) out += "," + c;
  out += "\n";
  for (Index m = 0; m < table.num_units(); ++m) {
    out += table.unit_ids()[static_cast<std::size_t>(m)];
    out += "," + std::to_string(table.sizes()[static_cast<std::size_t>(m)]);
    for (Index d = 0; d < table.num_features(); ++d) out += "," + format_double(table.values()(m, d));
    out += "\n";
  }
  write_text(path, out);
}

// ---------------------------------------------------------------------------
// SyntheticPopulation

const char* to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::PostCopula: return "post-copula";
    case Provenance::PostBatch: return "post-batch";
    case Provenance::PostScaling: return "post-scaling";
  }
  return "?";
}

Provenance parse_provenance(std::string_view text) {
  if (text == "post-copula") return Provenance::PostCopula;
  if (text == "post-batch") return Provenance::PostBatch;
  if (text == "post-scaling") return Provenance::PostScaling;
  throw Error(Errc::SchemaInvalid, "unknown provenance '" + std::string(text) + "'");
}

SyntheticPopulation::SyntheticPopulation(std::vector<UnitBlock> units, std::vector<std::string> columns,
                                         Matrix values, Provenance provenance)
    : units_(std::move(units)),
      columns_(std::move(columns)),
      values_(std::move(values)),
      provenance_(provenance) {
  if (values_.cols() != static_cast<Index>(columns_.size())) {
    throw Error(Errc::DimensionMismatch, "population value columns do not match names");
  }
  Index expected = 0;
  for (const auto& u : units_) {
    if (u.offset != expected || u.size < 0) {
      throw Error(Errc::KeyMismatch, "unit blocks must be consecutive");
    }
    expected += u.size;
  }
  if (expected != values_.rows()) {
    throw Error(Errc::DimensionMismatch, "unit blocks cover " + std::to_string(expected) +
                                             " rows, values have " + std::to_string(values_.rows()));
  }
}

std::optional<Index> SyntheticPopulation::find_column(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i] == name) return static_cast<Index>(i);
  }
  return std::nullopt;
}

Index SyntheticPopulation::column(std::string_view name) const {
  if (auto c = find_column(name)) return *c;
  throw Error(Errc::MissingColumn, "population has no column '" + std::string(name) + "'");
}

std::optional<Index> SyntheticPopulation::find_unit(std::string_view unit_id) const {
  for (std::size_t m = 0; m < units_.size(); ++m) {
    if (units_[m].unit_id == unit_id) return static_cast<Index>(m);
  }
  return std::nullopt;
}

std::vector<UnitBlock> SyntheticPopulation::layout(const std::vector<std::string>& ids,
                                                   const std::vector<long>& sizes) {
  std::vector<UnitBlock> out;
  Index offset = 0;
  for (std::size_t m = 0; m < ids.size(); ++m) {
    out.push_back({ids[m], offset, static_cast<Index>(sizes.at(m))});
    offset += sizes[m];
  }
  return out;
}

std::string population_to_csv(const SyntheticPopulation& pop) {
  std::string out = "unit_id,k";
  for (const auto& c : pop.columns()) out += "," + c;
  out += "\n";
  for (const auto& u : pop.units()) {
    for (Index k = 0; k < u.size; ++k) {
      out += u.unit_id;
      out += ",";
      out += std::to_string(k);
      const Index r = u.offset + k;
      for (Index c = 0; c < pop.num_columns(); ++c) {
        out += ",";
        out += format_double(pop.values()(r, c));
      }
      out += "\n";
    }
  }
  return out;
}

SyntheticPopulation parse_population_csv(std::string_view text) {
  const StringTable raw = parse_csv(text);
  if (raw.header.size() < 2 || raw.header[0] != "unit_id" || raw.header[1] != "k") {
    throw Error(Errc::MissingHeader, "population header must start with 'unit_id,k'");
  }
  std::vector<std::string> columns(raw.header.begin() + 2, raw.header.end());
  const auto rows = static_cast<Index>(raw.rows.size());
  Matrix values(rows, static_cast<Index>(columns.size()));
  std::vector<UnitBlock> units;
  std::set<std::string> closed;
  for (Index r = 0; r < rows; ++r) {
    const auto& row = raw.rows[static_cast<std::size_t>(r)];
    if (row.size() != raw.header.size()) {
      throw Error(Errc::RowLength, "population row " + std::to_string(r + 2) + " has wrong length");
    }
    if (units.empty() || units.back().unit_id != row[0]) {
      if (!units.empty()) closed.insert(units.back().unit_id);
      if (closed.count(row[0])) {
        throw Error(Errc::KeyMismatch, "unit '" + row[0] + "' rows are not contiguous");
      }
      units.push_back({row[0], r, 0});
    }
    const long k = parse_count(row[1], static_cast<std::size_t>(r) + 2);
    if (k != units.back().size) {
      throw Error(Errc::KeyMismatch, "row " + std::to_string(r + 2) + ": expected k = " +
                                         std::to_string(units.back().size));
    }
    ++units.back().size;
    for (std::size_t c = 2; c < row.size(); ++c) {
      values(r, static_cast<Index>(c - 2)) = parse_double(row[c]);
    }
  }
  return SyntheticPopulation(std::move(units), std::move(columns), std::move(values),
                             Provenance::PostCopula);
}

fs::path metadata_path(const fs::path& population_path) {
  fs::path p = population_path;
  p += ".meta.json";
  return p;
}

nlohmann::json population_metadata(const SyntheticPopulation& pop) {
  nlohmann::json units = nlohmann::json::array();
  for (const auto& u : pop.units()) units.push_back({{"unit_id", u.unit_id}, {"size", u.size}});
  return nlohmann::json{{"format", "popsynth-population"},
                        {"provenance", to_string(pop.provenance())},
                        {"columns", pop.columns()},
                        {"rows", pop.num_rows()},
                        {"units", std::move(units)}};
}

void write_population(const SyntheticPopulation& pop, const fs::path& path) {
  if (pop.num_rows() == 0) throw Error(Errc::MissingInput, "refusing to write an empty population");
  write_text(path, population_to_csv(pop));
  write_text(metadata_path(path), population_metadata(pop).dump(2) + "\n");
}

SyntheticPopulation read_population(const fs::path& path) {
  SyntheticPopulation pop = parse_population_csv(read_text(path));
  const fs::path meta = metadata_path(path);
  if (fs::exists(meta)) {
    const auto doc = nlohmann::json::parse(read_text(meta));
    pop.set_provenance(parse_provenance(doc.at("provenance").get<std::string>()));
  }
  return pop;
}

std::vector<int> realized_classes(const SyntheticPopulation& pop, const FeatureSchema& schema,
                                  const CategoricalGroup& group) {
  std::vector<Index> cols;
  for (Index c : group.columns) cols.push_back(pop.column(schema.feature(c).name));
  std::vector<int> out(static_cast<std::size_t>(pop.num_rows()), -1);
  for (Index r = 0; r < pop.num_rows(); ++r) {
    if (group.binary) {
      const double x = pop.values()(r, cols[0]);
      out[static_cast<std::size_t>(r)] = x == 1.0 ? 0 : (x == 0.0 ? 1 : -1);
      continue;
    }
    int cls = -1;
    bool valid = true;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double x = pop.values()(r, cols[j]);
      if (x == 1.0) {
        if (cls >= 0) valid = false;
        cls = static_cast<int>(j);
      } else if (x != 0.0) {
        valid = false;
      }
    }
    out[static_cast<std::size_t>(r)] = valid ? cls : -1;
  }
  return out;
}

Matrix variable_matrix(const SyntheticPopulation& pop, const FeatureSchema& schema) {
  const auto vars = schema.variables();
  Matrix out(pop.num_rows(), static_cast<Index>(vars.size()));
  for (std::size_t v = 0; v < vars.size(); ++v) {
    const auto j = static_cast<Index>(v);
    if (!vars[v].categorical) {
      out.col(j) = pop.values().col(pop.column(vars[v].name));
      continue;
    }
    const auto cls = realized_classes(pop, schema, schema.groups()[static_cast<std::size_t>(vars[v].index)]);
    for (Index r = 0; r < pop.num_rows(); ++r) out(r, j) = cls[static_cast<std::size_t>(r)];
  }
  return out;
}

std::string variable_text(const FeatureSchema& schema, const Variable& var, double value) {
  if (!var.categorical) return format_double(value);
  if (value < 0) return "NA";
  const auto& group = schema.groups()[static_cast<std::size_t>(var.index)];
  return group.class_label(static_cast<Index>(value), schema.features());
}

void assign_classes(SyntheticPopulation& pop, const FeatureSchema& schema,
                    const CategoricalGroup& group, Index offset, const std::vector<int>& classes) {
  std::vector<Index> cols;
  for (Index c : group.columns) cols.push_back(pop.column(schema.feature(c).name));
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const Index r = offset + static_cast<Index>(i);
    if (group.binary) {
      pop.values()(r, cols[0]) = classes[i] == 0 ? 1.0 : 0.0;
      continue;
    }
    for (std::size_t j = 0; j < cols.size(); ++j) {
      pop.values()(r, cols[j]) = static_cast<int>(j) == classes[i] ? 1.0 : 0.0;
    }
  }
}

// ---------------------------------------------------------------------------
// CSV

std::optional<std::size_t> StringTable::find_column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  return std::nullopt;
}

StringTable parse_csv(std::string_view text) {
  // Strip a UTF-8 byte order mark.
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  auto end_field = [&] {
    record.push_back(quoted ? field : trim(field));
    field.clear();
    quoted = false;
    field_started = false;
  };
  auto end_record = [&] {
    if (field_started || !record.empty() || !field.empty()) end_field();
    const bool blank = record.size() == 1 && record[0].empty();
    if (!record.empty() && !blank) records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted && field_started) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          field_started = false;  // closing quote; `quoted` stays set for end_field
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !quoted && trim(field).empty()) {
      quoted = true;
      field_started = true;
      field.clear();
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else {
      field += c;
      if (c != '\r') field_started = true;
    }
  }
  end_record();

  StringTable table;
  if (records.empty()) return table;
  table.header = std::move(records.front());
  table.rows.assign(std::make_move_iterator(records.begin() + 1),
                    std::make_move_iterator(records.end()));
  return table;
}

StringTable read_csv(const fs::path& path) { return parse_csv(read_text(path)); }

std::string to_csv(const StringTable& table) {
  auto cell = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::string out;
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      out += cell(row[i]);
    }
    out += "\n";
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  return out;
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(Errc::Io, "write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace popsynth
