#include "ldmrec/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "ldmrec/errors.hpp"

namespace ldmrec {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ------------------------------------------------------- InteractionMatrix

InteractionMatrix::InteractionMatrix(std::size_t num_users, std::size_t num_items,
                                     std::vector<std::vector<std::uint32_t>> rows)
    : num_items_(num_items), rows_(std::move(rows)) {
  if (rows_.size() != num_users) throw DataError("InteractionMatrix: row count does not match num_users");
  for (auto& row : rows_) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    if (!row.empty() && row.back() >= num_items) throw DataError("InteractionMatrix: item index out of range");
    nnz_ += row.size();
  }
}

double InteractionMatrix::density() const {
  const double cells = static_cast<double>(num_users()) * static_cast<double>(num_items_);
  return cells == 0.0 ? 0.0 : static_cast<double>(nnz_) / cells;
}

bool InteractionMatrix::contains(std::size_t u, std::uint32_t item) const {
  const auto& r = rows_.at(u);
  return std::binary_search(r.begin(), r.end(), item);
}

std::vector<std::size_t> InteractionMatrix::item_degrees() const {
  std::vector<std::size_t> deg(num_items_, 0);
  for (const auto& r : rows_)
    for (auto i : r) ++deg[i];
  return deg;
}

std::vector<double> InteractionMatrix::dense_row(std::size_t u) const {
  std::vector<double> out(num_items_, 0.0);
  dense_row_into(u, out);
  return out;
}

void InteractionMatrix::dense_row_into(std::size_t u, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (auto i : rows_.at(u)) out[i] = 1.0;
}

void InteractionMatrix::set_ids(std::vector<std::string> user_ids, std::vector<std::string> item_ids) {
  if ((!user_ids.empty() && user_ids.size() != num_users()) || (!item_ids.empty() && item_ids.size() != num_items_)) {
    throw DataError("InteractionMatrix: id map size mismatch");
  }
  user_ids_ = std::move(user_ids);
  item_ids_ = std::move(item_ids);
}

std::string InteractionMatrix::user_id(std::size_t u) const {
  return user_ids_.empty() ? std::to_string(u) : user_ids_.at(u);
}

std::string InteractionMatrix::item_id(std::size_t i) const {
  return item_ids_.empty() ? std::to_string(i) : item_ids_.at(i);
}

// --------------------------------------------------------------------- I/O

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\n')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

bool parse_integer(std::string_view s, long long& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

// Ascending order, numeric when every id is an integer.
std::vector<std::string> ordered_ids(const std::unordered_set<std::string>& ids) {
  std::vector<std::string> out(ids.begin(), ids.end());
  bool numeric = true;
  for (const auto& s : out) {
    long long v;
    if (!parse_integer(s, v)) {
      numeric = false;
      break;
    }
  }
  if (numeric) {
    std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
      long long x = 0, y = 0;
      parse_integer(a, x);
      parse_integer(b, y);
      return x != y ? x < y : a < b;
    });
  } else {
    std::sort(out.begin(), out.end());
  }
  return out;
}

// Splits "a<TAB>b"; returns false when the line is not exactly two fields.
bool split_pair(std::string_view line, std::string_view& a, std::string_view& b) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) return false;
  a = trim(line.substr(0, tab));
  b = trim(line.substr(tab + 1));
  if (a.empty() || b.empty() || b.find('\t') != std::string_view::npos) return false;
  return true;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

InteractionMatrix parse_interactions(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::unordered_set<std::string> users, items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    std::string_view a, b;
    if (!split_pair(v, a, b)) throw ParseError("expected \"user<TAB>item\"", line_no);
    pairs.emplace_back(std::string(a), std::string(b));
    users.emplace(a);
    items.emplace(b);
  }
  if (pairs.empty()) throw EmptyDatasetError("no interactions found");

  auto user_ids = ordered_ids(users);
  auto item_ids = ordered_ids(items);
  std::unordered_map<std::string, std::uint32_t> uidx, iidx;
  for (std::size_t i = 0; i < user_ids.size(); ++i) uidx.emplace(user_ids[i], static_cast<std::uint32_t>(i));
  for (std::size_t i = 0; i < item_ids.size(); ++i) iidx.emplace(item_ids[i], static_cast<std::uint32_t>(i));

  std::vector<std::vector<std::uint32_t>> rows(user_ids.size());
  for (const auto& [u, i] : pairs) rows[uidx[u]].push_back(iidx[i]);
  InteractionMatrix r(user_ids.size(), item_ids.size(), std::move(rows));
  r.set_ids(std::move(user_ids), std::move(item_ids));
  return r;
}

InteractionMatrix load_interactions(const fs::path& path) {
  auto in = open_in(path);
  return parse_interactions(in);
}

void save_interactions(const fs::path& path, const InteractionMatrix& r) {
  auto out = open_out(path);
  for (std::size_t u = 0; u < r.num_users(); ++u) {
    const std::string uid = r.user_id(u);
    for (auto i : r.row(u)) out << uid << '\t' << r.item_id(i) << '\n';
  }
}

InteractionMatrix load_indexed_interactions(const fs::path& path, std::size_t num_users, std::size_t num_items) {
  auto in = open_in(path);
  std::vector<std::vector<std::uint32_t>> rows(num_users);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    std::string_view a, b;
    long long u = 0, i = 0;
    if (!split_pair(v, a, b) || !parse_integer(a, u) || !parse_integer(b, i)) {
      throw ParseError("expected \"user_index<TAB>item_index\"", line_no);
    }
    if (u < 0 || i < 0 || static_cast<std::size_t>(u) >= num_users || static_cast<std::size_t>(i) >= num_items) {
      throw ParseError("index out of range", line_no);
    }
    rows[static_cast<std::size_t>(u)].push_back(static_cast<std::uint32_t>(i));
  }
  return InteractionMatrix(num_users, num_items, std::move(rows));
}

void save_indexed_interactions(const fs::path& path, const InteractionMatrix& r) {
  auto out = open_out(path);
  for (std::size_t u = 0; u < r.num_users(); ++u)
    for (auto i : r.row(u)) out << u << '\t' << i << '\n';
}

FeatureMatrix load_features(const fs::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, "FMX1", 4) == 0) {
    static_assert(std::endian::native == std::endian::little, "FMX1 reader assumes a little-endian host");
    std::uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in) throw DataError("FMX1: truncated header in " + path.string());
    std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw DataError("FMX1: truncated payload in " + path.string());
    DenseMatrix m(rows, cols);
    for (std::size_t k = 0; k < buf.size(); ++k) m[k] = buf[k];
    if (!m.all_finite()) throw DataError("FMX1: non-finite feature value in " + path.string());
    return {std::move(m)};
  }

  in.clear();
  in.seekg(0);
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view v = trim(line);
    if (v.empty()) continue;
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos <= v.size()) {
      auto comma = v.find(',', pos);
      if (comma == std::string_view::npos) comma = v.size();
      std::string_view cell = trim(v.substr(pos, comma - pos));
      double x = 0.0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (cell.empty() || ec != std::errc() || p != cell.data() + cell.size() || !std::isfinite(x)) {
        throw ParseError("bad feature value", line_no);
      }
      values.push_back(x);
      ++n;
      pos = comma + 1;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw ParseError("ragged feature row", line_no);
    ++rows;
  }
  if (rows == 0) throw EmptyDatasetError("no feature rows in " + path.string());
  return {DenseMatrix(rows, cols, std::move(values))};
}

void save_features_csv(const fs::path& path, const FeatureMatrix& f) {
  auto out = open_out(path);
  out.precision(17);
  for (std::size_t r = 0; r < f.values.rows(); ++r) {
    auto row = f.values.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << '\n';
  }
}

void save_features_fmx1(const fs::path& path, const FeatureMatrix& f) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  const auto rows = static_cast<std::uint32_t>(f.values.rows());
  const auto cols = static_cast<std::uint32_t>(f.values.cols());
  out.write("FMX1", 4);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  std::vector<float> buf(f.values.size());
  for (std::size_t k = 0; k < buf.size(); ++k) buf[k] = static_cast<float>(f.values[k]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

namespace {

void save_id_map(const fs::path& path, const std::vector<std::string>& ids) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < ids.size(); ++i) out << i << '\t' << ids[i] << '\n';
}

std::vector<std::string> load_id_map(const fs::path& path, std::size_t n) {
  auto in = open_in(path);
  std::vector<std::string> ids(n);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view a, b;
    long long idx = 0;
    if (trim(line).empty()) continue;
    if (!split_pair(trim(line), a, b) || !parse_integer(a, idx) || idx < 0 || static_cast<std::size_t>(idx) >= n) {
      throw ParseError("bad id map entry in " + path.string(), line_no);
    }
    ids[static_cast<std::size_t>(idx)] = std::string(b);
  }
  return ids;
}

}  // namespace

void save_split(const fs::path& dir, const DatasetSplit& s, std::uint64_t seed, const SplitRatios& ratios) {
  fs::create_directories(dir);
  save_indexed_interactions(dir / "train.tsv", s.train);
  save_indexed_interactions(dir / "valid.tsv", s.validation);
  save_indexed_interactions(dir / "test.tsv", s.test);
  if (!s.train.user_ids().empty()) save_id_map(dir / "users.tsv", s.train.user_ids());
  if (!s.train.item_ids().empty()) save_id_map(dir / "items.tsv", s.train.item_ids());
  json manifest = {
      {"seed", seed},
      {"ratios", {ratios.train, ratios.validation, ratios.test}},
      {"counts",
       {{"users", s.train.num_users()},
        {"items", s.train.num_items()},
        {"train", s.train.nnz()},
        {"valid", s.validation.nnz()},
        {"test", s.test.nnz()}}},
  };
  auto out = open_out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

DatasetSplit load_split(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw DataError("missing split manifest in " + dir.string());
  json manifest;
  try {
    auto in = open_in(dir / "manifest.json");
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad split manifest: ") + e.what());
  }
  const auto users = manifest.at("counts").at("users").get<std::size_t>();
  const auto items = manifest.at("counts").at("items").get<std::size_t>();
  for (const char* f : {"train.tsv", "valid.tsv", "test.tsv"}) {
    if (!fs::exists(dir / f)) throw DataError(std::string("missing split file ") + (dir / f).string());
  }
  DatasetSplit s{load_indexed_interactions(dir / "train.tsv", users, items),
                 load_indexed_interactions(dir / "valid.tsv", users, items),
                 load_indexed_interactions(dir / "test.tsv", users, items)};
  std::vector<std::string> uids, iids;
  if (fs::exists(dir / "users.tsv")) uids = load_id_map(dir / "users.tsv", users);
  if (fs::exists(dir / "items.tsv")) iids = load_id_map(dir / "items.tsv", items);
  for (auto* m : {&s.train, &s.validation, &s.test}) m->set_ids(uids, iids);
  return s;
}

// -------------------------------------------------------------- transforms

InteractionMatrix k_core_filter(const InteractionMatrix& r, std::size_t k) {
  if (k < 1) throw ConfigError("k_core_filter: k must be >= 1");
  std::vector<bool> user_alive(r.num_users(), true), item_alive(r.num_items(), true);
  std::vector<std::size_t> udeg(r.num_users()), ideg = r.item_degrees();
  for (std::size_t u = 0; u < r.num_users(); ++u) udeg[u] = r.user_degree(u);

  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t u = 0; u < r.num_users(); ++u) {
      if (!user_alive[u] || udeg[u] >= k) continue;
      user_alive[u] = false;
      changed = true;
      for (auto i : r.row(u)) {
        if (item_alive[i]) --ideg[i];
      }
    }
    for (std::size_t i = 0; i < r.num_items(); ++i) {
      if (!item_alive[i] || ideg[i] >= k) continue;
      item_alive[i] = false;
      changed = true;
    }
    if (changed) {
      // Recount user degrees against the surviving items.
      for (std::size_t u = 0; u < r.num_users(); ++u) {
        if (!user_alive[u]) continue;
        std::size_t d = 0;
        for (auto i : r.row(u)) d += item_alive[i] ? 1 : 0;
        udeg[u] = d;
      }
      std::fill(ideg.begin(), ideg.end(), 0);
      for (std::size_t u = 0; u < r.num_users(); ++u) {
        if (!user_alive[u]) continue;
        for (auto i : r.row(u)) ideg[i] += item_alive[i] ? 1 : 0;
      }
    }
  }

  std::vector<std::uint32_t> item_map(r.num_items(), 0);
  std::vector<std::string> item_ids, user_ids;
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < r.num_items(); ++i) {
    if (!item_alive[i]) continue;
    item_map[i] = next++;
    if (!r.item_ids().empty()) item_ids.push_back(r.item_ids()[i]);
  }
  std::vector<std::vector<std::uint32_t>> rows;
  for (std::size_t u = 0; u < r.num_users(); ++u) {
    if (!user_alive[u]) continue;
    std::vector<std::uint32_t> row;
    for (auto i : r.row(u)) {
      if (item_alive[i]) row.push_back(item_map[i]);
    }
    rows.push_back(std::move(row));
    if (!r.user_ids().empty()) user_ids.push_back(r.user_ids()[u]);
  }
  if (rows.empty() || next == 0) throw EmptyDatasetError("k-core filter removed every interaction");
  const std::size_t n_users = rows.size();
  InteractionMatrix out(n_users, next, std::move(rows));
  if (!r.user_ids().empty() || !r.item_ids().empty()) out.set_ids(std::move(user_ids), std::move(item_ids));
  return out;
}

DatasetSplit split(const InteractionMatrix& r, const SplitRatios& ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.validation + ratios.test;
  if (ratios.train <= 0 || ratios.validation <= 0 || ratios.test <= 0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split: ratios must be positive and sum to 1");
  }
  Rng rng(seed);
  const std::size_t n_users = r.num_users();
  std::vector<std::vector<std::uint32_t>> train(n_users), val(n_users), test(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    std::vector<std::uint32_t> items(r.row(u).begin(), r.row(u).end());
    const std::size_t n = items.size();
    if (n < 3) {
      train[u] = std::move(items);
      continue;
    }
    std::shuffle(items.begin(), items.end(), rng);
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratios.test)));
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratios.validation)));
    const std::size_t n_hold = std::min(n - 1, n_test + n_val);
    const std::size_t n_test_final = std::min(n_test, n_hold);
    test[u].assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_test_final));
    val[u].assign(items.begin() + static_cast<std::ptrdiff_t>(n_test_final),
                  items.begin() + static_cast<std::ptrdiff_t>(n_hold));
    train[u].assign(items.begin() + static_cast<std::ptrdiff_t>(n_hold), items.end());
  }
  DatasetSplit s{InteractionMatrix(n_users, r.num_items(), std::move(train)),
                 InteractionMatrix(n_users, r.num_items(), std::move(val)),
                 InteractionMatrix(n_users, r.num_items(), std::move(test))};
  for (auto* m : {&s.train, &s.validation, &s.test}) m->set_ids(r.user_ids(), r.item_ids());
  return s;
}

InteractionMatrix inject_noise(const InteractionMatrix& r, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("inject_noise: fraction must be in [0, 1)");
  Rng rng(seed);
  std::vector<std::vector<std::uint32_t>> rows = r.rows();
  for (std::size_t u = 0; u < rows.size(); ++u) {
    const std::size_t deg = rows[u].size();
    const auto want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(deg) - 1e-12));
    if (want == 0 || deg >= r.num_items()) continue;
    std::vector<std::uint32_t> spare;
    spare.reserve(r.num_items() - deg);
    for (std::uint32_t i = 0; i < r.num_items(); ++i) {
      if (!r.contains(u, i)) spare.push_back(i);
    }
    const std::size_t take = std::min(want, spare.size());
    // Partial Fisher-Yates: the first `take` entries become a uniform sample.
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, spare.size() - 1);
      std::swap(spare[k], spare[pick(rng)]);
      rows[u].push_back(spare[k]);
    }
  }
  InteractionMatrix out(r.num_users(), r.num_items(), std::move(rows));
  out.set_ids(r.user_ids(), r.item_ids());
  return out;
}

FeatureMatrix select_rows(const FeatureMatrix& features, std::span<const std::size_t> rows) {
  DenseMatrix out(rows.size(), features.dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= features.num_items()) throw DataError("select_rows: feature row out of range");
    auto src = features.values.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return {std::move(out)};
}

// --------------------------------------------------------------- synthetic

namespace {

// Balanced cluster labels in random order.
std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % k;
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

FeatureMatrix cluster_features(const std::vector<std::size_t>& item_cluster, std::size_t k, std::size_t dim,
                               double jitter, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix centroids(k, dim);
  for (auto& x : centroids.values()) x = normal(rng);
  DenseMatrix f(item_cluster.size(), dim);
  for (std::size_t i = 0; i < item_cluster.size(); ++i) {
    for (std::size_t c = 0; c < dim; ++c) f(i, c) = centroids(item_cluster[i], c) + jitter * normal(rng);
  }
  return {std::move(f)};
}

}  // namespace

SyntheticDataset synthesize(const SyntheticSpec& spec) {
  if (spec.num_users == 0 || spec.num_items == 0 || spec.num_clusters == 0 || spec.feature_dim == 0) {
    throw ConfigError("synthesize: counts must be positive");
  }
  if (!(spec.noise_rate >= 0.0 && spec.noise_rate < 0.5)) throw ConfigError("synthesize: noise_rate must be in [0, 0.5)");
  if (spec.min_degree == 0 || spec.min_degree > spec.max_degree) throw ConfigError("synthesize: bad degree range");

  Rng rng(spec.seed);
  SyntheticDataset out;
  out.user_cluster = balanced_labels(spec.num_users, spec.num_clusters, rng);
  out.item_cluster = balanced_labels(spec.num_items, spec.num_clusters, rng);

  out.visual = cluster_features(out.item_cluster, spec.num_clusters, spec.feature_dim, spec.feature_jitter, rng);
  out.textual = cluster_features(out.item_cluster, spec.num_clusters, spec.feature_dim, spec.feature_jitter, rng);

  std::vector<std::vector<std::uint32_t>> members(spec.num_clusters);
  for (std::uint32_t i = 0; i < spec.num_items; ++i) members[out.item_cluster[i]].push_back(i);

  std::uniform_int_distribution<std::size_t> degree(spec.min_degree, std::min(spec.max_degree, spec.num_items));
  std::bernoulli_distribution cross(spec.noise_rate);
  std::vector<std::vector<std::uint32_t>> rows(spec.num_users);

  if (spec.taste_strength > 0.0) {
    // Soft clusters: non-noise picks range over every unpicked item, weighted
    // by exp(strength * <taste_u, [visual_i; textual_i]> / sqrt(2 dim)) with
    // taste_u = cluster_weight * cluster mean + N(0, I).
    const std::size_t f = spec.feature_dim;
    DenseMatrix means(spec.num_clusters, 2 * f);
    std::vector<double> sizes(spec.num_clusters, 0.0);
    for (std::size_t i = 0; i < spec.num_items; ++i) {
      const auto c = out.item_cluster[i];
      sizes[c] += 1.0;
      for (std::size_t k = 0; k < f; ++k) {
        means(c, k) += out.visual.values(i, k);
        means(c, f + k) += out.textual.values(i, k);
      }
    }
    for (std::size_t c = 0; c < spec.num_clusters; ++c)
      for (std::size_t k = 0; k < 2 * f; ++k) means(c, k) /= std::max(1.0, sizes[c]);

    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double scale = spec.taste_strength / std::sqrt(2.0 * static_cast<double>(f));
    std::vector<double> taste(2 * f), affinity(spec.num_items);
    for (std::size_t u = 0; u < spec.num_users; ++u) {
      const std::size_t c = out.user_cluster[u];
      for (std::size_t k = 0; k < 2 * f; ++k) taste[k] = spec.cluster_weight * means(c, k) + normal(rng);
      for (std::size_t i = 0; i < spec.num_items; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < f; ++k) s += taste[k] * out.visual.values(i, k) + taste[f + k] * out.textual.values(i, k);
        affinity[i] = s;
      }
      const double top = *std::max_element(affinity.begin(), affinity.end());
      for (auto& a : affinity) a = std::exp(scale * (a - top));
      std::vector<std::uint32_t> pool(spec.num_items);
      std::iota(pool.begin(), pool.end(), 0u);
      const std::size_t d = degree(rng);
      for (std::size_t n = 0; n < d && !pool.empty(); ++n) {
        std::size_t k = 0;
        if (cross(rng)) {
          k = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
        } else {
          double total = 0.0;
          for (auto i : pool) total += affinity[i];
          double target = unit(rng) * total;
          for (k = 0; k + 1 < pool.size(); ++k) {
            target -= affinity[pool[k]];
            if (target < 0.0) break;
          }
        }
        rows[u].push_back(pool[k]);
        pool[k] = pool.back();
        pool.pop_back();
      }
    }
    out.interactions = InteractionMatrix(spec.num_users, spec.num_items, std::move(rows));
    return out;
  }

  for (std::size_t u = 0; u < spec.num_users; ++u) {
    const std::size_t c = out.user_cluster[u];
    std::vector<std::uint32_t> same = members[c], other;
    for (std::size_t k = 0; k < spec.num_clusters; ++k) {
      if (k != c) other.insert(other.end(), members[k].begin(), members[k].end());
    }
    const std::size_t d = degree(rng);
    for (std::size_t n = 0; n < d && (!same.empty() || !other.empty()); ++n) {
      bool use_other = cross(rng);
      if (use_other && other.empty()) use_other = false;
      if (!use_other && same.empty()) use_other = true;
      auto& pool = use_other ? other : same;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t k = pick(rng);
      rows[u].push_back(pool[k]);
      pool[k] = pool.back();
      pool.pop_back();
    }
  }
  out.interactions = InteractionMatrix(spec.num_users, spec.num_items, std::move(rows));
  return out;
}

}  // namespace ldmrec
