#include "crowding/dataset_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace crowding {

namespace fs = std::filesystem;
using K = DataError::Kind;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(K::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(K::Io, "cannot write " + path.string());
  out << text;
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Non-empty lines after the header; strips a trailing '\r'.
std::vector<std::string> data_lines(const std::string& text, const fs::path& path,
                                    std::string* header) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      first = false;
      if (header) *header = line;
      continue;
    }
    if (line.empty()) continue;
    lines.push_back(line);
  }
  if (first) throw DataError(K::Parse, path.string() + ": missing header");
  return lines;
}

std::size_t parse_index(const std::string& s, const fs::path& path, std::size_t line) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw DataError(K::Parse, path.string() + ":" + std::to_string(line) +
                                  ": expected a non-negative integer, got '" + s + "'");
  return v;
}

double parse_double(const std::string& s, const fs::path& path, std::size_t line) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    std::string lower;
    for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower.find("nan") != std::string::npos || lower.find("inf") != std::string::npos)
      throw DataError(K::NonFinite, path.string() + ":" + std::to_string(line) +
                                        ": non-finite value '" + s + "'");
    throw DataError(K::Parse, path.string() + ":" + std::to_string(line) +
                                  ": expected a number, got '" + s + "'");
  }
  if (!std::isfinite(v))
    throw DataError(K::NonFinite, path.string() + ":" + std::to_string(line) +
                                      ": non-finite value '" + s + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::map<std::string, std::string> read_kv(const fs::path& path) {
  std::map<std::string, std::string> kv;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace

Tensor read_matrix_csv(const fs::path& path) {
  std::string header;
  const auto lines = data_lines(read_file(path), path, &header);
  const auto names = split_fields(header);
  const std::size_t d = names.size();
  for (std::size_t j = 0; j < d; ++j)
    if (names[j] != "f" + std::to_string(j))
      throw DataError(K::Parse, path.string() + ": header column " + std::to_string(j) +
                                    " must be f" + std::to_string(j));
  std::vector<double> data;
  data.reserve(lines.size() * d);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto fields = split_fields(lines[i]);
    if (fields.size() != d)
      throw DataError(K::RaggedFeatures, path.string() + ":" + std::to_string(i + 2) +
                                             ": expected " + std::to_string(d) +
                                             " columns, got " + std::to_string(fields.size()));
    for (const auto& f : fields) data.push_back(parse_double(f, path, i + 2));
  }
  return Tensor({lines.size(), d}, std::move(data));
}

std::vector<Annotation> read_annotations_csv(const fs::path& path) {
  std::string header;
  const auto lines = data_lines(read_file(path), path, &header);
  const auto cols = split_fields(header);
  if (cols.size() < 3 || cols[0] != "instance_id" || cols[1] != "annotator_id" ||
      cols[2] != "label")
    throw DataError(K::Parse, path.string() + ": header must be instance_id,annotator_id,label");
  std::vector<Annotation> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto f = split_fields(lines[i]);
    if (f.size() != cols.size())
      throw DataError(K::Parse, path.string() + ":" + std::to_string(i + 2) +
                                    ": wrong number of fields");
    out.push_back({parse_index(f[0], path, i + 2), parse_index(f[1], path, i + 2),
                   parse_index(f[2], path, i + 2)});
  }
  return out;
}

namespace {

std::vector<std::pair<std::size_t, std::string>> read_pairs(const fs::path& path,
                                                            std::string_view second) {
  std::string header;
  const auto lines = data_lines(read_file(path), path, &header);
  if (header != "instance_id," + std::string(second))
    throw DataError(K::Parse, path.string() + ": header must be instance_id," +
                                  std::string(second));
  std::vector<std::pair<std::size_t, std::string>> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto f = split_fields(lines[i]);
    if (f.size() != 2)
      throw DataError(K::Parse, path.string() + ":" + std::to_string(i + 2) +
                                    ": wrong number of fields");
    out.emplace_back(parse_index(f[0], path, i + 2), f[1]);
  }
  return out;
}

}  // namespace

DatasetFiles dataset_files_in(const fs::path& dir) {
  DatasetFiles f;
  f.features = dir / "features.csv";
  f.annotations = dir / "annotations.csv";
  if (fs::exists(dir / "annotators.csv")) f.annotators = dir / "annotators.csv";
  if (fs::exists(dir / "truth.csv")) f.truth = dir / "truth.csv";
  if (fs::exists(dir / "splits.csv")) f.splits = dir / "splits.csv";
  return f;
}

CrowdDataset load_dataset(const DatasetFiles& files, std::size_t num_classes,
                          std::size_t num_annotators) {
  CrowdDataset::Parts p;
  p.instances = read_matrix_csv(files.features);
  const std::size_t n = p.instances.rows();
  p.annotations = read_annotations_csv(files.annotations);
  if (files.annotators) p.annotators = read_matrix_csv(*files.annotators);

  std::size_t max_label = 0, max_annotator = 0;
  for (const auto& a : p.annotations) {
    max_label = std::max(max_label, a.label);
    max_annotator = std::max(max_annotator, a.annotator);
  }
  if (files.truth) {
    std::vector<std::size_t> truth(n, 0);
    std::vector<bool> seen(n, false);
    for (const auto& [inst, lab] : read_pairs(*files.truth, "label")) {
      if (inst >= n) throw DataError(K::InvalidConfig, "truth references instance " +
                                                           std::to_string(inst));
      truth[inst] = parse_index(lab, *files.truth, inst + 2);
      seen[inst] = true;
      max_label = std::max(max_label, truth[inst]);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (!seen[i]) throw DataError(K::InvalidConfig, "truth file misses instance " + std::to_string(i));
    p.ground_truth = std::move(truth);
  }
  if (files.splits) {
    p.splits.assign(n, Split::Train);
    for (const auto& [inst, tag] : read_pairs(*files.splits, "split")) {
      if (inst >= n) throw DataError(K::InvalidConfig, "splits reference instance " +
                                                            std::to_string(inst));
      p.splits[inst] = parse_split(tag);
    }
  }
  p.num_classes = num_classes ? num_classes : max_label + 1;
  if (p.annotators.empty())
    p.num_annotators = num_annotators ? num_annotators
                                      : (p.annotations.empty() ? 0 : max_annotator + 1);
  else
    p.num_annotators = num_annotators;
  return CrowdDataset::create(std::move(p));
}

CrowdDataset load_dataset_dir(const fs::path& dir) {
  std::size_t classes = 0, annotators = 0;
  if (fs::exists(dir / "dataset.cfg")) {
    const auto kv = read_kv(dir / "dataset.cfg");
    if (auto it = kv.find("num_classes"); it != kv.end())
      classes = parse_index(it->second, dir / "dataset.cfg", 0);
    if (auto it = kv.find("num_annotators"); it != kv.end())
      annotators = parse_index(it->second, dir / "dataset.cfg", 0);
  }
  return load_dataset(dataset_files_in(dir), classes, annotators);
}

std::string format_matrix_csv(const Tensor& m) {
  std::string out;
  for (std::size_t j = 0; j < m.cols(); ++j) out += (j ? ",f" : "f") + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m.at(i, j));
    }
    out += '\n';
  }
  return out;
}

std::string format_annotations_csv(const CrowdDataset& ds) {
  std::string out = "instance_id,annotator_id,label\n";
  for (const auto& a : ds.annotations())
    out += std::to_string(a.instance) + ',' + std::to_string(a.annotator) + ',' +
           std::to_string(a.label) + '\n';
  return out;
}

void save_dataset(const CrowdDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "features.csv", format_matrix_csv(ds.instances()));
  if (!ds.one_hot_annotators())
    write_file(dir / "annotators.csv", format_matrix_csv(ds.annotators()));
  write_file(dir / "annotations.csv", format_annotations_csv(ds));
  if (ds.ground_truth()) {
    std::string t = "instance_id,label\n";
    for (std::size_t i = 0; i < ds.num_instances(); ++i)
      t += std::to_string(i) + ',' + std::to_string((*ds.ground_truth())[i]) + '\n';
    write_file(dir / "truth.csv", t);
  }
  std::string s = "instance_id,split\n";
  for (std::size_t i = 0; i < ds.num_instances(); ++i)
    s += std::to_string(i) + ',' + std::string(split_name(ds.splits()[i])) + '\n';
  write_file(dir / "splits.csv", s);
  write_file(dir / "dataset.cfg", "num_classes = " + std::to_string(ds.num_classes()) +
                                      "\nnum_annotators = " +
                                      std::to_string(ds.num_annotators()) + "\n");
}

}  // namespace crowding
