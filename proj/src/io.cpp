#include "dragon/io.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dragon/errors.hpp"
#include "dragon/rng.hpp"

namespace dragon::io {

namespace {

constexpr char kBinaryMagic[8] = {'D', 'R', 'G', 'N', 'E', 'M', 'B', '1'};

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& why) {
  throw InvalidInput(path.string() + ": " + why);
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out << contents;
  if (!out) fail(path, "write failed");
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");

  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() == 8 && std::memcmp(magic, kBinaryMagic, 8) == 0) {
    std::uint64_t rows = 0, dim = 0;
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&dim), 8);
    if (!in) fail(path, "truncated binary header");
    if (rows < 1 || dim < 1 || rows > (1ull << 32) || dim > (1ull << 24))
      fail(path, "implausible binary header (rows " + std::to_string(rows) + ", dim " +
                     std::to_string(dim) + ")");
    Matrix m(rows, dim);
    in.read(reinterpret_cast<char*>(m.data().data()),
            static_cast<std::streamsize>(rows * dim * sizeof(double)));
    if (!in) fail(path, "truncated binary payload");
    m.validate(path.string().c_str());
    return m;
  }

  // Text variant.
  in.clear();
  in.seekg(0);
  std::size_t rows = 0, dim = 0;
  if (!(in >> rows >> dim)) fail(path, "malformed header (expected \"rows dim\")");
  if (rows < 1 || dim < 1) fail(path, "header must declare rows >= 1 and dim >= 1");
  Matrix m(rows, dim);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < dim; ++c)
      if (!(in >> m.at(r, c)))
        fail(path, "malformed value at row " + std::to_string(r) + " col " + std::to_string(c));
  m.validate(path.string().c_str());
  return m;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m, bool binary) {
  m.validate("save_embeddings");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  if (binary) {
    std::uint64_t rows = m.rows(), dim = m.cols();
    out.write(kBinaryMagic, 8);
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&dim), 8);
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.data().size() * sizeof(double)));
  } else {
    out << m.rows() << ' ' << m.cols() << '\n';
    out.precision(17);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) {
        if (c) out << ' ';
        out << m.at(r, c);
      }
      out << '\n';
    }
  }
  if (!out) fail(path, "write failed");
}

std::string stats_to_json_string(const stats::GaussStats& s) {
  nlohmann::json j;
  j["mean"] = s.mean;
  j["cov"] = s.cov.data();
  j["count"] = s.count;
  return j.dump(2) + "\n";
}

void save_stats(const std::filesystem::path& path, const stats::GaussStats& s) {
  write_file(path, stats_to_json_string(s));
}

stats::GaussStats load_stats(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(path, std::string("invalid JSON: ") + e.what());
  }
  if (!j.contains("mean") || !j.contains("cov") || !j.contains("count"))
    fail(path, "stats JSON needs fields mean, cov, count");
  stats::GaussStats s;
  s.mean = j["mean"].get<std::vector<double>>();
  auto cov = j["cov"].get<std::vector<double>>();
  const std::size_t d = s.mean.size();
  if (cov.size() != d * d) fail(path, "cov length does not match mean dimension squared");
  s.cov = Matrix(d, d, std::move(cov));
  s.count = j["count"].get<std::size_t>();
  s.validate();
  return s;
}

std::vector<double> load_scalars(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  std::vector<double> out;
  double v = 0.0;
  while (in >> v) out.push_back(v);
  if (!in.eof()) fail(path, "malformed value at record " + std::to_string(out.size()));
  if (out.empty()) fail(path, "no values");
  return out;
}

void save_scalars(const std::filesystem::path& path, const std::vector<double>& v) {
  std::ostringstream ss;
  ss.precision(17);
  for (double x : v) ss << x << '\n';
  write_file(path, ss.str());
}

std::vector<Prompt> load_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  std::vector<Prompt> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Prompt p;
    if (!(ls >> p.condition)) fail(path, "line " + std::to_string(lineno) + ": missing condition id");
    ls >> std::ws;
    std::getline(ls, p.text);
    if (p.text.empty()) fail(path, "line " + std::to_string(lineno) + ": missing prompt text");
    out.push_back(std::move(p));
  }
  if (out.empty()) fail(path, "no prompts");
  return out;
}

void save_prompts(const std::filesystem::path& path, const std::vector<Prompt>& prompts) {
  std::ostringstream ss;
  for (const auto& p : prompts) ss << p.condition << ' ' << p.text << '\n';
  write_file(path, ss.str());
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  return fnv1a64(read_file(path));
}

}  // namespace dragon::io
