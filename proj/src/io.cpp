#include "wsdfm/io.hpp"

#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>
#include <vector>

namespace wsdfm {

namespace fs = std::filesystem;

void atomic_write_stream(const fs::path& path,
                         const std::function<void(std::ostream&)>& writer) {
  fs::path dir = path.parent_path();
  if (!dir.empty()) {
    fs::create_directories(dir);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw std::runtime_error("cannot open " + tmp.string() +
                               " for writing: " + std::strerror(errno));
    }
    writer(os);
    os.flush();
    if (!os) {
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("rename " + tmp.string() + " -> " +
                             path.string() + " failed: " + ec.message());
  }
}

void atomic_write(const fs::path& path, const std::string& content) {
  atomic_write_stream(path, [&](std::ostream& os) { os << content; });
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

int parse_int_field(const std::string& field, const fs::path& path,
                    std::size_t line_no) {
  int value = 0;
  const char* first = field.data();
  const char* last = first + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty()) {
    std::ostringstream os;
    os << path.string() << ":" << line_no << ": expected integer, got '"
       << field << "'";
    throw ParseError(os.str());
  }
  return value;
}

namespace {

// Reads all non-empty lines (trailing \r stripped for CRLF tolerance).
std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw ValidationError("cannot open " + path.string() + ": " +
                          std::strerror(errno));
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) {
    lines.pop_back();
  }
  return lines;
}

void write_rows(std::ostream& os, const Eigen::Ref<const SampleMatrix>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) os << ',';
      os << m(r, c);
    }
    os << '\n';
  }
}

void write_rows(std::ostream& os, const Eigen::Ref<const SampleMatrix>& a,
                const Eigen::Ref<const SampleMatrix>& b) {
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (c > 0) os << ',';
      os << a(r, c);
    }
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      os << ',' << b(r, c);
    }
    os << '\n';
  }
}

}  // namespace

void write_dataset_csv(const fs::path& path, const Dataset& ds) {
  ds.validate();
  atomic_write_stream(path, [&](std::ostream& os) {
    for (int c = 0; c < ds.spec.n_tokens; ++c) {
      if (c > 0) os << ',';
      os << "tok" << c;
    }
    os << '\n';
    write_rows(os, ds.samples);
  });
}

Dataset read_dataset_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) {
    throw ParseError(path.string() + ":1: empty file, expected tok header");
  }
  const auto header = split_csv_line(lines[0]);
  const int n_tokens = static_cast<int>(header.size());
  for (int c = 0; c < n_tokens; ++c) {
    if (header[c] != "tok" + std::to_string(c)) {
      throw ParseError(path.string() + ":1: expected header field 'tok" +
                       std::to_string(c) + "', got '" + header[c] + "'");
    }
  }
  if (lines.size() < 2) {
    throw ParseError(path.string() + ":2: no data rows");
  }

  Dataset ds;
  ds.spec.n_tokens = n_tokens;
  ds.samples.resize(static_cast<Eigen::Index>(lines.size()) - 1, n_tokens);
  int max_tok = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv_line(lines[i]);
    if (static_cast<int>(fields.size()) != n_tokens) {
      std::ostringstream os;
      os << path.string() << ":" << (i + 1) << ": expected " << n_tokens
         << " fields, got " << fields.size();
      throw ParseError(os.str());
    }
    for (int c = 0; c < n_tokens; ++c) {
      const int v = parse_int_field(fields[c], path, i + 1);
      if (v < 0) {
        std::ostringstream os;
        os << path.string() << ":" << (i + 1) << ": negative token " << v;
        throw ParseError(os.str());
      }
      ds.samples(static_cast<Eigen::Index>(i) - 1, c) = v;
      max_tok = std::max(max_tok, v);
    }
  }
  // The CSV does not carry the vocabulary size; infer the tightest power-of-
  // two-free bound the caller can widen. Default experiment vocab is 128; keep
  // that when the data fits, otherwise grow to cover the tokens seen.
  ds.spec.vocab = std::max(128, max_tok + 1);
  return ds;
}

void write_pairs_csv(const fs::path& path,
                     const Eigen::Ref<const SampleMatrix>& src,
                     const Eigen::Ref<const SampleMatrix>& dst) {
  if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
    throw ValidationError("write_pairs_csv: src and dst shapes differ");
  }
  if (src.rows() == 0 || src.cols() == 0) {
    throw ValidationError("write_pairs_csv: empty pair set");
  }
  const int n = static_cast<int>(src.cols());
  atomic_write_stream(path, [&](std::ostream& os) {
    for (int c = 0; c < n; ++c) {
      if (c > 0) os << ',';
      os << "src" << c;
    }
    for (int c = 0; c < n; ++c) {
      os << ",dst" << c;
    }
    os << '\n';
    write_rows(os, src, dst);
  });
}

PairsFile read_pairs_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) {
    throw ParseError(path.string() + ":1: empty file, expected src/dst header");
  }
  const auto header = split_csv_line(lines[0]);
  if (header.size() < 2 || header.size() % 2 != 0) {
    throw ParseError(path.string() +
                     ":1: header must hold matching src*/dst* columns");
  }
  const int n_tokens = static_cast<int>(header.size()) / 2;
  for (int c = 0; c < n_tokens; ++c) {
    if (header[c] != "src" + std::to_string(c) ||
        header[n_tokens + c] != "dst" + std::to_string(c)) {
      throw ParseError(path.string() + ":1: expected header fields 'src" +
                       std::to_string(c) + "'/'dst" + std::to_string(c) +
                       "'");
    }
  }
  if (lines.size() < 2) {
    throw ParseError(path.string() + ":2: no data rows");
  }

  PairsFile pf;
  const Eigen::Index rows = static_cast<Eigen::Index>(lines.size()) - 1;
  pf.src.resize(rows, n_tokens);
  pf.dst.resize(rows, n_tokens);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv_line(lines[i]);
    if (static_cast<int>(fields.size()) != 2 * n_tokens) {
      std::ostringstream os;
      os << path.string() << ":" << (i + 1) << ": expected " << 2 * n_tokens
         << " fields, got " << fields.size();
      throw ParseError(os.str());
    }
    for (int c = 0; c < 2 * n_tokens; ++c) {
      const int v = parse_int_field(fields[c], path, i + 1);
      if (v < 0) {
        std::ostringstream os;
        os << path.string() << ":" << (i + 1) << ": negative token " << v;
        throw ParseError(os.str());
      }
      if (c < n_tokens) {
        pf.src(static_cast<Eigen::Index>(i) - 1, c) = v;
      } else {
        pf.dst(static_cast<Eigen::Index>(i) - 1, c - n_tokens) = v;
      }
    }
  }
  return pf;
}

}  // namespace wsdfm
