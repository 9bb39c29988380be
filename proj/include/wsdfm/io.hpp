#pragma once

#include "wsdfm/types.hpp"

#include <filesystem>
#include <functional>
#include <string>

namespace wsdfm {

/// Write `content` to `path` atomically: the bytes go to a sibling temp file
/// which is then renamed over the target, so readers never observe a partial
/// file and a crash leaves any previous version intact.
void atomic_write(const std::filesystem::path& path,
                  const std::string& content);

/// As atomic_write, but the payload is produced by a writer callback into an
/// output stream (for large files that should not be buffered twice).
void atomic_write_stream(const std::filesystem::path& path,
                         const std::function<void(std::ostream&)>& writer);

/// Dataset CSV: header `tok0,tok1,...,tok{N-1}`, one row of decimal integers
/// per sample.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset_csv(const std::filesystem::path& path);

/// Pairs CSV: header `src0..src{N-1},dst0..dst{N-1}`, one (draft, data) pair
/// per row. Both matrices must have equal shape.
void write_pairs_csv(const std::filesystem::path& path,
                     const Eigen::Ref<const SampleMatrix>& src,
                     const Eigen::Ref<const SampleMatrix>& dst);
struct PairsFile {
  SampleMatrix src;
  SampleMatrix dst;
};
PairsFile read_pairs_csv(const std::filesystem::path& path);

/// Splits one CSV line on commas; no quoting (all our payloads are numeric).
std::vector<std::string> split_csv_line(const std::string& line);

/// Parses a decimal integer token; throws ParseError naming `path` and
/// `line_no` (1-based) on anything malformed.
int parse_int_field(const std::string& field, const std::filesystem::path& path,
                    std::size_t line_no);

}  // namespace wsdfm
