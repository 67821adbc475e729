#pragma once

#include <charconv>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "cubethin/control_variates.hpp"
#include "cubethin/errors.hpp"

namespace cubethin {

inline constexpr char kChainMagic[5] = {'C', 'B', 'T', 'H', '1'};

namespace detail {

inline double parse_field(std::string_view field, Index line_no, Index field_no) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  while (last > first && (*(last - 1) == ' ' || *(last - 1) == '\t' || *(last - 1) == '\r'))
    --last;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    throw ParseError("chain file line " + std::to_string(line_no) + ", field " +
                     std::to_string(field_no) + ": not a number");
  if (!std::isfinite(value))
    throw ParseError("chain file line " + std::to_string(line_no) + ", field " +
                     std::to_string(field_no) + ": non-finite value");
  return value;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads a chain from the headered CSV format:
///   d=<int>,scores=<0|1>
///   v1,...,vd[,s1,...,sd]
/// Rows are parsed in one streaming pass.
inline Chain read_chain_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("chain file: empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  int d = 0, scores_flag = -1;
  if (std::sscanf(line.c_str(), "d=%d,scores=%d", &d, &scores_flag) != 2 || d < 1 ||
      (scores_flag != 0 && scores_flag != 1))
    throw ParseError("chain file line 1: expected header 'd=<int>,scores=<0|1>'");

  const Index fields_per_row = static_cast<Index>(d) * (scores_flag ? 2 : 1);
  std::vector<double> data;
  Index rows = 0;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Index field_no = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view field(line.data() + start,
                                   (comma == std::string::npos ? line.size() : comma) - start);
      ++field_no;
      if (field_no > fields_per_row)
        throw DimensionError("chain file line " + std::to_string(line_no) + ": expected " +
                             std::to_string(fields_per_row) + " fields");
      data.push_back(detail::parse_field(field, line_no, field_no));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (field_no != fields_per_row)
      throw DimensionError("chain file line " + std::to_string(line_no) + ": expected " +
                           std::to_string(fields_per_row) + " fields, got " +
                           std::to_string(field_no));
    ++rows;
  }
  if (rows == 0) throw ParseError("chain file: no data rows");

  Chain chain;
  chain.states.resize(rows, d);
  if (scores_flag) chain.scores = Matrix(rows, d);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < d; ++c)
      chain.states(r, c) = data[static_cast<std::size_t>(r * fields_per_row + c)];
    if (scores_flag)
      for (Index c = 0; c < d; ++c)
        (*chain.scores)(r, c) = data[static_cast<std::size_t>(r * fields_per_row + d + c)];
  }
  return chain;
}

/// Reads the packed little-endian binary variant (magic CBTH1).
inline Chain read_chain_binary(std::istream& in) {
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, kChainMagic, 5) != 0)
    throw ParseError("chain file: bad magic bytes");
  std::uint32_t d = 0;
  std::uint8_t scores_flag = 0;
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  in.read(reinterpret_cast<char*>(&scores_flag), sizeof(scores_flag));
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || d < 1 || n < 1 || scores_flag > 1)
    throw ParseError("chain file: bad binary header");

  const Index rows = static_cast<Index>(n);
  const Index cols = static_cast<Index>(d);
  Chain chain;
  chain.states.resize(rows, cols);
  if (scores_flag) chain.scores = Matrix(rows, cols);
  std::vector<double> row(static_cast<std::size_t>(cols) * (scores_flag ? 2 : 1));
  for (Index r = 0; r < rows; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw ParseError("chain file: truncated binary body at row " + std::to_string(r + 1));
    for (Index c = 0; c < cols; ++c) {
      if (!std::isfinite(row[static_cast<std::size_t>(c)]))
        throw ParseError("chain file: non-finite value at row " + std::to_string(r + 1));
      chain.states(r, c) = row[static_cast<std::size_t>(c)];
    }
    if (scores_flag) {
      for (Index c = 0; c < cols; ++c) {
        const double v = row[static_cast<std::size_t>(cols + c)];
        if (!std::isfinite(v))
          throw ParseError("chain file: non-finite value at row " + std::to_string(r + 1));
        (*chain.scores)(r, c) = v;
      }
    }
  }
  return chain;
}

/// Reads a chain file, sniffing the binary magic and falling back to CSV.
inline Chain ingest_chain(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open chain file: " + path);
  char magic[5] = {};
  in.read(magic, 5);
  in.clear();
  in.seekg(0);
  if (std::memcmp(magic, kChainMagic, 5) == 0) return read_chain_binary(in);
  Chain chain = read_chain_csv(in);
  chain.validate();
  return chain;
}

inline void write_chain_csv(std::ostream& out, const Chain& chain) {
  out << "d=" << chain.dim() << ",scores=" << (chain.has_scores() ? 1 : 0) << "\n";
  for (Index r = 0; r < chain.size(); ++r) {
    for (Index c = 0; c < chain.dim(); ++c) {
      if (c) out << ',';
      out << detail::format_double(chain.states(r, c));
    }
    if (chain.has_scores())
      for (Index c = 0; c < chain.dim(); ++c)
        out << ',' << detail::format_double((*chain.scores)(r, c));
    out << "\n";
  }
}

inline void write_chain_csv(const std::string& path, const Chain& chain) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  write_chain_csv(out, chain);
}

inline void write_chain_binary(const std::string& path, const Chain& chain) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out.write(kChainMagic, 5);
  const std::uint32_t d = static_cast<std::uint32_t>(chain.dim());
  const std::uint8_t scores_flag = chain.has_scores() ? 1 : 0;
  const std::uint64_t n = static_cast<std::uint64_t>(chain.size());
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  out.write(reinterpret_cast<const char*>(&scores_flag), sizeof(scores_flag));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (Index r = 0; r < chain.size(); ++r) {
    for (Index c = 0; c < chain.dim(); ++c) {
      const double v = chain.states(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    if (chain.has_scores()) {
      for (Index c = 0; c < chain.dim(); ++c) {
        const double v = (*chain.scores)(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
}

}  // namespace cubethin
