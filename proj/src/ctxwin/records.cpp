#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "cascade/ctxwin.hpp"

namespace cascade::ctxwin {

const char* kind_name(WindowKind kind) { return kind == WindowKind::positive ? "positive" : "negative"; }

std::string format_record(const Record& r) {
  std::ostringstream out;
  out << r.scale_id << ' ' << r.kind << ' ' << r.rect.x0 << ' ' << r.rect.y0 << ' ' << r.rect.x1 << ' ' << r.rect.y1;
  if (r.score) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *r.score);
    out << ' ' << buf;
    if (r.slice_z) out << ' ' << *r.slice_z;
  }
  return out.str();
}

Record parse_record(const std::string& line) {
  std::istringstream in(line);
  Record r;
  if (!(in >> r.scale_id >> r.kind >> r.rect.x0 >> r.rect.y0 >> r.rect.x1 >> r.rect.y1)) {
    throw Error(Errc::SpecMismatch, "malformed window record: '" + line + "'");
  }
  double score;
  if (in >> score) {
    r.score = score;
    int z;
    if (in >> z) r.slice_z = z;
  }
  std::string rest;
  if (in.clear(), in >> rest) throw Error(Errc::SpecMismatch, "trailing fields in window record: '" + line + "'");
  if (!r.rect.valid()) throw Error(Errc::SpecMismatch, "inverted rect in window record: '" + line + "'");
  return r;
}

void write_records(std::ostream& out, const std::vector<Record>& records) {
  for (const auto& r : records) out << format_record(r) << '\n';
}

std::vector<Record> read_records(std::istream& in) {
  std::vector<Record> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_record(line));
  }
  return out;
}

}  // namespace cascade::ctxwin
