#include <charconv>
#include <fstream>
#include <sstream>

#include "panel_dml/errors.hpp"
#include "panel_dml/panel.hpp"

namespace panel_dml {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

[[noreturn]] void parse_failure(std::size_t line, std::string_view column, std::string_view text) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ", column '" + std::string(column) +
                                         "': cannot parse '" + std::string(text) + "'");
}

std::int64_t parse_integer(std::string_view text, std::size_t line, std::string_view column) {
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) parse_failure(line, column, text);
  return value;
}

double parse_real(std::string_view text, std::size_t line, std::string_view column) {
  double value = 0.0;
  auto first = text.data();
  if (!text.empty() && text.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) parse_failure(line, column, text);
  return value;
}

void append_real(std::string& out, double value) {
  char buffer[32];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  out.append(buffer, ptr);
}

}  // namespace

PanelDataset parse_panel_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::ParseError, "empty input");

  auto header = split_fields(lines.front());
  if (!header.empty() && header.front().starts_with("\xEF\xBB\xBF")) header.front().remove_prefix(3);
  auto locate = [&](std::string_view name) -> std::size_t {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return c;
    }
    throw Error(ErrorCode::MissingColumn, "required column '" + std::string(name) + "' not found in header");
  };
  const std::size_t c_unit = locate("unit");
  const std::size_t c_wave = locate("wave");
  const std::size_t c_y = locate("y");
  const std::size_t c_d = locate("d");
  std::vector<std::size_t> c_x;
  RawPanel raw;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == c_unit || c == c_wave || c == c_y || c == c_d) continue;
    if (header[c].empty()) throw Error(ErrorCode::ParseError, "empty column name in header");
    c_x.push_back(c);
    raw.covariate_names.emplace_back(header[c]);
  }

  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (trim(lines[li]).empty()) continue;
    const auto fields = split_fields(lines[li]);
    const std::size_t line_no = li + 1;
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + " has " +
                                             std::to_string(fields.size()) + " fields, expected " +
                                             std::to_string(header.size()));
    }
    raw.unit.push_back(parse_integer(fields[c_unit], line_no, "unit"));
    raw.wave.push_back(parse_integer(fields[c_wave], line_no, "wave"));
    raw.y.push_back(parse_real(fields[c_y], line_no, "y"));
    raw.d.push_back(parse_real(fields[c_d], line_no, "d"));
    for (std::size_t j = 0; j < c_x.size(); ++j) {
      raw.x.push_back(parse_real(fields[c_x[j]], line_no, raw.covariate_names[j]));
    }
  }
  return assemble_panel(raw);
}

PanelDataset read_panel_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_panel_csv(buffer.str());
}

std::string format_panel_csv(const PanelDataset& panel) {
  std::string out = "unit,wave,y,d";
  for (const auto& name : panel.covariate_names) out += "," + name;
  out += '\n';
  for (Index r = 0; r < panel.n_rows(); ++r) {
    const auto w = static_cast<std::size_t>(panel.wave_ids[static_cast<std::size_t>(r)]);
    const auto wave = panel.wave_labels.size() >= w ? panel.wave_labels[w - 1] : static_cast<std::int64_t>(w);
    out += std::to_string(panel.unit_ids[static_cast<std::size_t>(r)]) + ',' + std::to_string(wave) + ',';
    append_real(out, panel.y[r]);
    out += ',';
    append_real(out, panel.d[r]);
    for (Index j = 0; j < panel.x.cols(); ++j) {
      out += ',';
      append_real(out, panel.x(r, j));
    }
    out += '\n';
  }
  return out;
}

void write_panel_csv(const std::filesystem::path& path, const PanelDataset& panel) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::ParseError, "cannot write '" + path.string() + "'");
  out << format_panel_csv(panel);
}

}  // namespace panel_dml
