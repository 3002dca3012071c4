#include "dpd/spec_io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "dpd/errors.hpp"

namespace dpd {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

struct Entry {
  int line;
  std::string key;
  std::string value;
};

struct Section {
  int line = 0;
  std::size_t index = 0;
  std::vector<Entry> entries;
};

std::size_t parse_count(const Entry& e) {
  std::size_t v = 0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || e.value.empty()) {
    throw ParseError(e.line, e.key, "expected a non-negative integer, got '" + e.value + "'");
  }
  return v;
}

double parse_real(const Entry& e) {
  double v = 0.0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || e.value.empty()) {
    throw ParseError(e.line, e.key, "expected a number, got '" + e.value + "'");
  }
  return v;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void apply_stage_entry(StageSpec& st, const Entry& e, std::size_t index) {
  const std::string where = "stage " + std::to_string(index);
  if (e.key == "kind") {
    try {
      st.kind = block_kind_from_string(e.value);
    } catch (const SpecError&) {
      throw ParseError(e.line, e.key, where + ": unknown block kind '" + e.value + "'");
    }
  } else if (e.key == "out") {
    st.out_channels = parse_count(e);
    if (st.out_channels == 0) throw ParseError(e.line, e.key, where + ": out channels must be positive");
  } else if (e.key == "mid") {
    st.mid_channels = parse_count(e);
  } else if (e.key == "stride") {
    st.stride = parse_count(e);
    if (st.stride != 1 && st.stride != 2) {
      throw ParseError(e.line, e.key, where + ": stride must be 1 or 2, got " + e.value);
    }
  } else if (e.key == "repeat") {
    st.repeats = parse_count(e);
    if (st.repeats == 0) throw ParseError(e.line, e.key, where + ": repeat must be at least 1");
  } else {
    throw ParseError(e.line, e.key, where + ": unknown key");
  }
}

}  // namespace

NetworkSpec parse_spec(std::string_view text) {
  std::vector<Entry> top;
  std::vector<Section> sections;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(line_no, "", "unterminated section header");
      std::string_view inner = trim(line.substr(1, line.size() - 2));
      if (inner.substr(0, 5) != "stage") {
        throw ParseError(line_no, std::string(inner), "unknown section");
      }
      Section sec;
      sec.line = line_no;
      const std::string_view idx = trim(inner.substr(5));
      if (idx.empty()) {
        sec.index = sections.empty() ? 0 : sections.back().index + 1;
      } else {
        auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), sec.index);
        if (ec != std::errc() || ptr != idx.data() + idx.size()) {
          throw ParseError(line_no, std::string(inner), "bad stage index");
        }
      }
      sections.push_back(std::move(sec));
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "", "expected 'key = value'");
    Entry e{line_no, std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1)))};
    if (e.key.empty()) throw ParseError(line_no, "", "empty key");
    auto& target = sections.empty() ? top : sections.back().entries;
    for (const Entry& prev : target) {
      if (prev.key == e.key) throw ParseError(line_no, e.key, "duplicate key");
    }
    target.push_back(std::move(e));
  }
  const int eof_line = line_no;

  NetworkSpec spec;
  std::set<std::string> seen;
  bool from_builtin = false;
  for (const Entry& e : top) {
    if (e.key == "builtin") {
      try {
        spec = builtin_spec(e.value, 1.0, 1, 10);
      } catch (const SpecError&) {
        throw ParseError(e.line, e.key, "unknown builtin network '" + e.value + "'");
      }
      from_builtin = true;
    }
  }
  for (const Entry& e : top) {
    seen.insert(e.key);
    if (e.key == "builtin") continue;
    if (e.key == "name") {
      if (e.value.empty()) throw ParseError(e.line, e.key, "name must not be empty");
      spec.name = e.value;
    } else if (e.key == "input") {
      spec.input_size = parse_count(e);
    } else if (e.key == "alpha") {
      spec.alpha = parse_real(e);
      if (!(spec.alpha > 0.0 && spec.alpha <= 8.0)) {
        throw ParseError(e.line, e.key, "alpha must lie in (0, 8], got " + e.value);
      }
    } else if (e.key == "m") {
      spec.multiplier = parse_count(e);
      if (spec.multiplier == 0) throw ParseError(e.line, e.key, "m must be positive");
    } else if (e.key == "classes") {
      spec.num_classes = parse_count(e);
      if (spec.num_classes == 0) throw ParseError(e.line, e.key, "classes must be positive");
    } else if (e.key == "stem.kernel") {
      spec.stem.kernel = parse_count(e);
    } else if (e.key == "stem.out") {
      spec.stem.out_channels = parse_count(e);
    } else if (e.key == "stem.stride") {
      spec.stem.stride = parse_count(e);
      if (spec.stem.stride != 1 && spec.stem.stride != 2) {
        throw ParseError(e.line, e.key, "stem stride must be 1 or 2, got " + e.value);
      }
    } else if (e.key == "head.pwc") {
      spec.head.final_pwc = parse_count(e);
    } else if (e.key == "head.pool") {
      spec.head.pool_window = parse_count(e);
    } else {
      throw ParseError(e.line, e.key, "unknown key");
    }
  }

  std::vector<std::string> required = {"alpha", "m", "classes"};
  if (!from_builtin) {
    for (const char* k : {"name", "input", "stem.kernel", "stem.out", "stem.stride"}) required.push_back(k);
  }
  for (const std::string& k : required) {
    if (!seen.count(k)) throw ParseError(eof_line, k, "missing required key");
  }

  for (const Section& sec : sections) {
    if (sec.index > spec.stages.size()) {
      throw ParseError(sec.line, "stage " + std::to_string(sec.index),
                       "stage index skips past the " + std::to_string(spec.stages.size()) +
                           " defined stages");
    }
    if (sec.index == spec.stages.size()) {
      StageSpec st;
      st.out_channels = 0;
      std::set<std::string> keys;
      for (const Entry& e : sec.entries) keys.insert(e.key);
      for (const char* k : {"kind", "out", "stride"}) {
        if (!keys.count(k)) {
          throw ParseError(sec.line, k, "stage " + std::to_string(sec.index) + ": missing required key");
        }
      }
      for (const Entry& e : sec.entries) apply_stage_entry(st, e, sec.index);
      spec.stages.push_back(st);
    } else {
      for (const Entry& e : sec.entries) apply_stage_entry(spec.stages[sec.index], e, sec.index);
    }
  }

  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw ParseError(eof_line, "", e.what());
  }
  return spec;
}

NetworkSpec load_spec_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("cannot open spec file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_spec(buf.str());
  } catch (const ParseError& e) {
    throw SpecError(path + ": " + e.what());
  }
}

std::string emit_spec(const NetworkSpec& spec) {
  std::ostringstream out;
  out << "# network spec\n";
  out << "name = " << spec.name << "\n";
  out << "input = " << spec.input_size << "\n";
  out << "alpha = " << format_real(spec.alpha) << "\n";
  out << "m = " << spec.multiplier << "\n";
  out << "classes = " << spec.num_classes << "\n";
  out << "stem.kernel = " << spec.stem.kernel << "\n";
  out << "stem.out = " << spec.stem.out_channels << "\n";
  out << "stem.stride = " << spec.stem.stride << "\n";
  out << "head.pwc = " << spec.head.final_pwc << "\n";
  out << "head.pool = " << spec.head.pool_window << "\n";
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& st = spec.stages[i];
    out << "\n[stage " << i << "]\n";
    out << "kind = " << to_string(st.kind) << "\n";
    out << "out = " << st.out_channels << "\n";
    out << "mid = " << st.mid_channels << "\n";
    out << "stride = " << st.stride << "\n";
    out << "repeat = " << st.repeats << "\n";
  }
  return out.str();
}

}  // namespace dpd
