#include "dpd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dpd/errors.hpp"
#include "dpd/spec_io.hpp"

namespace dpd {
namespace {

constexpr char kMagic[8] = {'D', 'P', 'D', 'C', 'K', 'P', 'T', '\0'};

struct Entry {
  std::string name;
  std::span<double> values;
};

std::vector<Entry> entries(Network& net) {
  std::vector<Entry> out;
  for (const ParamRef& p : net.parameters()) out.push_back({p.layer + "." + p.role, p.value});
  for (const BufferRef& b : net.buffers()) out.push_back({b.layer + "." + b.role, b.value});
  return out;
}

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(path_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

Reader open_reader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), {});
  Reader r(std::move(buf), path.string());
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) r.fail("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  return r;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Network& net) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  const std::string spec = emit_spec(net.spec());
  w.u32(static_cast<std::uint32_t>(spec.size()));
  w.bytes(spec.data(), spec.size());
  const std::vector<Entry> list = entries(net);
  w.u32(static_cast<std::uint32_t>(list.size()));
  for (const Entry& e : list) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u64(e.values.size());
    for (double v : e.values) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint '" + path.string() + "'");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

std::string checkpoint_spec_text(const std::filesystem::path& path) {
  Reader r = open_reader(path);
  return r.str(r.u32());
}

void load_checkpoint(const std::filesystem::path& path, Network& net) {
  Reader r = open_reader(path);
  (void)r.str(r.u32());
  const std::vector<Entry> list = entries(net);
  const std::uint32_t count = r.u32();
  if (count != list.size()) {
    r.fail("checkpoint has " + std::to_string(count) + " tensors, network has " + std::to_string(list.size()));
  }
  // Stage into a copy so a failed load leaves the network untouched.
  std::vector<std::vector<double>> staged(list.size());
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string name = r.str(r.u32());
    if (name != list[i].name) r.fail("entry " + std::to_string(i) + " is '" + name + "', expected '" + list[i].name + "'");
    const std::uint64_t n = r.u64();
    if (n != list[i].values.size()) {
      r.fail("'" + name + "' has " + std::to_string(n) + " values, expected " + std::to_string(list[i].values.size()));
    }
    staged[i].resize(n);
    for (double& v : staged[i]) v = r.f64();
  }
  if (!r.at_end()) r.fail("trailing bytes after the last tensor");
  for (std::size_t i = 0; i < list.size(); ++i) {
    std::memcpy(list[i].values.data(), staged[i].data(), staged[i].size() * sizeof(double));
  }
}

}  // namespace dpd
