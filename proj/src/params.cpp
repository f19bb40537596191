#include "padtts/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "padtts/errors.hpp"

namespace padtts {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'D', 'T', 'T', 'S', 'C', 'K'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

}  // namespace

Tensor ParameterSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  index_[name] = items_.size();
  items_.push_back({name, value, false});
  return value;
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second];
}

std::size_t ParameterSet::scalar_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : items_)
    if (p.name.rfind(prefix, 0) == 0) n += p.value.numel();
  return n;
}

void ParameterSet::set_frozen(const std::string& name, bool frozen) {
  auto& p = get(name);
  p.frozen = frozen;
  p.value.set_requires_grad(!frozen);
}

void ParameterSet::set_frozen_prefix(const std::string& prefix, bool frozen, bool invert) {
  for (auto& p : items_) {
    const bool match = p.name.rfind(prefix, 0) == 0;
    if (match != invert) {
      p.frozen = frozen;
      p.value.set_requires_grad(!frozen);
    }
  }
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.value.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  for (auto& p : items_) {
    const auto& src = other.get(p.name).value;
    if (src.shape() != p.value.shape())
      throw ShapeError("parameter '" + p.name + "': shape " + shape_str(src.shape()) +
                       " vs " + shape_str(p.value.shape()));
    std::copy(src.data().begin(), src.data().end(), p.value.mutable_data().begin());
  }
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) {
    // Uniform from raw bits so the stream is identical across standard libraries.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    x = (2.0 * u - 1.0) * limit;
  }
  return Tensor::from({fan_in, fan_out}, std::move(v));
}

// ---------------------------------------------------------------------------

namespace {

void require_grad(const Parameter& p) {
  if (!p.value.has_grad())
    throw Error("optimizer: non-frozen parameter '" + p.name + "' has no gradient");
}

}  // namespace

void Sgd::step(ParameterSet& params) {
  for (auto& p : params.items()) {
    if (p.frozen) continue;
    require_grad(p);
    auto w = p.value.mutable_data();
    auto g = p.value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
  }
}

void Adam::step(ParameterSet& params) {
  for (const auto& p : params.items())
    if (!p.frozen) require_grad(p);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params.items()) {
    if (p.frozen) continue;
    auto& st = state_[p.name];
    auto w = p.value.mutable_data();
    auto g = p.value.grad();
    if (st.m.size() != w.size()) {
      st.m.assign(w.size(), 0.0);
      st.v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

Checkpoint Checkpoint::capture(const ParameterSet& params, nlohmann::json meta) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  for (const auto& p : params.items())
    ck.entries.push_back({p.name, p.value.shape(), {p.value.data().begin(), p.value.data().end()}});
  return ck;
}

void Checkpoint::restore(ParameterSet& params) const {
  for (auto& p : params.items()) {
    const Entry* e = find(p.name);
    if (!e) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
    if (e->shape != p.value.shape())
      throw FormatError("checkpoint parameter '" + p.name + "' has shape " +
                        shape_str(e->shape) + ", model expects " + shape_str(p.value.shape()));
    std::copy(e->values.begin(), e->values.end(), p.value.mutable_data().begin());
  }
}

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::string Checkpoint::payload_bytes(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw ConfigError("checkpoint lacks parameter '" + name + "'");
  std::string out;
  out.reserve(e->values.size() * 8);
  for (double d : e->values) put_f64(out, d);
  return out;
}

std::string Checkpoint::serialize() const {
  nlohmann::json header = meta;
  header["format"] = "padtts-checkpoint-v1";
  auto& list = header["entries"] = nlohmann::json::array();
  for (const auto& e : entries) list.push_back({{"name", e.name}, {"shape", e.shape}});
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, text.size());
  out += text;
  for (const auto& e : entries)
    for (double d : e.values) put_f64(out, d);
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not a padtts checkpoint");
  const auto len = get_u64(bytes, 8);
  if (bytes.size() < 16 + len) throw FormatError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  std::size_t pos = 16 + len;
  for (const auto& item : header.at("entries")) {
    Entry e{item.at("name").get<std::string>(), item.at("shape").get<Shape>(), {}};
    const auto n = shape_numel(e.shape);
    if (bytes.size() < pos + 8 * n) throw FormatError("checkpoint payload truncated at '" + e.name + "'");
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i, pos += 8)
      e.values[i] = std::bit_cast<double>(get_u64(bytes, pos));
    ck.entries.push_back(std::move(e));
  }
  if (pos != bytes.size()) throw FormatError("checkpoint has trailing bytes");
  header.erase("entries");
  header.erase("format");
  ck.meta = std::move(header);
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  const auto bytes = serialize();
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace padtts
