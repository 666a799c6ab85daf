#include "spg/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "spg/error.hpp"

namespace spg {

void ParamStore::add(const std::string& name, Matrix value) {
  if (entries_.count(name)) throw ValidationError("ParamStore: duplicate parameter '" + name + "'");
  entries_.emplace(name, std::move(value));
}

const Matrix& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::set(const std::string& name, const Matrix& value) {
  Matrix& dst = mutable_value(name);
  if (dst.rows() != value.rows() || dst.cols() != value.cols())
    throw ValidationError("ParamStore: shape change for '" + name + "'");
  dst = value;
}

Matrix& ParamStore::mutable_value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : entries_) n += static_cast<std::size_t>(m.size());
  return n;
}

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string f32_payload(const Matrix& m) {
  std::string bytes(static_cast<std::size_t>(m.size()) * 4, '\0');
  for (Index i = 0; i < m.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i]));
    for (int b = 0; b < 4; ++b) bytes[static_cast<std::size_t>(i) * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return bytes;
}

}  // namespace

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) | std::uint8_t(bytes[i + 2]);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = std::uint8_t(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= std::uint8_t(bytes[i + 1]) << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += (i + 1 < bytes.size()) ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  auto decode_char = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw FormatError("base64: length not a multiple of 4", text.size());
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        vals[k] = 0;
        ++pad;
      } else {
        vals[k] = decode_char(c);
        if (vals[k] < 0 || pad > 0) throw FormatError("base64: invalid character", i + k);
      }
    }
    const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out += static_cast<char>((v >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(v & 0xFF);
  }
  return out;
}

std::string ParamStore::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, m] : entries_) {
    j[name] = {{"shape", {m.rows(), m.cols()}}, {"data", base64_encode(f32_payload(m))}};
  }
  return j.dump(1);
}

ParamStore ParamStore::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("weight file: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw FormatError("weight file: top level must be an object", 0);
  ParamStore store;
  for (const auto& [name, entry] : j.items()) {
    if (!entry.contains("shape") || !entry.contains("data"))
      throw ValidationError("weight file: entry '" + name + "' needs shape and data");
    const auto rows = entry["shape"].at(0).get<Index>();
    const auto cols = entry["shape"].at(1).get<Index>();
    if (rows < 0 || cols < 0) throw ValidationError("weight file: negative shape for '" + name + "'");
    const std::string bytes = base64_decode(entry["data"].get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * 4)
      throw ValidationError("weight file: payload size mismatch for '" + name + "'");
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= std::uint32_t(std::uint8_t(bytes[static_cast<std::size_t>(i) * 4 + b])) << (8 * b);
      m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    store.add(name, std::move(m));
  }
  return store;
}

void ParamStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ParamStore ParamStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// splitmix64
Rng::Rng(std::uint64_t seed) : state_(seed) {}

std::uint64_t Rng::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

void add_linear(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(in));
  Matrix w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  Matrix b(1, out);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-a, a);
  store.add(prefix + ".weight", std::move(w));
  store.add(prefix + ".bias", std::move(b));
}

void add_norm(ParamStore& store, const std::string& prefix, Index width) {
  store.add(prefix + ".gain", Matrix::Ones(1, width));
  store.add(prefix + ".shift", Matrix::Zero(1, width));
}

ad::Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  ad::Var v = tape_.variable(store_.get(name));
  bound_.emplace(name, v);
  return v;
}

void ParamBinder::bind(const std::string& name, ad::Var v) {
  const Matrix& m = store_.get(name);
  if (v.rows() != m.rows() || v.cols() != m.cols()) throw ValidationError("ParamBinder: shape mismatch for '" + name + "'");
  if (!bound_.emplace(name, v).second) throw ValidationError("ParamBinder: '" + name + "' already bound");
}

GradMap ParamBinder::gradients() const {
  GradMap out;
  for (const auto& [name, m] : store_.entries()) {
    auto it = bound_.find(name);
    out.emplace(name, it == bound_.end() ? Matrix::Zero(m.rows(), m.cols()) : tape_.grad(it->second));
  }
  return out;
}

void adam_step(ParamStore& store, const GradMap& grads, AdamState& state, const AdamOptions& opt) {
  for (const auto& [name, g] : grads) {
    const Matrix& p = store.get(name);
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw ValidationError("adam_step: gradient shape mismatch for '" + name + "'");
  }
  if (grads.size() != store.size()) throw ValidationError("adam_step: gradients not aligned with store");
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Matrix& p = store.mutable_value(name);
    auto [m_it, m_new] = state.first.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    auto [v_it, v_new] = state.second.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    p *= (1.0 - opt.lr * opt.weight_decay);
    p.array() -= opt.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt.eps);
  }
}

void accumulate_grads(GradMap& dst, const GradMap& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) throw ValidationError("accumulate_grads: unknown key '" + name + "'");
    it->second += g;
  }
}

}  // namespace spg
