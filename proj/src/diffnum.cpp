#include "fustal/diffnum.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fustal/errors.hpp"

namespace fustal::diffnum {

Tensor& ModelParams::add(std::string name, std::vector<std::size_t> shape) {
  return add(std::move(name), Tensor(std::move(shape)));
}

Tensor& ModelParams::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ContractError("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), std::move(tensor));
  return entries_.back().second;
}

Tensor& ModelParams::at(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("unknown parameter " + name);
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("unknown parameter " + name);
}

bool ModelParams::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ModelParams::num_values() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

bool ModelParams::same_layout(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
  }
  return true;
}

void init_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
}

AdamState::AdamState(const ModelParams& params, float lr) : learning_rate(lr) {
  for (const auto& [name, t] : params) {
    first_moment.emplace_back(t.size(), 0.0f);
    second_moment.emplace_back(t.size(), 0.0f);
  }
}

void adam_step(ModelParams& params, AdamState& state) {
  if (state.first_moment.size() != params.size())
    throw ContractError("adam_step: optimizer state does not match parameters");
  std::size_t n = 0;
  for (auto& [name, t] : params) {
    for (float g : t.grad())
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + name);
    if (state.first_moment[n].size() != t.size())
      throw ContractError("adam_step: moment size mismatch for " + name);
    ++n;
  }
  ++state.step;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double lr = state.learning_rate;
  n = 0;
  for (auto& [name, t] : params) {
    auto data = t.data();
    auto grad = t.grad();
    auto& m = state.first_moment[n];
    auto& v = state.second_moment[n];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / corr1;
      const double vhat = vi / corr2;
      data[i] = static_cast<float>(double(data[i]) - lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
    t.zero_grad();
    ++n;
  }
}

void write_f32_le(std::ostream& os, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_f32_le(std::istream& is, std::span<float> values) {
  std::vector<unsigned char> buf(values.size() * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
    is.setstate(std::ios::failbit);
    return;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
}

namespace {
constexpr const char* kCheckpointFormat = "fustal-checkpoint";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["version"] = 1;
  header["meta"] = ckpt.meta;
  auto tensors = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.params) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  header["tensors"] = tensors;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path.string(), "cannot open checkpoint for writing");
  const std::string line = header.dump() + "\n";
  os.write(line.data(), static_cast<std::streamsize>(line.size()));
  for (const auto& [name, t] : ckpt.params) write_f32_le(os, t.data());
  if (!os) throw IoError(path.string(), "write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "checkpoint not found");
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string(), 0, "missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string(), 0, std::string("bad checkpoint header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != kCheckpointFormat)
    throw FormatError(path.string(), 0, "not a checkpoint file");
  if (header.value("version", 0) != 1) throw FormatError(path.string(), 0, "unsupported checkpoint version");

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  std::uint64_t offset = line.size() + 1;
  for (const auto& entry : header.at("tensors")) {
    Tensor t(entry.at("shape").get<std::vector<std::size_t>>());
    read_f32_le(is, t.data());
    if (!is) throw FormatError(path.string(), offset, "truncated payload for " + entry.at("name").get<std::string>());
    offset += t.size() * 4;
    ckpt.params.add(entry.at("name").get<std::string>(), std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(path.string(), offset, "trailing bytes after payload");
  return ckpt;
}

}  // namespace fustal::diffnum
