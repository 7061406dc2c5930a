// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/params.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "casnet/errors.h"

namespace casnet {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'S', 'N', 'E', 'T', 'C', 'K'};

void PutU64(std::ostream& os, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

uint64_t GetU64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

Tensor ParameterSet::Add(const std::string& name, Tensor tensor, bool trainable) {
  CASNET_CHECK(!name.empty(), "parameter name must not be empty");
  CASNET_CHECK(!index_.count(name), "duplicate parameter name '", name, "'");
  index_[name] = entries_.size();
  entries_.push_back({name, tensor, trainable});
  return tensor;
}

Tensor ParameterSet::AddUniform(const std::string& name, Shape shape,
                                double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(static_cast<size_t>(NumElements(shape)));
  for (double& v : values) v = dist(rng);
  return Add(name, Tensor::FromData(std::move(shape), std::move(values), true), true);
}

Tensor ParameterSet::AddConstant(const std::string& name, Shape shape, double value) {
  return Add(name, Tensor::Full(std::move(shape), value, true), true);
}

Tensor ParameterSet::AddBuffer(const std::string& name, Shape shape, double value) {
  return Add(name, Tensor::Full(std::move(shape), value, false), false);
}

std::vector<Tensor> ParameterSet::Trainable() const {
  std::vector<Tensor> out;
  for (const auto& p : entries_)
    if (p.trainable) out.push_back(p.tensor);
  return out;
}

const Parameter* ParameterSet::Find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

int64_t ParameterSet::CountTrainable() const {
  int64_t n = 0;
  for (const auto& p : entries_)
    if (p.trainable) n += p.tensor.numel();
  return n;
}

void ParameterSet::ZeroGrad() {
  for (auto& p : entries_) p.tensor.ZeroGrad();
}

double ParameterSet::GradNorm() const {
  double sq = 0.0;
  for (const auto& p : entries_) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

std::vector<std::vector<double>> ParameterSet::Snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(entries_.size());
  for (const auto& p : entries_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void ParameterSet::Restore(const std::vector<std::vector<double>>& snapshot) {
  CASNET_CHECK(snapshot.size() == entries_.size(), "snapshot has ", snapshot.size(),
               " entries, model has ", entries_.size());
  for (size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].tensor.mutable_data();
    CASNET_CHECK(dst.size() == snapshot[i].size(), "snapshot size mismatch for '",
                 entries_[i].name, "'");
    std::copy(snapshot[i].begin(), snapshot[i].end(), dst.begin());
  }
}

void SaveCheckpoint(const std::string& path, const ParameterSet& params,
                    const nlohmann::json& meta) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& p : params.entries()) {
    header["tensors"].push_back({{"name", p.name},
                                 {"shape", p.tensor.shape()},
                                 {"offset", offset},
                                 {"trainable", p.trainable}});
    offset += static_cast<uint64_t>(p.tensor.numel());
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint '" + path + "' for writing");
  os.write(kMagic, 8);
  PutU64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params.entries()) {
    for (double v : p.tensor.data()) PutU64(os, std::bit_cast<uint64_t>(v));
  }
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IoError("'" + path + "' is not a casnet checkpoint (bad magic)");
  }
  const uint64_t header_len = GetU64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) {
    throw IoError("checkpoint '" + path + "' is truncated in its header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16,
                                   bytes.begin() + 16 + static_cast<int64_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a malformed header: " + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointVersion) {
    throw IoError("checkpoint '" + path + "' has unsupported format version " +
                  header.value("format_version", nlohmann::json(0)).dump());
  }
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  const size_t data_start = 16 + header_len;
  const size_t n_values = (bytes.size() - data_start) / 8;
  for (const auto& entry : header.at("tensors")) {
    CheckpointTensor t;
    const std::string name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const uint64_t count = static_cast<uint64_t>(NumElements(t.shape));
    if (offset + count > n_values) {
      throw IoError("checkpoint '" + path + "' is truncated in tensor '" + name + "'");
    }
    t.values.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
      t.values[i] = std::bit_cast<double>(GetU64(bytes.data() + data_start + 8 * (offset + i)));
    }
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

void ApplyCheckpoint(const Checkpoint& ckpt, ParameterSet& params) {
  for (const auto& p : params.entries()) {
    auto it = ckpt.tensors.find(p.name);
    CASNET_CHECK(it != ckpt.tensors.end(), "checkpoint has no tensor '", p.name, "'");
    CASNET_CHECK(it->second.shape == p.tensor.shape(), "checkpoint tensor '", p.name,
                 "' has shape ", ShapeToString(it->second.shape), ", model expects ",
                 ShapeToString(p.tensor.shape()));
  }
  for (const auto& p : params.entries()) {
    Tensor t = p.tensor;
    const auto& src = ckpt.tensors.at(p.name).values;
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

}  // namespace casnet
