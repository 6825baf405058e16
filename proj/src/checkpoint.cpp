#include "difuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "difuse/error.hpp"
#include "difuse/networks.hpp"
#include "difuse/schedule.hpp"

namespace difuse {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'F', 'U', 'S', 'E', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw ValidationError("checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  throw FormatError("checkpoint: unknown dtype '" + name + "'");
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint: truncated header");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, const torch::Tensor& t) {
  require(!name.empty(), "checkpoint: empty tensor name");
  require(!has(name), "checkpoint: duplicate tensor '" + name + "'");
  tensors.emplace_back(name, t.detach().to(torch::kCPU).contiguous().clone());
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint: missing tensor '" + name + "'");
}

std::string Checkpoint::serialize() const {
  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    index.push_back({{"name", name},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header = nlohmann::json{{"metadata", metadata}, {"tensors", index}}.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<uint32_t>(out, format_version);
  put<uint64_t>(out, header.size());
  out += header;
  out.reserve(out.size() + offset);
  for (const auto& [_, t] : tensors) {
    auto c = t.contiguous();
    out.append(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size());
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  size_t pos = sizeof(kMagic);
  Checkpoint ck;
  ck.format_version = take<uint32_t>(bytes, pos);
  if (ck.format_version != kFormatVersion) {
    throw FormatError("checkpoint: unsupported format version " +
                      std::to_string(ck.format_version));
  }
  const auto header_len = take<uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw FormatError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  pos += header_len;
  ck.metadata = header.value("metadata", nlohmann::json::object());

  try {
    for (const auto& entry : header.at("tensors")) {
      const auto dtype = dtype_from(entry.at("dtype").get<std::string>());
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<uint64_t>();
      const auto nbytes = entry.at("nbytes").get<uint64_t>();
      if (pos + offset + nbytes > bytes.size()) throw FormatError("checkpoint: truncated data");
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (static_cast<uint64_t>(t.numel()) * t.element_size() != nbytes) {
        throw FormatError("checkpoint: size mismatch for '" + entry.at("name").get<std::string>() +
                          "'");
      }
      std::memcpy(t.data_ptr(), bytes.data() + pos + offset, nbytes);
      ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad tensor index: ") + e.what());
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("checkpoint not found: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

void export_module(const torch::nn::Module& module, const std::string& prefix, Checkpoint& ckpt) {
  for (const auto& p : module.named_parameters()) ckpt.add(prefix + p.key(), p.value());
  for (const auto& b : module.named_buffers()) ckpt.add(prefix + b.key(), b.value());
}

void import_module(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt) {
  torch::NoGradGuard guard;
  auto copy_into = [&](const std::string& name, torch::Tensor& dst) {
    const auto& src = ckpt.get(prefix + name);
    if (src.sizes() != dst.sizes()) {
      std::ostringstream os;
      os << "checkpoint: shape mismatch for '" << prefix << name << "': " << src.sizes()
         << " vs " << dst.sizes();
      throw FormatError(os.str());
    }
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& p : module.named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : module.named_buffers()) copy_into(b.key(), b.value());
}

nlohmann::json schedule_to_json(const NoiseSchedule& s) {
  return {{"T", s.steps()},
          {"beta_start", s.beta_start()},
          {"beta_end", s.beta_end()},
          {"schedule_kind", s.kind()}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.value("schedule_kind", std::string("linear"));
    if (kind != "linear") throw FormatError("unsupported schedule kind '" + kind + "'");
    return NoiseSchedule::linear(j.at("T").get<int64_t>(), j.at("beta_start").get<double>(),
                                 j.at("beta_end").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad schedule metadata: ") + e.what());
  }
}

nlohmann::json spec_to_json(const DenoiserSpec& s) {
  return {{"latent_channels", s.latent_channels},
          {"base_width", s.base_width},
          {"depth", s.depth},
          {"time_embed_dim", s.time_embed_dim},
          {"prediction", s.prediction}};
}

DenoiserSpec spec_from_json(const nlohmann::json& j) {
  try {
    DenoiserSpec s;
    s.latent_channels = j.at("latent_channels").get<int64_t>();
    s.base_width = j.at("base_width").get<int64_t>();
    s.depth = j.at("depth").get<int64_t>();
    s.time_embed_dim = j.at("time_embed_dim").get<int64_t>();
    s.prediction = j.value("prediction", std::string("eps"));
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad denoiser metadata: ") + e.what());
  }
}

}  // namespace difuse
