#include "vmoe/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace vmoe::model {

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
bool get(std::istream& is, T& v) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) return false;
  std::memcpy(&v, buf, sizeof(T));
  return true;
}

void put_record(std::ostream& os, const std::string& name, const Tensor& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
  for (double v : t.data()) put<double>(os, v);
}

void put_scalar(std::ostream& os, const std::string& name, double v) { put_record(os, name, Tensor::scalar(v)); }

// u64 values split into exactly representable 32-bit halves.
void put_u64(std::ostream& os, const std::string& name, std::uint64_t v) {
  put_scalar(os, name + "_hi", static_cast<double>(v >> 32));
  put_scalar(os, name + "_lo", static_cast<double>(v & 0xffffffffULL));
}

void put_rng(std::ostream& os, const std::string& name, const numkit::RngStream& r) {
  put_u64(os, name + "/seed", r.seed());
  put_u64(os, name + "/stream", r.stream());
  put_u64(os, name + "/counter", r.counter());
}

class Reader {
 public:
  explicit Reader(std::map<std::string, Tensor> records) : records_(std::move(records)) {}

  double scalar(const std::string& name) {
    const auto it = records_.find(name);
    if (it == records_.end()) throw CheckpointError("checkpoint is missing '" + name + "'");
    if (it->second.rank() != 0) throw CheckpointError("checkpoint entry '" + name + "' is not a scalar");
    return it->second.item();
  }
  std::size_t size(const std::string& name) { return static_cast<std::size_t>(scalar(name)); }
  std::uint64_t u64(const std::string& name) {
    return (static_cast<std::uint64_t>(scalar(name + "_hi")) << 32) | static_cast<std::uint64_t>(scalar(name + "_lo"));
  }
  numkit::RngStream rng(const std::string& name) {
    numkit::RngStream r(u64(name + "/seed"), u64(name + "/stream"));
    r.set_counter(u64(name + "/counter"));
    return r;
  }
  std::map<std::string, Tensor>& records() { return records_; }

 private:
  std::map<std::string, Tensor> records_;
};

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write("VMOE", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  const ModelConfig& c = ckpt.config;
  put_scalar(os, "config/image_size", static_cast<double>(c.image_size));
  put_scalar(os, "config/channels", static_cast<double>(c.channels));
  put_scalar(os, "config/patch", static_cast<double>(c.patch));
  put_scalar(os, "config/dim", static_cast<double>(c.dim));
  put_scalar(os, "config/blocks", static_cast<double>(c.blocks));
  put_scalar(os, "config/heads", static_cast<double>(c.heads));
  put_scalar(os, "config/mlp_dim", static_cast<double>(c.mlp_dim));
  put_scalar(os, "config/experts", static_cast<double>(c.experts));
  put_scalar(os, "config/k", static_cast<double>(c.k));
  put_scalar(os, "config/capacity", c.capacity);
  put_scalar(os, "config/placement", static_cast<double>(static_cast<int>(c.placement)));
  put_scalar(os, "config/last_n", static_cast<double>(c.last_n));
  put_scalar(os, "config/classes", static_cast<double>(c.classes));
  put_scalar(os, "config/gate_order", static_cast<double>(static_cast<int>(c.gate_order)));
  put_scalar(os, "config/group_images", static_cast<double>(c.group_images));
  put_u64(os, "config/seed", c.seed);
  put_rng(os, "rng/data", ckpt.data_rng);
  put_rng(os, "rng/noise", ckpt.noise_rng);
  for (const auto& [name, t] : ckpt.params) put_record(os, "param/" + name, t);
  if (!os) throw CheckpointError("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "VMOE", 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  std::uint32_t version = 0;
  if (!get(is, version)) throw CheckpointError("truncated checkpoint header");
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  std::map<std::string, Tensor> records;
  std::uint32_t name_len = 0;
  while (get(is, name_len)) {
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!is.read(name.data(), name_len) || !get(is, rank)) throw CheckpointError("truncated checkpoint record");
    numkit::Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!get(is, v)) throw CheckpointError("truncated shape for '" + name + "'");
      d = static_cast<std::size_t>(v);
    }
    std::vector<double> data(numkit::shape_size(shape));
    for (double& v : data)
      if (!get(is, v)) throw CheckpointError("truncated payload for '" + name + "'");
    if (!records.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw CheckpointError("duplicate checkpoint record '" + name + "'");
    }
  }
  if (!is.eof()) throw CheckpointError("read error in checkpoint");
  if (is.gcount() != 0) throw CheckpointError("trailing bytes after the last checkpoint record");

  Reader r(std::move(records));
  Checkpoint ck;
  ModelConfig& c = ck.config;
  c.image_size = r.size("config/image_size");
  c.channels = r.size("config/channels");
  c.patch = r.size("config/patch");
  c.dim = r.size("config/dim");
  c.blocks = r.size("config/blocks");
  c.heads = r.size("config/heads");
  c.mlp_dim = r.size("config/mlp_dim");
  c.experts = r.size("config/experts");
  c.k = r.size("config/k");
  c.capacity = r.scalar("config/capacity");
  c.placement = static_cast<Placement>(static_cast<int>(r.scalar("config/placement")));
  c.last_n = r.size("config/last_n");
  c.classes = r.size("config/classes");
  c.gate_order = static_cast<GateOrder>(static_cast<int>(r.scalar("config/gate_order")));
  c.group_images = r.size("config/group_images");
  c.seed = r.u64("config/seed");
  ck.data_rng = r.rng("rng/data");
  ck.noise_rng = r.rng("rng/noise");
  for (auto& [name, t] : r.records())
    if (name.rfind("param/", 0) == 0) ck.params.emplace(name.substr(6), std::move(t));

  // The stored tensors must be exactly what the config describes.
  const ParamStore expected = init_params(c);
  if (expected.size() != ck.params.size()) throw CheckpointError("checkpoint parameter set does not match its config");
  for (const auto& [name, t] : expected) {
    const auto it = ck.params.find(name);
    if (it == ck.params.end() || it->second.shape() != t.shape()) {
      throw CheckpointError("checkpoint parameter '" + name + "' is missing or misshapen");
    }
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace vmoe::model
