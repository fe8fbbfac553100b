#include "vmoe/analysis/metering.hpp"

#include <numeric>
#include <stdexcept>

namespace vmoe::metering {

namespace {

std::size_t slot_of(numkit::Component c) {
  for (std::size_t i = 0; i < kReportComponents; ++i)
    if (kComponents[i] == c) return i;
  throw std::invalid_argument("component is not part of the FLOP report");
}

}  // namespace

std::uint64_t FlopReport::component_madds(numkit::Component c) const { return madds[slot_of(c)]; }

std::uint64_t FlopReport::total_madds() const { return std::accumulate(madds.begin(), madds.end(), std::uint64_t{0}); }

double FlopReport::flops_per_image() const {
  return images == 0 ? 0.0 : static_cast<double>(total_flops()) / static_cast<double>(images);
}

double FlopReport::flops_per_token() const {
  return tokens == 0 ? 0.0 : static_cast<double>(total_flops()) / static_cast<double>(tokens);
}

FlopReport flops_analytic(const ModelConfig& c, std::size_t images, double capacity, std::size_t k) {
  c.validate();
  using numkit::Component;
  const std::uint64_t n = images, s = c.seq_len(), d = c.dim, dm = c.mlp_dim, e = c.experts;
  const std::uint64_t t = n * s;
  const std::uint64_t dh = d / c.heads;
  FlopReport r;
  r.images = images;
  r.tokens = t;
  auto& m = r.madds;
  m[slot_of(Component::kEmbedding)] = n * c.num_patches() * c.patch_dim() * d;
  m[slot_of(Component::kHead)] = n * d * c.classes;

  // B_e is fixed per allocation group, padded slots included.
  std::uint64_t slots = 0;
  for (std::size_t begin = 0; begin < images; begin += c.group_images) {
    const std::size_t group = std::min(c.group_images, images - begin);
    slots += allocator::buffer_capacity(group, c.seq_len(), k, c.experts, capacity);
  }
  for (std::size_t b = 0; b < c.blocks; ++b) {
    m[slot_of(Component::kAttention)] += t * d * 3 * d + 2 * n * c.heads * s * s * dh + t * d * d;
    if (c.is_moe(b)) {
      m[slot_of(Component::kRouter)] += t * e * d;
      m[slot_of(Component::kExpertMlp)] += e * slots * 2 * d * dm;
    } else {
      m[slot_of(Component::kDenseMlp)] += 2 * t * d * dm;
    }
  }
  return r;
}

FlopReport flops_counted(const ModelConfig& c, const model::ParamStore& params, const model::Dataset& data,
                         const model::ForwardOptions& opts) {
  numkit::FlopCounter counter;
  {
    numkit::ScopedFlopCounter scope(counter);
    model::evaluate(c, params, data, opts);
  }
  if (counter.madds(numkit::Component::kOther) != 0) {
    throw std::logic_error("forward pass ran matmuls outside any metered component");
  }
  FlopReport r;
  r.images = data.size();
  r.tokens = data.size() * c.seq_len();
  for (std::size_t i = 0; i < kReportComponents; ++i) r.madds[i] = counter.madds(kComponents[i]);
  return r;
}

nlohmann::ordered_json to_json(const FlopReport& r) {
  nlohmann::ordered_json j;
  j["convention"] = r.convention;
  j["images"] = r.images;
  j["tokens"] = r.tokens;
  nlohmann::ordered_json comps = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < kReportComponents; ++i) {
    comps[std::string(numkit::component_name(kComponents[i]))] = {{"madds", r.madds[i]}, {"flops", 2 * r.madds[i]}};
  }
  j["components"] = comps;
  j["total_madds"] = r.total_madds();
  j["total_flops"] = r.total_flops();
  j["flops_per_image"] = r.flops_per_image();
  j["flops_per_token"] = r.flops_per_token();
  return j;
}

namespace {

int device_of(std::span<const int> map, std::size_t index, const char* what) {
  if (index >= map.size() || map[index] < 0) {
    throw std::invalid_argument(std::string("comm_volume: unmapped ") + what + " " + std::to_string(index));
  }
  return map[index];
}

void accumulate(CommReport& r, const allocator::AssignmentTable& table, std::span<const int> experts,
                std::span<const int> tokens, std::size_t offset) {
  for (std::size_t e = 0; e < table.num_experts; ++e) device_of(experts, e, "expert");
  for (std::size_t t = 0; t < table.tokens; ++t) {
    const int token_dev = device_of(tokens, offset + t, "token");
    for (std::size_t i = 0; i < table.k; ++i) {
      const auto& a = table.at(t, i);
      if (!a.success) continue;
      ++r.successful;
      if (experts[static_cast<std::size_t>(a.expert)] != token_dev) ++r.dispatch;
    }
  }
  r.combine = r.dispatch;
}

}  // namespace

CommReport comm_volume(const allocator::AssignmentTable& table, std::span<const int> expert_to_device,
                       std::span<const int> token_to_device) {
  CommReport r;
  accumulate(r, table, expert_to_device, token_to_device, 0);
  return r;
}

CommReport comm_volume(std::span<const allocator::AssignmentTable> tables, std::span<const int> expert_to_device,
                       std::span<const int> token_to_device) {
  CommReport r;
  std::size_t offset = 0;
  for (const auto& t : tables) {
    accumulate(r, t, expert_to_device, token_to_device, offset);
    offset += t.tokens;
  }
  return r;
}

nlohmann::ordered_json to_json(const CommReport& r) {
  return {{"successful", r.successful}, {"dispatch", r.dispatch}, {"combine", r.combine}};
}

}  // namespace vmoe::metering
