#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vmoe/allocator.hpp"
#include "vmoe/model/model.hpp"
#include "vmoe/numkit/flops.hpp"

namespace vmoe::metering {

using model::ModelConfig;

inline constexpr std::size_t kReportComponents = 6;
// Report order; matches numkit::Component without kOther.
inline constexpr std::array<numkit::Component, kReportComponents> kComponents{
    numkit::Component::kEmbedding, numkit::Component::kAttention, numkit::Component::kDenseMlp,
    numkit::Component::kRouter,    numkit::Component::kExpertMlp, numkit::Component::kHead};

inline constexpr const char* kFlopConvention = "flops = 2 * multiply-adds";

struct FlopReport {
  std::array<std::uint64_t, kReportComponents> madds{};
  std::size_t images = 0;
  std::size_t tokens = 0;  // images * (patches + 1)
  std::string convention = kFlopConvention;

  std::uint64_t component_madds(numkit::Component c) const;
  std::uint64_t total_madds() const;
  std::uint64_t flops(numkit::Component c) const { return 2 * component_madds(c); }
  std::uint64_t total_flops() const { return 2 * total_madds(); }
  double flops_per_image() const;
  double flops_per_token() const;

  friend bool operator==(const FlopReport&, const FlopReport&) = default;
};

// Closed-form cost of one eval forward pass over `images` images, allocated
// in groups of config.group_images (the last group may be partial).
FlopReport flops_analytic(const ModelConfig& config, std::size_t images, double capacity, std::size_t k);
inline FlopReport flops_analytic(const ModelConfig& config, std::size_t images) {
  return flops_analytic(config, images, config.capacity, config.k);
}

// Runs the instrumented eval forward pass and reads the counters.
FlopReport flops_counted(const ModelConfig& config, const model::ParamStore& params, const model::Dataset& data,
                         const model::ForwardOptions& opts = {});

nlohmann::ordered_json to_json(const FlopReport& report);

struct CommReport {
  std::size_t successful = 0;  // successful assignments
  std::size_t dispatch = 0;    // assignments whose token and expert sit on different devices
  std::size_t combine = 0;     // return traffic, equal to dispatch

  friend bool operator==(const CommReport&, const CommReport&) = default;
};

// `token_to_device` is indexed by the table's token index.
CommReport comm_volume(const allocator::AssignmentTable& table, std::span<const int> expert_to_device,
                       std::span<const int> token_to_device);
// All groups of one layer; tokens are numbered consecutively across groups.
CommReport comm_volume(std::span<const allocator::AssignmentTable> tables, std::span<const int> expert_to_device,
                       std::span<const int> token_to_device);

nlohmann::ordered_json to_json(const CommReport& report);

}  // namespace vmoe::metering
