#pragma once

// Checkpoint layout (all integers and floats little-endian):
//
//   magic      8 bytes  "SPMOECKP"
//   version    u32      kCheckpointVersion
//   config     i32 x 8  vocab_size d_model ffn_dim n_layers n_heads
//                       max_input_len max_output_len num_experts
//              f64 x 3  lambda gamma learning_rate
//              u64 x 3  seed step rng_state
//   vocab      u32 count, then per word: u32 byte length + UTF-8 bytes
//   tensors    u32 count, then per tensor:
//                u32 name length + name bytes
//                u32 rows, u32 cols
//                u64 payload bytes (= rows * cols * 8)
//                f64 values, column-major
//   end        4 bytes  "END!"

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "spmoe/metrics.hpp"
#include "spmoe/model.hpp"

namespace spmoe {

inline constexpr uint32_t kCheckpointVersion = 1;

void SaveCheckpoint(const ExpertBundle& bundle, const std::filesystem::path& path);
ExpertBundle LoadCheckpoint(const std::filesystem::path& path);

nlohmann::ordered_json ReportToJson(const metrics::MetricReport& report);
metrics::MetricReport ReportFromJson(const nlohmann::json& j);
void SaveReport(const metrics::MetricReport& report, const std::filesystem::path& path);

}  // namespace spmoe
