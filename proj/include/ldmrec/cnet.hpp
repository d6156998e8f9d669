#pragma once

// Conditional denoising network.
//
//   x -> FC_in (tanh) -> CG1 -> tanh -> PG(text) -> LeakyReLU -> PG(visual)
//     -> tanh -> CG2 -> FC_out -> raw scores
//
// CG block:  h' = tanh(W1 [h; z] + b1), c' = tanh(W2 c + b2),
//            g = logistic(W3 z + b3), out = h' (1 - g) + c' g
// PG block:  out = MLP1(m) * h + MLP2(m), channel-wise
// The step embedding z is sin/cos(t) + z_in[u] during training and z_in[u]
// alone for forward-free inference.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ldmrec/conditioning.hpp"
#include "ldmrec/tape.hpp"
#include "json.hpp"

namespace ldmrec {

struct CNetConfig {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t visual_dim = 0;
  std::size_t text_dim = 0;
  std::size_t d = 1000;
  std::size_t d_forward = 10;
  std::size_t d_svd = 100;
  std::size_t d_pg_hidden = 64;
  double leaky_slope = 0.01;
  bool disable_cg = false;
  bool disable_pg = false;
  bool text_first = true;

  void validate() const;
  bool operator==(const CNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const CNetConfig& c);
void from_json(const nlohmann::json& j, CNetConfig& c);

// One row per user in the batch; nullopt means forward-free (no step term).
using StepList = std::span<const std::optional<std::size_t>>;

namespace layers {

// tanh(x W^T + b)
Var fc_in(Var x, Var weight, Var bias);

struct CgOutput {
  Var out;
  Var hidden;  // h'
  Var collab;  // c'
  Var gate;    // g
};

// Parameters are read from the tape's ParamSet as <prefix>.W1 .. <prefix>.b3.
CgOutput cg_block(Var h, Var z, Var c, std::string_view prefix);

// <prefix>.scale.{W1,b1,W2,b2} and <prefix>.shift.{W1,b1,W2,b2}
Var pg_block(Var h, Var m, std::string_view prefix);

}  // namespace layers

class CNet {
 public:
  CNet() = default;
  CNet(CNetConfig config, ParamSet params);
  CNet(const CNet& other);
  CNet& operator=(const CNet& other);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, zero z_in.
  static CNet init(const CNetConfig& config, std::uint64_t seed);

  const CNetConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  // Records the forward pass on `tape` (which must be bound to params()).
  // x is batch x num_items. Returns batch x num_items raw scores.
  Var forward(Tape& tape, const DenseMatrix& x, std::span<const std::size_t> users, StepList steps,
              const ConditionSignals& cond) const;

  // Gradient-free evaluation.
  DenseMatrix predict(const DenseMatrix& x, std::span<const std::size_t> users, StepList steps,
                      const ConditionSignals& cond) const;

  // Network evaluations so far, counted per user row.
  std::uint64_t evaluations() const { return evaluations_.load(); }
  void reset_evaluations() { evaluations_.store(0); }

  // Batch x d_forward step embeddings (sinusoid part only; z_in is added on tape).
  DenseMatrix sinusoid_embeddings(StepList steps) const;

 private:
  CNetConfig config_;
  ParamSet params_;
  mutable std::atomic<std::uint64_t> evaluations_{0};
};

// Checkpoint: "LDMR", u64 length + config JSON, u32 tensor count, then per
// tensor u32 length + name and an FMX8 block ("FMX8", u32 rows, u32 cols,
// little-endian f64 payload), then a u64 FNV-1a checksum of all payload bytes.
void save_checkpoint(const std::filesystem::path& path, const CNet& net);
CNet load_checkpoint(const std::filesystem::path& path);

}  // namespace ldmrec
