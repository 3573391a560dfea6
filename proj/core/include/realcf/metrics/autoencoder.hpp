#pragma once

#include <cstdint>
#include <vector>

#include "realcf/diff/layers.hpp"
#include "realcf/diff/tensor.hpp"
#include "realcf/util/json.hpp"

namespace realcf::metrics {

using diff::Tensor;

struct AutoencoderSpec {
  std::vector<std::size_t> hidden{64, 32};  // mirrored in the decoder
  std::size_t latent_dim = 15;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;

  Json to_json() const;
  static AutoencoderSpec from_json(const Json& json);
};

/// Plain (unconditioned) autoencoder over encoded rows with a sigmoid output,
/// trained on squared reconstruction error.
class Autoencoder {
 public:
  Autoencoder() = default;

  /// Throws ConfigError when fewer than 10 rows are given.
  static Autoencoder fit(const Tensor& rows, const AutoencoderSpec& spec, std::uint64_t seed);

  Tensor reconstruct(const Tensor& rows) const;
  /// ||x - AE(x)||^2 per row.
  std::vector<double> errors(const Tensor& rows) const;

  std::size_t width() const { return width_; }
  const diff::ParameterSet& parameters() const { return params_; }

  Json to_json() const;
  static Autoencoder from_json(const Json& json);

 private:
  AutoencoderSpec spec_;
  std::size_t width_ = 0;
  diff::ParameterSet params_;
};

}  // namespace realcf::metrics
