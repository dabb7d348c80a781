#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace neomlp {

enum class AttentionKind { Softmax, Linear };
enum class Activation { Silu, Gelu };

std::string to_string(AttentionKind k);
std::string to_string(Activation a);
AttentionKind parse_attention(const std::string& s);
Activation parse_activation(const std::string& s);

/// Architecture hyperparameters. Defaults are the audio-scale configuration
/// (8 nodes, 182,017 parameters for I = O = 1).
struct ModelConfig {
  int input_dims = 1;
  int hidden_nodes = 6;
  int output_dims = 1;
  int token_dim = 64;
  int layers = 3;
  int heads = 4;
  int ffn_hidden = 256;
  AttentionKind attention = AttentionKind::Linear;
  Activation ffn_activation = Activation::Silu;
  int d_rff = 512;
  double rff_sigma = 20.0;
  bool use_rff = true;
  double input_embedding_variance = 1.0;
  double latent_variance = 1e-3;

  [[nodiscard]] int total_nodes() const { return input_dims + hidden_nodes + output_dims; }
  [[nodiscard]] int head_dim() const { return token_dim / heads; }
  [[nodiscard]] bool degenerate() const { return hidden_nodes == 0 || layers == 0; }
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  /// Backbone scalars plus one signal's (H + O) x D latents.
  [[nodiscard]] long parameter_count() const;
  [[nodiscard]] long backbone_parameter_count() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; `total_nodes` determines H.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace neomlp
