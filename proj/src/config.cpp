#include "neomlp/config.hpp"

#include "neomlp/error.hpp"

namespace neomlp {

std::string to_string(AttentionKind k) { return k == AttentionKind::Softmax ? "softmax" : "linear"; }
std::string to_string(Activation a) { return a == Activation::Silu ? "silu" : "gelu"; }

AttentionKind parse_attention(const std::string& s) {
  if (s == "softmax") return AttentionKind::Softmax;
  if (s == "linear") return AttentionKind::Linear;
  throw ConfigError("unknown attention variant: " + s);
}

Activation parse_activation(const std::string& s) {
  if (s == "silu") return Activation::Silu;
  if (s == "gelu") return Activation::Gelu;
  throw ConfigError("unknown ffn activation: " + s);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (input_dims < 1) fail("input_dims must be >= 1");
  if (output_dims < 1) fail("output_dims must be >= 1");
  if (hidden_nodes < 0) fail("total_nodes must be >= input_dims + output_dims");
  if (token_dim < 1) fail("token_dim must be >= 1");
  if (heads < 1 || token_dim % heads != 0) fail("token_dim must be divisible by heads");
  if (layers < 0) fail("layers must be >= 0");
  if (ffn_hidden < 1) fail("ffn_hidden must be >= 1");
  if (d_rff < 2 || d_rff % 2 != 0) fail("d_rff must be a positive even integer");
  if (!(rff_sigma >= 0.0)) fail("rff_sigma must be >= 0");
  if (!(input_embedding_variance >= 0.0) || !(latent_variance >= 0.0)) fail("variances must be >= 0");
}

long ModelConfig::backbone_parameter_count() const {
  const long D = token_dim;
  const long F = ffn_hidden;
  long n = 0;
  if (!use_rff) n += 2L * d_rff;           // scalar -> d_rff lift
  n += static_cast<long>(d_rff) * D + D;   // projection
  n += static_cast<long>(input_dims) * D;  // input embeddings
  const long per_layer = 3 * D * D + (D * D + D) + (D * F + F) + (F * D + D);
  n += per_layer * layers;
  n += D + 1;  // readout
  return n;
}

long ModelConfig::parameter_count() const {
  return backbone_parameter_count() + static_cast<long>(hidden_nodes + output_dims) * token_dim;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_dims", c.input_dims},
                     {"output_dims", c.output_dims},
                     {"total_nodes", c.total_nodes()},
                     {"token_dim", c.token_dim},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"ffn_hidden", c.ffn_hidden},
                     {"attention", to_string(c.attention)},
                     {"ffn_activation", to_string(c.ffn_activation)},
                     {"d_rff", c.d_rff},
                     {"rff_sigma", c.rff_sigma},
                     {"use_rff", c.use_rff},
                     {"input_embedding_variance", c.input_embedding_variance},
                     {"latent_variance", c.latent_variance}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_dims = j.value("input_dims", c.input_dims);
  c.output_dims = j.value("output_dims", c.output_dims);
  const int total = j.value("total_nodes", c.total_nodes());
  c.hidden_nodes = total - c.input_dims - c.output_dims;
  c.token_dim = j.value("token_dim", c.token_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  if (j.contains("attention")) c.attention = parse_attention(j.at("attention").get<std::string>());
  if (j.contains("ffn_activation")) c.ffn_activation = parse_activation(j.at("ffn_activation").get<std::string>());
  c.d_rff = j.value("d_rff", c.d_rff);
  c.rff_sigma = j.value("rff_sigma", c.rff_sigma);
  c.use_rff = j.value("use_rff", c.use_rff);
  c.input_embedding_variance = j.value("input_embedding_variance", c.input_embedding_variance);
  c.latent_variance = j.value("latent_variance", c.latent_variance);
}

}  // namespace neomlp
