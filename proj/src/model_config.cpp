#include "last/model_config.hpp"

#include <stdexcept>

namespace last {

ModelConfig ModelConfig::paper_default() { return ModelConfig{}; }

ModelConfig ModelConfig::desk_reduced() {
  ModelConfig c;
  c.image_size = 64;
  c.encoder_channels = {8, 16, 32};
  c.feature_grid = 4;
  c.token_dim = 64;
  c.blocks = 2;
  c.heads = 4;
  return c;
}

int ModelConfig::conv_output_size() const {
  return strided_size(strided_size(strided_size(image_size)));
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid model config: ") + what);
  };
  require(clip_length > 0, "clip_length must be positive");
  require(image_size > 0, "image_size must be positive");
  for (int c : encoder_channels) require(c > 0, "encoder channels must be positive");
  require(feature_grid > 0, "feature_grid must be positive");
  require(token_dim > 0, "token_dim must be positive");
  require(blocks >= 0, "blocks must be non-negative");
  require(heads > 0, "heads must be positive");
  require(token_dim % heads == 0, "token_dim must be divisible by heads");
  require(mlp_ratio > 0, "mlp_ratio must be positive");
  require(n_classes == 2, "n_classes must be 2");
  require(feature_grid <= conv_output_size(), "feature_grid exceeds encoder output size");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const {
  return {
      {"model.clip_length", std::to_string(clip_length)},
      {"model.image_size", std::to_string(image_size)},
      {"model.encoder_channels",
       std::to_string(encoder_channels[0]) + "," + std::to_string(encoder_channels[1]) + "," +
           std::to_string(encoder_channels[2])},
      {"model.feature_grid", std::to_string(feature_grid)},
      {"model.token_dim", std::to_string(token_dim)},
      {"model.blocks", std::to_string(blocks)},
      {"model.heads", std::to_string(heads)},
      {"model.mlp_ratio", std::to_string(mlp_ratio)},
      {"model.n_classes", std::to_string(n_classes)},
  };
}

ModelConfig ModelConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& kv) {
  ModelConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "model.clip_length") c.clip_length = std::stoi(value);
    else if (key == "model.image_size") c.image_size = std::stoi(value);
    else if (key == "model.encoder_channels") {
      std::size_t a = value.find(','), b = value.find(',', a + 1);
      if (a == std::string::npos || b == std::string::npos)
        throw std::invalid_argument("model.encoder_channels needs three comma-separated values");
      c.encoder_channels = {std::stoi(value.substr(0, a)), std::stoi(value.substr(a + 1, b - a - 1)),
                            std::stoi(value.substr(b + 1))};
    } else if (key == "model.feature_grid") c.feature_grid = std::stoi(value);
    else if (key == "model.token_dim") c.token_dim = std::stoi(value);
    else if (key == "model.blocks") c.blocks = std::stoi(value);
    else if (key == "model.heads") c.heads = std::stoi(value);
    else if (key == "model.mlp_ratio") c.mlp_ratio = std::stoi(value);
    else if (key == "model.n_classes") c.n_classes = std::stoi(value);
  }
  return c;
}

}  // namespace last
