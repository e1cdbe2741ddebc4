#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "samdetr/model.hpp"
#include "samdetr/scene.hpp"

namespace samdetr {

class ImageFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Binary PGM (P5, maxval 255).
std::string encode_pgm(const GrayImage& image);
GrayImage decode_pgm(const std::string& bytes);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

/// Min-max normalises `values` into 0..255 (constant maps become all zero).
GrayImage normalize_map(const std::vector<double>& values, std::size_t width, std::size_t height);

struct AttentionDump {
  std::vector<std::filesystem::path> head_maps;   // attn_q<i>_h<j>.pgm
  std::vector<std::filesystem::path> query_maps;  // attn_q<i>_mean.pgm
  std::filesystem::path points_file;              // points.txt
  std::size_t point_lines = 0;
};

/// Runs the model on `scene` and writes the final decoder layer's cross-attention
/// maps (one per query and head plus a per-query mean) and, when the model has
/// an aligner, `points.txt` with `query head x y` in normalised image
/// coordinates. The scene image is written as `scene.pgm` (channel mean).
AttentionDump dump_attention(const Model& model, const SceneSample& scene, const std::filesystem::path& out_dir);

/// Query whose final-layer box has the highest IoU with `box`.
std::size_t best_matching_query(const LayerPrediction& pred, const Box& box);

/// Number of the query's salient points that lie inside `box`.
std::size_t points_inside(const SalientPoints& points, std::size_t query, const Box& box);

}  // namespace samdetr
