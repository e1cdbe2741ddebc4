#include "samdetr/visualize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace samdetr {

std::string encode_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height || image.width == 0 || image.height == 0) {
    throw ImageFormatError("pgm: pixel count does not match " + std::to_string(image.width) + "x" +
                           std::to_string(image.height));
  }
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

GrayImage decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (++digits > 9) throw ImageFormatError(std::string("pgm: ") + what + " too large");
    }
    if (digits == 0) throw ImageFormatError(std::string("pgm: missing ") + what);
    return v;
  };
  if (bytes.compare(0, 2, "P5") != 0) throw ImageFormatError("pgm: expected P5 magic");
  pos = 2;
  GrayImage img;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval != 255) throw ImageFormatError("pgm: expected maxval 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ImageFormatError("pgm: missing separator before raster");
  }
  ++pos;
  const std::size_t n = img.width * img.height;
  if (n == 0) throw ImageFormatError("pgm: empty image");
  if (bytes.size() - pos != n) {
    throw ImageFormatError("pgm: raster has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                           std::to_string(n));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  const std::string bytes = encode_pgm(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageFormatError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageFormatError("cannot open " + path.string());
  return decode_pgm(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
}

GrayImage normalize_map(const std::vector<double>& values, std::size_t width, std::size_t height) {
  if (values.size() != width * height) throw ImageFormatError("normalize_map: size mismatch");
  GrayImage img{width, height, std::vector<std::uint8_t>(values.size(), 0)};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return img;
  for (std::size_t i = 0; i < values.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / range));
  }
  return img;
}

AttentionDump dump_attention(const Model& model, const SceneSample& scene, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const DetectionOutput out = model.forward(scene.image);
  const LayerPrediction& last = out.final_layer();
  const std::size_t m = last.attention.dim(0), n = last.attention.dim(1), hw = last.attention.dim(2);
  const std::size_t side = model.config().feature_size();
  if (side * side != hw) throw ContractError("dump_attention: attention maps are not square");
  const auto att = last.attention.data();
  AttentionDump dump;

  const std::size_t s = scene.image.dim(1);
  std::vector<double> gray(s * s, 0.0);
  const auto px = scene.image.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < s * s; ++i) gray[i] += px[c * s * s + i] / 3.0;
  }
  GrayImage scene_img{s, s, std::vector<std::uint8_t>(s * s)};
  for (std::size_t i = 0; i < s * s; ++i) scene_img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * gray[i]));
  write_pgm(scene_img, out_dir / "scene.pgm");

  for (std::size_t q = 0; q < n; ++q) {
    std::vector<double> mean(hw, 0.0);
    for (std::size_t h = 0; h < m; ++h) {
      const double* map = att.data() + (h * n + q) * hw;
      std::vector<double> values(map, map + hw);
      for (std::size_t i = 0; i < hw; ++i) mean[i] += values[i] / static_cast<double>(m);
      auto path = out_dir / ("attn_q" + std::to_string(q) + "_h" + std::to_string(h) + ".pgm");
      write_pgm(normalize_map(values, side, side), path);
      dump.head_maps.push_back(path);
    }
    auto path = out_dir / ("attn_q" + std::to_string(q) + "_mean.pgm");
    write_pgm(normalize_map(mean, side, side), path);
    dump.query_maps.push_back(path);
  }

  dump.points_file = out_dir / "points.txt";
  std::ofstream f(dump.points_file, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageFormatError("cannot open " + dump.points_file.string() + " for writing");
  if (last.points) {
    const auto pts = last.points->image.data();
    const std::size_t per = last.points->per_query();
    char line[96];
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t h = 0; h < per; ++h) {
        std::snprintf(line, sizeof line, "%zu %zu %.6f %.6f\n", q, h, pts[(q * per + h) * 2], pts[(q * per + h) * 2 + 1]);
        f << line;
        ++dump.point_lines;
      }
    }
  }
  return dump;
}

std::size_t best_matching_query(const LayerPrediction& pred, const Box& box) {
  const auto boxes = pred.box_values();
  std::size_t best = 0;
  double best_iou = -1.0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const double v = iou(boxes[i], box);
    if (v > best_iou) {
      best_iou = v;
      best = i;
    }
  }
  return best;
}

std::size_t points_inside(const SalientPoints& points, std::size_t query, const Box& box) {
  const Corners c = to_corners(box);
  const auto pts = points.image.data();
  const std::size_t per = points.per_query();
  std::size_t count = 0;
  for (std::size_t h = 0; h < per; ++h) {
    const double x = pts[(query * per + h) * 2], y = pts[(query * per + h) * 2 + 1];
    count += x >= c.x1 && x <= c.x2 && y >= c.y1 && y <= c.y2;
  }
  return count;
}

}  // namespace samdetr
