#include "pointdrag/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace pointdrag {

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace {

std::uint8_t to_byte(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

struct DecodedPng {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};

DecodedPng decode_rgb(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw io_error(std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  DecodedPng out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.rgb.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw io_error("png: " + msg);
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Grid& image) {
  if (image.channels() != 3) throw shape_error("encode_png: expected a 3-channel image");
  const int w = image.width(), h = image.height();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.at(c, y, x));
    }
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw io_error(std::string("png: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw io_error(std::string("png: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Grid& image) {
  const auto bytes = encode_png(image);
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Grid decode_png(std::span<const std::uint8_t> bytes) {
  const auto d = decode_rgb(bytes);
  Grid g(3, d.height, d.width);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      for (int c = 0; c < 3; ++c) g.at(c, y, x) = d.rgb[(static_cast<std::size_t>(y) * d.width + x) * 3 + c] / 255.0;
    }
  }
  return g;
}

Grid read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

Grid decode_mask_png(std::span<const std::uint8_t> bytes) {
  const auto d = decode_rgb(bytes);
  Grid g(1, d.height, d.width);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const auto* p = &d.rgb[(static_cast<std::size_t>(y) * d.width + x) * 3];
      g.at(0, y, x) = (p[0] | p[1] | p[2]) ? 1.0 : 0.0;
    }
  }
  return g;
}

Grid read_mask_png(const std::filesystem::path& path) { return decode_mask_png(read_file(path)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw io_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// base64
// ---------------------------------------------------------------------------

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    if (c == '\n' || c == '\r' || c == ' ') continue;
    const int v = decode_char(c);
    if (v < 0) throw io_error("base64: invalid character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

template <class T>
T get_field(const json& doc, const std::string& key, const std::string& path) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    if (!doc.contains(key)) throw validation_error(path, "missing");
    throw validation_error(path, "has the wrong type");
  }
}

Point2 point_from_json(const json& v, const std::string& path) {
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    return {v[0].get<double>(), v[1].get<double>()};
  }
  if (v.is_object() && v.contains("x") && v.contains("y") && v["x"].is_number() && v["y"].is_number()) {
    return {v["x"].get<double>(), v["y"].get<double>()};
  }
  throw validation_error(path, "expected a point [x, y]");
}

std::vector<Point2> points_from_json(const json& doc, const std::string& key) {
  if (!doc.contains(key)) throw validation_error(key, "missing");
  const auto& arr = doc[key];
  if (!arr.is_array()) throw validation_error(key, "expected an array of points");
  std::vector<Point2> out;
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(point_from_json(arr[i], key + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<int> blocks_from_json(const json& v, const std::string& path) {
  try {
    if (v.is_number_integer()) return {v.get<int>()};
    if (v.is_string()) return parse_blocks(v.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw validation_error(path, e.what());
  }
  throw validation_error(path, "expected a block index or a string like \"5+6\"");
}

json blocks_json(const std::vector<int>& blocks) {
  if (blocks.size() == 1) return blocks[0];
  return blocks_to_string(blocks);
}

}  // namespace

json latent_to_json(const LatentStack& w, std::uint64_t generator_seed) {
  json layers = json::array();
  for (int j = 1; j <= w.num_layers; ++j) {
    const auto l = w.layer(j);
    layers.push_back(std::vector<double>(l.begin(), l.end()));
  }
  return {{"format", "pointdrag.latent"},
          {"version", 1},
          {"generator_seed", generator_seed},
          {"mode", to_string(w.mode)},
          {"editable_layers", to_string(w.editable)},
          {"layers", layers}};
}

LatentStack latent_from_json(const json& doc, const GeneratorSpec& spec) {
  if (!doc.is_object()) throw validation_error("latent", "expected a JSON object");
  LatentStack w;
  w.num_layers = spec.num_layers;
  w.dim = spec.latent_dim_w;
  try {
    w.mode = latent_mode_from_string(doc.value("mode", std::string("W+")));
  } catch (const std::invalid_argument& e) {
    throw validation_error("mode", e.what());
  }
  try {
    w.editable = parse_layer_range(doc.value("editable_layers", to_string(spec.spatial_layers)));
  } catch (const std::invalid_argument& e) {
    throw validation_error("editable_layers", e.what());
  }
  if (!doc.contains("layers") || !doc["layers"].is_array()) throw validation_error("layers", "missing");
  const auto& layers = doc["layers"];
  if (static_cast<int>(layers.size()) != spec.num_layers) {
    throw validation_error("layers", "expected " + std::to_string(spec.num_layers) + " layers, got " +
                                         std::to_string(layers.size()));
  }
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const std::string path = "layers[" + std::to_string(j) + "]";
    if (!layers[j].is_array() || static_cast<int>(layers[j].size()) != spec.latent_dim_w) {
      throw validation_error(path, "expected " + std::to_string(spec.latent_dim_w) + " numbers");
    }
    for (std::size_t i = 0; i < layers[j].size(); ++i) {
      if (!layers[j][i].is_number()) throw validation_error(path + "[" + std::to_string(i) + "]", "expected a number");
      w.values.push_back(layers[j][i].get<double>());
    }
  }
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw validation_error("latent", e.what());
  }
  return w;
}

json point_to_json(const Point2& p) { return json::array({p.x, p.y}); }

json drag_spec_to_json(const DragSpec& spec, bool include_mask) {
  json handles = json::array(), targets = json::array();
  for (const auto& p : spec.handles) handles.push_back(point_to_json(p));
  for (const auto& p : spec.targets) targets.push_back(point_to_json(p));
  json doc{{"handles", handles}, {"targets", targets}};
  if (include_mask && spec.mask) {
    const Grid& m = *spec.mask;
    Grid rgb(3, m.height(), m.width());
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) rgb.at(c, y, x) = m.at(0, y, x);
      }
    }
    doc["mask_png"] = base64_encode(encode_png(rgb));
  }
  return doc;
}

DragSpec drag_spec_from_json(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw validation_error("spec", "expected a JSON object");
  DragSpec spec;
  spec.handles = points_from_json(doc, "handles");
  spec.targets = points_from_json(doc, "targets");
  try {
    if (doc.contains("mask_png") && !doc["mask_png"].is_null()) {
      if (!doc["mask_png"].is_string()) throw validation_error("mask_png", "expected a base64 string");
      spec.mask = decode_mask_png(base64_decode(doc["mask_png"].get<std::string>()));
    } else if (doc.contains("mask") && !doc["mask"].is_null()) {
      if (!doc["mask"].is_string()) throw validation_error("mask", "expected a PNG path");
      std::filesystem::path p = doc["mask"].get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      spec.mask = read_mask_png(p);
    }
  } catch (const io_error& e) {
    throw validation_error("mask", e.what());
  }
  return spec;
}

json config_to_json(const EngineConfig& c) {
  json doc{{"r1", c.r1},
           {"r2", c.r2},
           {"lambda", c.lambda},
           {"lr", c.lr},
           {"max_steps", c.max_steps},
           {"feature_block", blocks_json(c.feature_blocks)},
           {"tracking", c.tracking_enabled},
           {"latent_mode", to_string(c.latent_mode)},
           {"editable_layers", to_string(c.editable)}};
  doc["stop_d"] = c.stop_d ? json(*c.stop_d) : json(nullptr);
  doc["tracking_block"] = c.tracking_blocks ? blocks_json(*c.tracking_blocks) : json(nullptr);
  return doc;
}

EngineConfig config_from_json(const json& doc, EngineConfig c) {
  if (!doc.is_object()) throw validation_error("config", "expected a JSON object");
  for (const auto& [key, v] : doc.items()) {
    if (key == "r1") {
      c.r1 = get_field<int>(doc, key, key);
    } else if (key == "r2") {
      c.r2 = get_field<int>(doc, key, key);
    } else if (key == "lambda") {
      c.lambda = get_field<double>(doc, key, key);
    } else if (key == "lr") {
      c.lr = get_field<double>(doc, key, key);
    } else if (key == "max_steps") {
      c.max_steps = get_field<int>(doc, key, key);
    } else if (key == "stop_d") {
      if (v.is_null()) c.stop_d.reset();
      else c.stop_d = get_field<double>(doc, key, key);
    } else if (key == "feature_block") {
      c.feature_blocks = blocks_from_json(v, key);
    } else if (key == "tracking_block") {
      if (v.is_null()) c.tracking_blocks.reset();
      else c.tracking_blocks = blocks_from_json(v, key);
    } else if (key == "tracking") {
      c.tracking_enabled = get_field<bool>(doc, key, key);
    } else if (key == "latent_mode") {
      try {
        c.latent_mode = latent_mode_from_string(get_field<std::string>(doc, key, key));
      } catch (const validation_error&) {
        throw;
      } catch (const std::invalid_argument& e) {
        throw validation_error(key, e.what());
      }
    } else if (key == "editable_layers") {
      try {
        c.editable = parse_layer_range(get_field<std::string>(doc, key, key));
      } catch (const validation_error&) {
        throw;
      } catch (const std::invalid_argument& e) {
        throw validation_error(key, e.what());
      }
    } else {
      throw validation_error(key, "unknown config key");
    }
  }
  return c;
}

json step_to_json(const StepReport& s) {
  json handles = json::array();
  for (const auto& p : s.handles) handles.push_back(point_to_json(p));
  return {{"step_index", s.step_index},
          {"loss", s.loss},
          {"handles", handles},
          {"max_distance", s.max_distance},
          {"latent_snapshot_id", s.latent_snapshot_id}};
}

json export_session(const DragSession& session, std::uint64_t generator_seed) {
  json steps = json::array();
  for (const auto& s : session.step_log()) steps.push_back(step_to_json(s));
  return {{"format", "pointdrag.session"},
          {"version", 1},
          {"generator_seed", generator_seed},
          {"initial_latent", latent_to_json(session.initial_latent(), generator_seed)},
          {"spec", drag_spec_to_json(session.spec())},
          {"config", config_to_json(session.config())},
          {"steps", steps},
          {"latent", latent_to_json(session.latent(), generator_seed)}};
}

std::unique_ptr<DragSession> import_session(const json& doc, std::shared_ptr<const Generator> generator) {
  if (!doc.is_object() || doc.value("format", std::string()) != "pointdrag.session") {
    throw io_error("import: not a session document");
  }
  const auto& gs = generator->spec();
  if (doc.contains("generator_seed") && doc["generator_seed"].get<std::uint64_t>() != gs.seed) {
    throw io_error("import: session was recorded with generator seed " + doc["generator_seed"].dump());
  }
  auto w = latent_from_json(doc.at("initial_latent"), gs);
  auto spec = drag_spec_from_json(doc.at("spec"));
  auto config = config_from_json(doc.at("config"));
  auto session = std::make_unique<DragSession>(std::move(generator), std::move(w), std::move(spec), std::move(config));
  const auto& steps = doc.value("steps", json::array());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto replayed = step_to_json(session->step());
    if (replayed != steps[i]) {
      throw io_error("import: replay diverged at step " + std::to_string(i + 1));
    }
  }
  return session;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void write_steps_csv(std::ostream& out, const std::vector<StepReport>& steps) {
  const std::size_t n = steps.empty() ? 0 : steps.front().handles.size();
  out << "step,loss,max_distance";
  for (std::size_t i = 0; i < n; ++i) out << ",h" << i << "_x,h" << i << "_y";
  out << '\n' << std::setprecision(17);
  for (const auto& s : steps) {
    out << s.step_index << ',' << s.loss << ',' << s.max_distance;
    for (const auto& p : s.handles) out << ',' << p.x << ',' << p.y;
    out << '\n';
  }
}

void write_blobs_csv(std::ostream& out, const std::vector<BlobParam>& blobs) {
  out << "blob,cx,cy,radius,r,g,b\n" << std::setprecision(17);
  for (std::size_t k = 0; k < blobs.size(); ++k) {
    const auto& b = blobs[k];
    out << k << ',' << b.center.x << ',' << b.center.y << ',' << b.radius << ',' << b.color[0] << ',' << b.color[1]
        << ',' << b.color[2] << '\n';
  }
}

void write_features_csv(std::ostream& out, const Grid& f) {
  out << "u,v";
  for (int c = 0; c < f.channels(); ++c) out << ",c" << c;
  out << '\n' << std::setprecision(17);
  for (int v = 0; v < f.height(); ++v) {
    for (int u = 0; u < f.width(); ++u) {
      out << u << ',' << v;
      for (int c = 0; c < f.channels(); ++c) out << ',' << f.at(c, v, u);
      out << '\n';
    }
  }
}

}  // namespace pointdrag
