#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointdrag/engine.hpp"
#include "pointdrag/generator.hpp"
#include "pointdrag/grid.hpp"

namespace pointdrag {

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PNG ------------------------------------------------------------------------

/// 8-bit RGB encoding of a 3-channel grid with values in [0, 1] (clamped, rounded).
std::vector<std::uint8_t> encode_png(const Grid& image);
void write_png(const std::filesystem::path& path, const Grid& image);

/// Decodes any PNG to a 3 x H x W grid in [0, 1].
Grid decode_png(std::span<const std::uint8_t> bytes);
Grid read_png(const std::filesystem::path& path);

/// 1 x H x W binary mask: a pixel is movable when any of its channels is nonzero.
Grid decode_mask_png(std::span<const std::uint8_t> bytes);
Grid read_mask_png(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// base64 -------------------------------------------------------------------

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// JSON documents -------------------------------------------------------------

using json = nlohmann::json;

json latent_to_json(const LatentStack& w, std::uint64_t generator_seed);
/// Throws validation_error naming the offending field.
LatentStack latent_from_json(const json& doc, const GeneratorSpec& spec);

json point_to_json(const Point2& p);
json drag_spec_to_json(const DragSpec& spec, bool include_mask = true);
/// Points are [x, y] pairs. A mask may be given inline as "mask_png"
/// (base64 PNG) or as "mask" (a PNG path, relative to `base_dir`).
DragSpec drag_spec_from_json(const json& doc, const std::filesystem::path& base_dir = {});

json config_to_json(const EngineConfig& config);
/// Applies the keys present in `doc` on top of `base`; unknown keys are rejected.
EngineConfig config_from_json(const json& doc, EngineConfig base = {});

json step_to_json(const StepReport& step);

/// Everything needed to reproduce a run: initial latent, inputs, config and the step log.
json export_session(const DragSession& session, std::uint64_t generator_seed);

/// Rebuilds a session from an export and replays its step log, checking each
/// replayed step against the recorded one bitwise. Throws io_error on divergence.
std::unique_ptr<DragSession> import_session(const json& doc, std::shared_ptr<const Generator> generator);

// CSV ----------------------------------------------------------------------

void write_steps_csv(std::ostream& out, const std::vector<StepReport>& steps);
void write_blobs_csv(std::ostream& out, const std::vector<BlobParam>& blobs);
/// One row per block pixel: u, v, then every feature channel.
void write_features_csv(std::ostream& out, const Grid& features);

}  // namespace pointdrag
