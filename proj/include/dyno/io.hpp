#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyno/params.hpp"
#include "dyno/samplers.hpp"
#include "dyno/world.hpp"

namespace dyno {

// ---- dataset container ("DYNO") -------------------------------------------
// magic "DYNO" | u32 version | u32 episode count | per episode:
//   u32 obs_len, f32[obs_len] | u32 instr_len, f32[instr_len] | u32 mode |
//   u32 ndim, u32 dims[ndim], f32 latent (row-major) |
//   u32 horizon, u32 action_dim, f32 actions.
// Little-endian, float32 payloads.

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
nlohmann::json dataset_to_json(const Dataset& dataset);

/// Debugging dump of a rollout: schedule, per-step latent norms, stochastic
/// step positions and the first-transition std.
nlohmann::json trajectory_to_json(const DenoiseTrajectory& traj);

// ---- checkpoint container ("DYNP") -----------------------------------------
// magic "DYNP" | u32 version | u32 tag_len, component tag |
// u32 entry count | per entry: u32 name_len, name | u32 dtype (0 = f32) |
//   u32 ndim, u32 dims[ndim] | u64 byte offset into payload |
// u64 payload size | raw f32 payload.
// Round-trips are byte-exact.

struct Checkpoint {
    std::string component;        // "vpm" or "agm"
    ParamSet params;
    nlohmann::json descriptor;    // architecture + run metadata sidecar
};

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& component, const nlohmann::json& descriptor);
Checkpoint load_checkpoint(const std::string& path);

// ---- misc artifacts ---------------------------------------------------------

/// FNV-1a 64-bit content hash, hex-encoded.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::string& path);

/// File content with the run-dependent wallclock fields blanked: the
/// wallclock_s CSV column and the wallclock_s JSON member. All other bytes
/// of a seeded run are reproducible and hash identically across reruns.
std::string wallclock_masked(const std::string& path);

/// Write-then-rename so partial files never appear under the final name.
void write_text_atomic(const std::string& path, const std::string& content);

std::string read_text(const std::string& path);

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns);
    void row(const std::vector<double>& values);
    void close();
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::string buffer_;
    std::size_t columns_;
};

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    int column_index(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

/// Self-contained SVG line chart (one polyline per series).
struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<SvgSeries>& series);

}  // namespace dyno
