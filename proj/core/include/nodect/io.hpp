#pragma once

#include <string>

#include "nodect/geometry.hpp"
#include "nodect/volume.hpp"

namespace nodect {

/// Volume file: 64-byte little-endian header
///   "CTV1", u32 dims, u32 nx, u32 ny, u32 nz, f32 voxel_size,
///   f32 origin x, y, z, zero padding
/// followed by nx*ny*nz f32 values (x fastest). A JSON sidecar at
/// `path + ".json"` repeats the metadata at full precision; `extra` (a JSON
/// object text, may be empty) is merged into it.
void write_volume(const std::string& path, const Volume& v, const std::string& extra = {});

/// Sinogram file: 64-byte header
///   "CTS1", u32 type (0 fan, 1 cone), u32 n_angles, u32 rows, u32 cols,
///   f32 pixel_size, f32 source_distance, f32 detector_distance,
///   f32 start_deg, f32 end_deg, f32 trajectory_height, zero padding
/// followed by f32 values in [angle][row][col] order, plus a JSON sidecar.
void write_sinogram(const std::string& path, const Sinogram& s, const std::string& extra = {});

/// Readers take metadata from the sidecar when present (exact doubles) and
/// fall back to the header otherwise. Malformed files raise DataError.
Volume read_volume(const std::string& path);
Sinogram read_sinogram(const std::string& path);

/// 8-bit binary PGM of the center slice orthogonal to `axis` (2D volumes:
/// axis 2 only), gray window [lo, hi].
void write_pgm_slice(const std::string& path, const Volume& v, int axis, double lo = 0.0, double hi = 0.06);

}  // namespace nodect
