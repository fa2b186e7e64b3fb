#pragma once

// File formats for datasets and artifacts: trajectory / observation /
// ensemble CSVs (lossless %.17g doubles), IDX image files, and CIFAR-10
// binary batches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cbc/density.hpp"
#include "cbc/process.hpp"

namespace cbc {

namespace detail {

/// %.17g prints the shortest form that still round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_for_write(const std::string& path, const std::string& who) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(who + ": cannot open " + path + " for writing");
  return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

/// Reads all data lines of a CSV after validating its header.
inline std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                                      const std::string& expected_header,
                                                      const std::string& who) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(who + ": cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(who + ": " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected_header) {
    throw std::runtime_error(who + ": " + path + " has header \"" + line + "\", expected \"" +
                             expected_header + "\"");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

inline double parse_double(const std::string& text, const std::string& who) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(who + ": \"" + text + "\" is not a number");
  }
}

inline long parse_long(const std::string& text, const std::string& who) {
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(who + ": \"" + text + "\" is not an integer");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trajectory, observation, and ensemble CSVs (1-D grids)

inline void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  if (!std::holds_alternative<Grid1D>(traj.domain)) {
    throw std::invalid_argument("write_trajectory_csv: only 1-D trajectories have positions");
  }
  const auto& grid = std::get<Grid1D>(traj.domain);
  auto out = detail::open_for_write(path, "write_trajectory_csv");
  out << "index,position,value\n";
  for (int i = 0; i < grid.n; ++i) {
    out << i << ',' << detail::format_double(grid.position(i)) << ','
        << detail::format_double(traj.values[static_cast<std::size_t>(i)]) << '\n';
  }
}

inline Trajectory read_trajectory_csv(const std::string& path) {
  const auto rows = detail::read_csv(path, "index,position,value", "read_trajectory_csv");
  if (rows.empty()) throw std::runtime_error("read_trajectory_csv: " + path + " has no rows");
  std::vector<double> positions, values;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 3) {
      throw std::runtime_error("read_trajectory_csv: row " + std::to_string(r + 1) + " has " +
                               std::to_string(rows[r].size()) + " fields, expected 3");
    }
    if (detail::parse_long(rows[r][0], "read_trajectory_csv") != static_cast<long>(r)) {
      throw std::runtime_error("read_trajectory_csv: row " + std::to_string(r + 1) +
                               " is out of order");
    }
    positions.push_back(detail::parse_double(rows[r][1], "read_trajectory_csv"));
    values.push_back(detail::parse_double(rows[r][2], "read_trajectory_csv"));
  }
  const int n = static_cast<int>(values.size());
  const Grid1D grid{n, positions.front(), n > 1 ? positions.back() : positions.front() + 1.0};
  return Trajectory(grid, std::move(values));
}

inline void write_observations_csv(const ObservationSet& obs, const Grid1D& grid,
                                   const std::string& path) {
  if (obs.domain_size != grid.n) {
    throw std::invalid_argument("write_observations_csv: observation domain size " +
                                std::to_string(obs.domain_size) + " does not match grid size " +
                                std::to_string(grid.n));
  }
  auto out = detail::open_for_write(path, "write_observations_csv");
  out << "index,position,value\n";
  for (const auto& e : obs.entries) {
    out << e.index << ',' << detail::format_double(grid.position(e.index)) << ','
        << detail::format_double(e.value) << '\n';
  }
}

inline ObservationSet read_observations_csv(const std::string& path, int domain_size) {
  const auto rows = detail::read_csv(path, "index,position,value", "read_observations_csv");
  ObservationSet obs;
  obs.domain_size = domain_size;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 3) {
      throw std::runtime_error("read_observations_csv: row " + std::to_string(r + 1) + " has " +
                               std::to_string(rows[r].size()) + " fields, expected 3");
    }
    const long index = detail::parse_long(rows[r][0], "read_observations_csv");
    if (index < 0 || index >= domain_size) {
      throw std::runtime_error("read_observations_csv: index " + std::to_string(index) +
                               " out of range for domain size " + std::to_string(domain_size));
    }
    obs.entries.push_back(
        {static_cast<int>(index), detail::parse_double(rows[r][2], "read_observations_csv")});
  }
  for (std::size_t i = 1; i < obs.entries.size(); ++i) {
    if (obs.entries[i].index <= obs.entries[i - 1].index) {
      throw std::runtime_error("read_observations_csv: indices must be strictly increasing");
    }
  }
  return obs;
}

inline void write_ensemble_csv(const EnsembleSamples& ensemble, const std::string& path) {
  auto out = detail::open_for_write(path, "write_ensemble_csv");
  out << "sample,index,value\n";
  for (std::size_t m = 0; m < ensemble.n_samples; ++m) {
    for (std::size_t i = 0; i < ensemble.trajectory_size; ++i) {
      out << m << ',' << i << ',' << detail::format_double(ensemble.at(m, i)) << '\n';
    }
  }
}

inline EnsembleSamples read_ensemble_csv(const std::string& path) {
  const auto rows = detail::read_csv(path, "sample,index,value", "read_ensemble_csv");
  if (rows.empty()) throw std::runtime_error("read_ensemble_csv: " + path + " has no rows");

  std::vector<long> samples, indices;
  EnsembleSamples ensemble;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 3) {
      throw std::runtime_error("read_ensemble_csv: row " + std::to_string(r + 1) + " has " +
                               std::to_string(rows[r].size()) + " fields, expected 3");
    }
    samples.push_back(detail::parse_long(rows[r][0], "read_ensemble_csv"));
    indices.push_back(detail::parse_long(rows[r][1], "read_ensemble_csv"));
    ensemble.values.push_back(detail::parse_double(rows[r][2], "read_ensemble_csv"));
  }

  // Sample 0's run length fixes the trajectory size; every row must then sit
  // at its sample-major grid position.
  std::size_t t = 0;
  while (t < samples.size() && samples[t] == 0) ++t;
  if (t == 0 || samples.size() % t != 0) {
    throw std::runtime_error("read_ensemble_csv: " + path + " is not a full sample grid");
  }
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (samples[r] != static_cast<long>(r / t) || indices[r] != static_cast<long>(r % t)) {
      throw std::runtime_error("read_ensemble_csv: row " + std::to_string(r + 1) +
                               " breaks the (sample,index) grid order");
    }
  }
  ensemble.trajectory_size = t;
  ensemble.n_samples = samples.size() / t;
  return ensemble;
}

// ---------------------------------------------------------------------------
// IDX image files (big-endian headers, one byte per pixel)

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

/// Images on Grid2D domains paired with their integer labels.
struct LabeledImages {
  std::vector<Trajectory> images;
  std::vector<int> labels;
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path,
                                                 const std::string& who) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(who + ": cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline std::uint32_t read_be_u32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                                 const std::string& who) {
  if (offset + 4 > bytes.size()) throw std::runtime_error(who + ": truncated header");
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

inline void write_be_u32(std::ofstream& out, std::uint32_t v) {
  const char buf[4] = {static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
                       static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
  out.write(buf, 4);
}

}  // namespace detail

/// Loads the first `limit` images with their labels; pixels are scaled into
/// [0,1] by 1/255 and placed on a single-channel Grid2D domain.
inline LabeledImages load_idx_images(const std::string& images_path,
                                     const std::string& labels_path, std::size_t limit) {
  const auto image_bytes = detail::read_file_bytes(images_path, "load_idx_images");
  const auto label_bytes = detail::read_file_bytes(labels_path, "load_idx_images");

  if (detail::read_be_u32(image_bytes, 0, "load_idx_images") != idx_images_magic) {
    throw std::runtime_error("load_idx_images: " + images_path + " has the wrong magic");
  }
  const std::uint32_t count = detail::read_be_u32(image_bytes, 4, "load_idx_images");
  const std::uint32_t rows = detail::read_be_u32(image_bytes, 8, "load_idx_images");
  const std::uint32_t cols = detail::read_be_u32(image_bytes, 12, "load_idx_images");
  if (image_bytes.size() != 16 + static_cast<std::size_t>(count) * rows * cols) {
    throw std::runtime_error("load_idx_images: " + images_path + " is truncated");
  }

  if (detail::read_be_u32(label_bytes, 0, "load_idx_images") != idx_labels_magic) {
    throw std::runtime_error("load_idx_images: " + labels_path + " has the wrong magic");
  }
  const std::uint32_t label_count = detail::read_be_u32(label_bytes, 4, "load_idx_images");
  if (label_count != count) {
    throw std::runtime_error("load_idx_images: " + std::to_string(count) + " images but " +
                             std::to_string(label_count) + " labels");
  }
  if (label_bytes.size() != 8 + static_cast<std::size_t>(label_count)) {
    throw std::runtime_error("load_idx_images: " + labels_path + " is truncated");
  }

  LabeledImages out;
  const std::size_t n = std::min<std::size_t>(limit, count);
  const Grid2D domain{1, static_cast<int>(rows), static_cast<int>(cols)};
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> values(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      values[p] = image_bytes[16 + k * pixels + p] / 255.0;
    }
    out.images.emplace_back(domain, std::move(values));
    out.labels.push_back(label_bytes[8 + k]);
  }
  return out;
}

/// Writes single-channel images (values clamped to [0,1], quantized to
/// 1/255 steps) with their labels as a matched IDX file pair.
inline void write_idx_images(const std::vector<Trajectory>& images, const std::vector<int>& labels,
                             const std::string& images_path, const std::string& labels_path) {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("write_idx_images: " + std::to_string(images.size()) +
                                " images but " + std::to_string(labels.size()) + " labels");
  }
  if (images.empty()) throw std::invalid_argument("write_idx_images: no images");
  if (!std::holds_alternative<Grid2D>(images[0].domain)) {
    throw std::invalid_argument("write_idx_images: images must live on Grid2D domains");
  }
  const Grid2D domain = std::get<Grid2D>(images[0].domain);
  if (domain.channels != 1) {
    throw std::invalid_argument("write_idx_images: images must be single-channel");
  }

  auto img = detail::open_for_write(images_path, "write_idx_images");
  detail::write_be_u32(img, idx_images_magic);
  detail::write_be_u32(img, static_cast<std::uint32_t>(images.size()));
  detail::write_be_u32(img, static_cast<std::uint32_t>(domain.height));
  detail::write_be_u32(img, static_cast<std::uint32_t>(domain.width));
  for (const Trajectory& image : images) {
    if (!std::holds_alternative<Grid2D>(image.domain) ||
        std::get<Grid2D>(image.domain).channels != domain.channels ||
        std::get<Grid2D>(image.domain).height != domain.height ||
        std::get<Grid2D>(image.domain).width != domain.width) {
      throw std::invalid_argument("write_idx_images: images must share one domain");
    }
    for (double v : image.values) {
      const double clamped = std::min(1.0, std::max(0.0, v));
      img.put(static_cast<char>(std::lround(clamped * 255.0)));
    }
  }

  auto lab = detail::open_for_write(labels_path, "write_idx_images");
  detail::write_be_u32(lab, idx_labels_magic);
  detail::write_be_u32(lab, static_cast<std::uint32_t>(labels.size()));
  for (int label : labels) lab.put(static_cast<char>(label & 0xff));
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches (3073-byte records: label + channel-planar pixels)

inline constexpr std::size_t cifar_record_size = 3073;

inline LabeledImages load_cifar_batch(const std::string& path, std::size_t limit) {
  const auto bytes = detail::read_file_bytes(path, "load_cifar_batch");
  if (bytes.empty() || bytes.size() % cifar_record_size != 0) {
    throw std::runtime_error("load_cifar_batch: " + path + " size " +
                             std::to_string(bytes.size()) + " is not a multiple of " +
                             std::to_string(cifar_record_size));
  }
  const std::size_t count = bytes.size() / cifar_record_size;
  const std::size_t n = std::min(limit, count);

  LabeledImages out;
  const Grid2D domain{3, 32, 32};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t base = k * cifar_record_size;
    out.labels.push_back(bytes[base]);
    std::vector<double> values(3072);
    // Record layout is already channel-planar, matching the flat c*H*W+site
    // index order.
    for (std::size_t p = 0; p < 3072; ++p) values[p] = bytes[base + 1 + p] / 255.0;
    out.images.emplace_back(domain, std::move(values));
  }
  return out;
}

inline void write_cifar_batch(const std::vector<Trajectory>& images,
                              const std::vector<int>& labels, const std::string& path) {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("write_cifar_batch: " + std::to_string(images.size()) +
                                " images but " + std::to_string(labels.size()) + " labels");
  }
  auto out = detail::open_for_write(path, "write_cifar_batch");
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (!std::holds_alternative<Grid2D>(images[k].domain)) {
      throw std::invalid_argument("write_cifar_batch: images must live on Grid2D domains");
    }
    const Grid2D d = std::get<Grid2D>(images[k].domain);
    if (d.channels != 3 || d.height != 32 || d.width != 32) {
      throw std::invalid_argument("write_cifar_batch: images must be 3x32x32");
    }
    out.put(static_cast<char>(labels[k] & 0xff));
    for (double v : images[k].values) {
      const double clamped = std::min(1.0, std::max(0.0, v));
      out.put(static_cast<char>(std::lround(clamped * 255.0)));
    }
  }
}

}  // namespace cbc
