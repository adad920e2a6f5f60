#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pan/dataset.hpp"
#include "pan/error.hpp"
#include "pan/wire.hpp"

namespace pan {

// Binary dataset layout:
//   "PANEDA01"                         8-byte magic
//   u32 record count
//   u32 sample rate (Hz)
//   u32 samples per window
//   count * { u16 subject_id, u8 level, spw * f32 samples }
//   u32 CRC32 over everything between the magic and this field
// All integers and floats little-endian.

inline constexpr std::string_view kDatasetMagic = "PANEDA01";

inline std::string serialize_dataset(const Dataset& ds) {
  ds.validate();
  if (ds.records.empty()) throw DomainError("write_dataset: no records to write");
  std::string buf(kDatasetMagic);
  wire::append_u32(buf, static_cast<std::uint32_t>(ds.records.size()));
  wire::append_u32(buf, ds.rate);
  wire::append_u32(buf, ds.samples_per_window);
  for (const WindowRecord& r : ds.records) {
    wire::append_u16(buf, r.subject_id);
    wire::append_u8(buf, r.level);
    for (float s : r.samples) wire::append_f32(buf, s);
  }
  wire::append_u32(buf, wire::crc32_of(std::string_view(buf).substr(kDatasetMagic.size())));
  return buf;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  wire::write_file(path, serialize_dataset(ds));
}

inline Dataset parse_dataset(std::string_view image, const std::string& origin) {
  wire::Reader r(image, origin);
  if (r.bytes(kDatasetMagic.size(), "magic") != kDatasetMagic) {
    throw FormatError(origin + ": bad magic, not a dataset file");
  }
  Dataset ds;
  const std::uint32_t count = r.u32("record count");
  ds.rate = r.u32("sample rate");
  ds.samples_per_window = r.u32("samples per window");
  if (ds.rate == 0) r.fail("sample rate is zero");
  if (ds.samples_per_window == 0) r.fail("samples per window is zero");
  ds.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    WindowRecord rec;
    rec.subject_id = r.u16("subject id");
    rec.level = r.u8("level");
    if (rec.level > 4) r.fail("level " + std::to_string(rec.level) + " outside 0..4");
    rec.samples.resize(ds.samples_per_window);
    std::string_view raw = r.bytes(4 * static_cast<std::size_t>(ds.samples_per_window),
                                   "window samples");
    for (std::uint32_t k = 0; k < ds.samples_per_window; ++k) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) {
        bits = (bits << 8) | static_cast<std::uint8_t>(raw[4 * k + b]);
      }
      rec.samples[k] = std::bit_cast<float>(bits);
    }
    ds.records.push_back(std::move(rec));
  }
  const std::size_t payload_end = r.pos();
  const std::uint32_t stored = r.u32("checksum");
  if (r.remaining() != 0) r.fail("trailing garbage after checksum");
  const std::uint32_t actual =
      wire::crc32_of(image.substr(kDatasetMagic.size(), payload_end - kDatasetMagic.size()));
  if (stored != actual) {
    throw FormatError(origin + ": checksum mismatch at byte " + std::to_string(payload_end));
  }
  return ds;
}

inline Dataset read_dataset(const std::string& path) {
  return parse_dataset(wire::read_file(path), path);
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
inline T parse_number(std::string_view field, const std::string& origin, std::size_t lineno,
                      const char* what) {
  T value{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const std::from_chars_result res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw FormatError(origin + " line " + std::to_string(lineno) + ": bad " + what + " '" +
                      std::string(field) + "'");
  }
  return value;
}

}  // namespace detail

/// Text import with header `subject_id,level,s0,s1,...`. The sample rate is
/// not part of the CSV; imported data is tagged with the default 512 Hz.
inline Dataset parse_dataset_csv(std::string_view text, const std::string& origin) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw FormatError(origin + ": empty CSV");

  const std::vector<std::string_view> header = detail::split_csv_line(lines[0]);
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "level") {
    throw FormatError(origin + " line 1: expected header subject_id,level,s0,...");
  }
  const std::size_t spw = header.size() - 2;
  for (std::size_t k = 0; k < spw; ++k) {
    if (header[k + 2] != "s" + std::to_string(k)) {
      throw FormatError(origin + " line 1: sample column " + std::to_string(k + 2) +
                        " named '" + std::string(header[k + 2]) + "', expected 's" +
                        std::to_string(k) + "'");
    }
  }

  Dataset ds;
  ds.samples_per_window = static_cast<std::uint32_t>(spw);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const std::size_t lineno = li + 1;
    const std::vector<std::string_view> fields = detail::split_csv_line(lines[li]);
    if (fields.size() != spw + 2) {
      throw FormatError(origin + " line " + std::to_string(lineno) + ": " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(spw + 2));
    }
    WindowRecord rec;
    rec.subject_id =
        detail::parse_number<std::uint16_t>(fields[0], origin, lineno, "subject id");
    const auto level = detail::parse_number<std::uint16_t>(fields[1], origin, lineno, "level");
    if (level > 4) {
      throw FormatError(origin + " line " + std::to_string(lineno) + ": level " +
                        std::to_string(level) + " outside 0..4");
    }
    rec.level = static_cast<std::uint8_t>(level);
    rec.samples.resize(spw);
    for (std::size_t k = 0; k < spw; ++k) {
      rec.samples[k] = detail::parse_number<float>(fields[k + 2], origin, lineno, "sample");
    }
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.empty()) throw FormatError(origin + ": CSV has a header but no data rows");
  ds.validate();
  return ds;
}

inline Dataset read_dataset_csv(const std::string& path) {
  return parse_dataset_csv(wire::read_file(path), path);
}

/// Reads either format, deciding by content: binary magic wins, otherwise the
/// file must look like the CSV header.
inline Dataset load_dataset(const std::string& path) {
  const std::string image = wire::read_file(path);
  if (image.size() >= kDatasetMagic.size() &&
      std::string_view(image).substr(0, kDatasetMagic.size()) == kDatasetMagic) {
    return parse_dataset(image, path);
  }
  if (std::string_view(image).substr(0, 11) == "subject_id,") {
    return parse_dataset_csv(image, path);
  }
  throw FormatError(path + ": neither a binary dataset (bad magic) nor a CSV header");
}

}  // namespace pan
