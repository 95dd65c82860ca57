#pragma once

// DPC1 dataset container.
//
//   "DPC1"                      4 bytes
//   u32 version = 1
//   u32 header length, UTF-8 JSON header
//   payload: per sample
//     u32 scene id
//     u8  view count
//     per view: u16 camera index, H*W f32 depth (meters, row-major)
//     3J f32 world-frame pose
//   u32 CRC32 of the payload
//
// All integers and floats are little-endian. The header also lists one CRC32
// per sample record so that a corrupted payload can be traced to a sample.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthpose/binary_io.hpp"
#include "depthpose/core.hpp"

namespace depthpose {

inline constexpr char kDatasetMagic[4] = {'D', 'P', 'C', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline nlohmann::json skeleton_to_json(const Skeleton &s) {
  return {{"name", s.name}, {"joints", s.joints}, {"parents", s.parents}};
}

inline Skeleton skeleton_from_json(const nlohmann::json &j) {
  Skeleton s{j.at("name").get<std::string>(), j.at("joints").get<std::vector<std::string>>(),
             j.at("parents").get<std::vector<int>>()};
  s.validate();
  return s;
}

inline nlohmann::json camera_to_json(const Camera &c) {
  const auto &k = c.intrinsics;
  return {{"id", c.id},
          {"extrinsics", c.extrinsics()},
          {"intrinsics", {k.fx, k.fy, k.cx, k.cy}}};
}

inline Camera camera_from_json(const nlohmann::json &j) {
  const auto e = j.at("extrinsics").get<std::array<double, 12>>();
  const auto k = j.at("intrinsics").get<std::array<double, 4>>();
  Camera cam = Camera::from_extrinsics(j.at("id").get<std::string>(), e, {k[0], k[1], k[2], k[3]});
  cam.validate();
  return cam;
}

inline void write_sample(ByteWriter &w, const Sample &s) {
  w.put<std::uint32_t>(s.scene);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.views.size()));
  for (const auto &v : s.views) {
    w.put<std::uint16_t>(v.camera);
    w.put_array(std::span<const float>(v.depth));
  }
  std::vector<float> pose;
  pose.reserve(3 * s.pose.joints.size());
  for (const auto &p : s.pose.joints) {
    pose.push_back(static_cast<float>(p.x));
    pose.push_back(static_cast<float>(p.y));
    pose.push_back(static_cast<float>(p.z));
  }
  w.put_array(std::span<const float>(pose));
}

} // namespace detail

/// Serialises `ds` to DPC1 bytes. Pose coordinates are stored as f32.
inline std::vector<std::uint8_t> encode_dataset(const Dataset &ds) {
  ds.validate();
  for (const auto &s : ds.samples)
    detail::require(s.views.size() <= 255, "DPC1 stores at most 255 views per sample");

  detail::ByteWriter payload;
  std::vector<std::uint32_t> sample_crc;
  sample_crc.reserve(ds.samples.size());
  for (const auto &s : ds.samples) {
    const std::size_t begin = payload.size();
    detail::write_sample(payload, s);
    sample_crc.push_back(detail::crc32_of(
        std::span<const std::uint8_t>(payload.bytes()).subspan(begin, payload.size() - begin)));
  }

  nlohmann::json header;
  header["skeleton"] = detail::skeleton_to_json(*ds.skeleton);
  header["cameras"] = nlohmann::json::array();
  for (const auto &c : ds.cameras)
    header["cameras"].push_back(detail::camera_to_json(c));
  header["sample_count"] = ds.samples.size();
  header["frame_height"] = ds.frame_height;
  header["frame_width"] = ds.frame_width;
  std::vector<std::string> splits;
  splits.reserve(ds.samples.size());
  for (const auto &s : ds.samples)
    splits.emplace_back(to_string(s.split));
  header["split"] = splits;
  header["sample_crc32"] = sample_crc;
  header["payload_bytes"] = payload.size();
  const std::string header_text = header.dump();

  detail::ByteWriter out;
  out.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t *>(kDatasetMagic), 4));
  out.put<std::uint32_t>(kDatasetVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(header_text.size()));
  out.put_string(header_text);
  out.put_bytes(payload.bytes());
  out.put<std::uint32_t>(detail::crc32_of(payload.bytes()));
  return std::move(out.bytes());
}

inline Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const std::string magic = r.get_string(4, "magic");
  if (magic != std::string(kDatasetMagic, 4))
    throw FormatError(FormatErrorKind::BadMagic, "expected DPC1");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kDatasetVersion)
    throw FormatError(FormatErrorKind::VersionMismatch,
                      "DPC1 version " + std::to_string(version) + ", expected " +
                          std::to_string(kDatasetVersion));
  const auto header_len = r.get<std::uint32_t>("header length");
  const std::string header_text = r.get_string(header_len, "header");

  Dataset ds;
  std::size_t count = 0;
  std::vector<std::string> splits;
  std::vector<std::uint32_t> sample_crc;
  std::size_t payload_bytes = 0;
  try {
    const auto header = nlohmann::json::parse(header_text);
    ds.skeleton = std::make_shared<const Skeleton>(detail::skeleton_from_json(header.at("skeleton")));
    for (const auto &c : header.at("cameras"))
      ds.cameras.push_back(detail::camera_from_json(c));
    count = header.at("sample_count").get<std::size_t>();
    ds.frame_height = header.at("frame_height").get<int>();
    ds.frame_width = header.at("frame_width").get<int>();
    splits = header.at("split").get<std::vector<std::string>>();
    sample_crc = header.at("sample_crc32").get<std::vector<std::uint32_t>>();
    payload_bytes = header.at("payload_bytes").get<std::size_t>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(FormatErrorKind::BadHeader, e.what());
  } catch (const ValidationError &e) {
    throw FormatError(FormatErrorKind::BadHeader, e.what());
  }
  if (splits.size() != count || sample_crc.size() != count || ds.frame_height < 0 ||
      ds.frame_width < 0)
    throw FormatError(FormatErrorKind::BadHeader, "inconsistent sample metadata");

  const std::size_t pixels =
      static_cast<std::size_t>(ds.frame_height) * static_cast<std::size_t>(ds.frame_width);
  const std::size_t joints = ds.skeleton->joint_count();
  const std::size_t payload_begin = r.position();
  if (bytes.size() < payload_begin + payload_bytes + 4)
    throw FormatError(FormatErrorKind::Truncated, "file holds " + std::to_string(bytes.size()) + " bytes, expected " +
                                                      std::to_string(payload_begin + payload_bytes + 4));
  if (bytes.size() > payload_begin + payload_bytes + 4)
    throw FormatError(FormatErrorKind::BadHeader, "trailing bytes after checksum");
  const std::size_t payload_end = payload_begin + payload_bytes;
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + payload_end, 4);
  const bool crc_ok = detail::crc32_of(bytes.subspan(payload_begin, payload_end - payload_begin)) == stored;

  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t begin = r.position();
    try {
      Sample s;
      s.scene = r.get<std::uint32_t>("scene id");
      s.split = parse_split(splits[i]);
      const auto views = r.get<std::uint8_t>("view count");
      for (std::uint8_t v = 0; v < views; ++v) {
        DepthFrame f;
        f.camera = r.get<std::uint16_t>("camera index");
        f.height = ds.frame_height;
        f.width = ds.frame_width;
        f.depth.resize(pixels);
        r.get_array(std::span<float>(f.depth), "depth");
        s.views.push_back(std::move(f));
      }
      std::vector<float> pose(3 * joints);
      r.get_array(std::span<float>(pose), "pose");
      if (r.position() > payload_end)
        throw FormatError(FormatErrorKind::Truncated, "sample " + std::to_string(i) + " overruns the payload");
      std::vector<Vec3> pts(joints);
      for (std::size_t j = 0; j < joints; ++j)
        pts[j] = {pose[3 * j], pose[3 * j + 1], pose[3 * j + 2]};
      s.pose.skeleton = ds.skeleton;
      s.pose.joints = std::move(pts);
      ds.samples.push_back(std::move(s));
    } catch (const FormatError &) {
      if (!crc_ok) // a corrupted record can derail parsing; report where it happened
        throw FormatError(FormatErrorKind::Checksum, "payload CRC mismatch in sample " + std::to_string(i), i);
      throw;
    }
    if (!crc_ok && detail::crc32_of(r.span(begin, r.position())) != sample_crc[i])
      throw FormatError(FormatErrorKind::Checksum, "payload CRC mismatch in sample " + std::to_string(i), i);
  }
  if (!crc_ok)
    throw FormatError(FormatErrorKind::Checksum, "payload CRC mismatch");
  if (r.position() != payload_end)
    throw FormatError(FormatErrorKind::BadHeader, "payload size does not match the header");
  try {
    ds.validate();
  } catch (const ValidationError &e) {
    throw FormatError(FormatErrorKind::BadHeader, e.what());
  }
  return ds;
}

inline void write_dataset(const Dataset &ds, const std::string &path) {
  detail::write_file(path, encode_dataset(ds));
}

inline Dataset read_dataset(const std::string &path) {
  return decode_dataset(detail::read_file(path));
}

} // namespace depthpose
