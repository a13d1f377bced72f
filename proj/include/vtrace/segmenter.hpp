#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <string>

#include "vtrace/error.hpp"
#include "vtrace/rvol_io.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

/// Local segmentation model: maps a (normalized) image subvolume to a
/// probability map on the same grid. Implementations must be deterministic in
/// their input and safe to call concurrently.
class SegmenterBackend {
 public:
  virtual ~SegmenterBackend() = default;
  virtual Volume3D predict(const Volume3D& sub_image) const = 0;
  virtual std::string name() const = 0;
};

/// Runs `backend` and enforces the output contract. Backend errors surface as
/// `segmentation_failure`; a malformed reply is a `contract_violation`.
inline Volume3D segment(const SegmenterBackend& backend, const Volume3D& sub_image) {
  Volume3D out;
  try {
    out = backend.predict(sub_image);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::segmentation_failure) throw;
    throw Error(ErrorCode::segmentation_failure, "segmentation failure: " + std::string(e.what()));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::segmentation_failure, "segmentation failure: " + std::string(e.what()));
  }
  if (!(out.grid() == sub_image.grid()))
    throw Error(ErrorCode::contract_violation, backend.name() + " returned a map on a different grid");
  if (out.kind() == VolumeKind::binary) out.set_kind(VolumeKind::probability);
  if (out.kind() != VolumeKind::probability)
    throw Error(ErrorCode::contract_violation, backend.name() + " returned a non-probability map");
  try {
    out.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::contract_violation, backend.name() + ": " + e.what());
  }
  return out;
}

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t n = 0; n < bytes; ++n) {
    h ^= p[n];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t hash_volume(const Volume3D& v) {
  std::uint64_t h = fnv1a(v.data().data(), v.size() * sizeof(float));
  const Grid& g = v.grid();
  h = fnv1a(g.dims.data(), sizeof(g.dims), h);
  const auto sp = to_array(g.spacing);
  const auto og = to_array(g.origin);
  h = fnv1a(sp.data(), sizeof(sp), h);
  return fnv1a(og.data(), sizeof(og), h);
}

}  // namespace detail

/// Answers each request with the ground-truth mask resampled (labels mode)
/// onto the request grid; zero outside the mask's extent.
class GroundTruthOracle final : public SegmenterBackend {
 public:
  explicit GroundTruthOracle(Volume3D gt_mask) : gt_(std::move(gt_mask)) {}

  Volume3D predict(const Volume3D& sub_image) const override {
    Volume3D out = resample(gt_, sub_image.grid(), Interpolation::labels, 0.0f);
    out.set_kind(VolumeKind::probability);
    return out;
  }

  std::string name() const override { return "oracle-gt"; }

 private:
  Volume3D gt_;
};

/// Thresholds raw intensities (> cut) and flips each voxel with probability
/// `flip_prob`. The flip stream is seeded from `rng_seed` and the request
/// content, so identical requests get identical answers.
class ThresholdOracle final : public SegmenterBackend {
 public:
  ThresholdOracle(double cut, double flip_prob, std::uint64_t rng_seed)
      : cut_(cut), flip_prob_(flip_prob), seed_(rng_seed) {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
      throw Error(ErrorCode::invalid_argument, "flip_prob must be in [0,1]");
  }

  Volume3D predict(const Volume3D& sub_image) const override {
    Volume3D out(sub_image.grid(), VolumeKind::probability);
    std::mt19937_64 rng(seed_ ^ detail::hash_volume(sub_image));
    std::bernoulli_distribution flip(flip_prob_);
    for (std::size_t n = 0; n < sub_image.size(); ++n) {
      bool fg = sub_image[n] > cut_;
      if (flip_prob_ > 0.0 && flip(rng)) fg = !fg;
      out[n] = fg ? 1.0f : 0.0f;
    }
    return out;
  }

  std::string name() const override { return "oracle-threshold"; }

 private:
  double cut_;
  double flip_prob_;
  std::uint64_t seed_;
};

/// Delegates to an external program. The request is written as an RVOL pair
/// and `{input}` / `{output}` in the command template are replaced by the
/// request and reply header paths. Calls are serialized.
class ExternalBackend final : public SegmenterBackend {
 public:
  ExternalBackend(std::string command_template, std::filesystem::path workdir)
      : template_(std::move(command_template)), workdir_(std::move(workdir)) {
    if (template_.find("{input}") == std::string::npos || template_.find("{output}") == std::string::npos)
      throw Error(ErrorCode::invalid_argument, "command template needs {input} and {output}");
    std::filesystem::create_directories(workdir_);
  }

  Volume3D predict(const Volume3D& sub_image) const override {
    std::lock_guard lock(mutex_);
    const auto id = counter_++;
    const auto request = workdir_ / ("request_" + std::to_string(id) + ".rvol.json");
    const auto reply = workdir_ / ("reply_" + std::to_string(id) + ".rvol.json");
    save_volume(sub_image, request);
    std::error_code ec;
    std::filesystem::remove(reply, ec);

    std::string cmd = template_;
    replace_all(cmd, "{input}", quoted(request.string()));
    replace_all(cmd, "{output}", quoted(reply.string()));
    const int status = std::system(cmd.c_str());
    cleanup(request);
    if (status != 0) {
      cleanup(reply);
      throw Error(ErrorCode::segmentation_failure,
                  "segmentation failure: external command exited with status " + std::to_string(status));
    }
    Volume3D out;
    try {
      out = load_volume(reply);
    } catch (const Error& e) {
      cleanup(reply);
      throw Error(ErrorCode::segmentation_failure, std::string("segmentation failure: ") + e.what());
    }
    cleanup(reply);
    if (!(out.grid() == sub_image.grid()))
      throw Error(ErrorCode::segmentation_failure, "segmentation failure: reply grid differs from request");
    out.set_kind(VolumeKind::probability);
    try {
      out.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::segmentation_failure, std::string("segmentation failure: ") + e.what());
    }
    return out;
  }

  std::string name() const override { return "external"; }

 private:
  static void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
      s.replace(pos, from.size(), to);
  }

  static std::string quoted(const std::string& s) {
    std::string q = "'";
    for (char c : s) {
      if (c == '\'') {
        q += "'\\''";
      } else {
        q += c;
      }
    }
    return q + "'";
  }

  static void cleanup(const std::filesystem::path& header) {
    std::error_code ec;
    std::filesystem::remove(header, ec);
    std::filesystem::remove(detail::rvol_raw_path(header), ec);
  }

  std::string template_;
  std::filesystem::path workdir_;
  mutable std::mutex mutex_;
  mutable std::uint64_t counter_ = 0;
};

inline std::unique_ptr<SegmenterBackend> oracle_gtcrop(Volume3D gt_mask) {
  return std::make_unique<GroundTruthOracle>(std::move(gt_mask));
}

inline std::unique_ptr<SegmenterBackend> oracle_threshold(double cut, double flip_prob, std::uint64_t rng_seed) {
  return std::make_unique<ThresholdOracle>(cut, flip_prob, rng_seed);
}

inline std::unique_ptr<SegmenterBackend> external_backend(std::string command_template,
                                                          std::filesystem::path workdir) {
  return std::make_unique<ExternalBackend>(std::move(command_template), std::move(workdir));
}

}  // namespace vtrace
