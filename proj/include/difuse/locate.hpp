#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <string>

#include "difuse/colorspace.hpp"

namespace difuse {

enum class MaskProvenance { kFile, kExternal, kEmpty };

std::string to_string(MaskProvenance p);

/// Binary object mask, [H, W] float32 with values in {0, 1}.
struct Mask {
  torch::Tensor values;
  MaskProvenance provenance = MaskProvenance::kEmpty;
  std::string command;

  static Mask empty(int64_t height, int64_t width, std::string command = {});
  int64_t height() const { return values.size(0); }
  int64_t width() const { return values.size(1); }
  bool any() const;
};

/// Lowercases, trims and collapses runs of whitespace to one space.
/// Throws ValidationError when nothing is left.
std::string normalize_command(const std::string& text);

/// 16 hex digits of the 64-bit FNV-1a hash of the normalized command.
std::string command_hash(const std::string& normalized);

/// "<image-id>__<command-hash>.png"
std::string mask_filename(const std::string& image_id, const std::string& normalized);

/// Turns a decoded single-channel image into a mask by thresholding at 0.5.
/// Throws FormatError for multi-channel input or a size different from the target.
Mask mask_from_image(const Image& img, int64_t height, int64_t width, MaskProvenance provenance,
                     std::string command);

/// Text command -> object mask. Every provider returns a binary mask sized to
/// the image, and blocks until it has one.
class LocatorProvider {
 public:
  virtual ~LocatorProvider() = default;
  virtual std::string kind() const = 0;
  virtual Mask locate(const Image& image, const std::string& image_id,
                      const std::string& normalized_command) const = 0;
};

/// Always returns the empty mask.
class NullLocator final : public LocatorProvider {
 public:
  std::string kind() const override { return "null"; }
  Mask locate(const Image& image, const std::string& image_id,
              const std::string& normalized_command) const override;
};

/// Looks masks up under a directory by image id and command hash.
class FileLocator final : public LocatorProvider {
 public:
  explicit FileLocator(std::filesystem::path dir);
  std::string kind() const override { return "file"; }
  Mask locate(const Image& image, const std::string& image_id,
              const std::string& normalized_command) const override;

 private:
  std::filesystem::path dir_;
};

/// POSTs multipart {image: PNG, text: UTF-8} to an HTTP endpoint that answers
/// with a single-channel PNG mask, or 404 when nothing was found.
class HttpLocator final : public LocatorProvider {
 public:
  HttpLocator(std::string url, double timeout_s);
  std::string kind() const override { return "external"; }
  Mask locate(const Image& image, const std::string& image_id,
              const std::string& normalized_command) const override;

 private:
  std::string base_;  // scheme://host:port
  std::string path_;
  double timeout_s_;
};

/// Normalizes `text` and asks `provider` for the mask.
Mask locate(const Image& image, const std::string& image_id, const std::string& text,
            const LocatorProvider& provider);

/// In-process test double for the external locator. Serves POST /locate by
/// returning `<dir>/<command-hash>.png`, or 404 when that file is absent.
class StubLocatorServer {
 public:
  explicit StubLocatorServer(std::filesystem::path mask_dir);
  ~StubLocatorServer();
  StubLocatorServer(const StubLocatorServer&) = delete;
  StubLocatorServer& operator=(const StubLocatorServer&) = delete;

  /// Binds and serves in a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop() is called from elsewhere.
  void listen_blocking(const std::string& host, int port);
  void stop();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace difuse
