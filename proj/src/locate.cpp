#include "difuse/locate.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "difuse/error.hpp"
#include "difuse/image_io.hpp"
#include "httplib.h"

namespace difuse {

std::string to_string(MaskProvenance p) {
  switch (p) {
    case MaskProvenance::kFile: return "file";
    case MaskProvenance::kExternal: return "external";
    case MaskProvenance::kEmpty: return "empty";
  }
  return "empty";
}

Mask Mask::empty(int64_t height, int64_t width, std::string command) {
  return {torch::zeros({height, width}, torch::kFloat32), MaskProvenance::kEmpty,
          std::move(command)};
}

bool Mask::any() const { return values.defined() && values.any().item<bool>(); }

std::string normalize_command(const std::string& text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  require(!out.empty(), "text command is empty");
  return out;
}

std::string command_hash(const std::string& normalized) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : normalized) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string mask_filename(const std::string& image_id, const std::string& normalized) {
  return image_id + "__" + command_hash(normalized) + ".png";
}

Mask mask_from_image(const Image& img, int64_t height, int64_t width, MaskProvenance provenance,
                     std::string command) {
  if (img.channels() != 1) throw FormatError("mask must be a single-channel image");
  if (img.height() != height || img.width() != width) {
    std::ostringstream os;
    os << "mask is " << img.height() << "x" << img.width() << ", image is " << height << "x"
       << width;
    throw FormatError(os.str());
  }
  auto v = (img.values()[0] >= 0.5).to(torch::kFloat32);
  return {v, provenance, std::move(command)};
}

Mask NullLocator::locate(const Image& image, const std::string&,
                         const std::string& normalized_command) const {
  return Mask::empty(image.height(), image.width(), normalized_command);
}

FileLocator::FileLocator(std::filesystem::path dir) : dir_(std::move(dir)) {}

Mask FileLocator::locate(const Image& image, const std::string& image_id,
                         const std::string& normalized_command) const {
  const auto path = dir_ / mask_filename(image_id, normalized_command);
  if (!std::filesystem::exists(path)) {
    throw NotFoundError("no mask for '" + normalized_command + "' on image '" + image_id +
                        "' (expected " + path.string() + ")");
  }
  Image decoded;
  try {
    decoded = read_image(path);
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("cannot read mask: ") + e.what());
  }
  return mask_from_image(decoded, image.height(), image.width(), MaskProvenance::kFile,
                         normalized_command);
}

HttpLocator::HttpLocator(std::string url, double timeout_s) : timeout_s_(timeout_s) {
  require(timeout_s > 0.0, "locator timeout must be positive");
  const auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, "locator url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/locate" : url.substr(path_start);
}

Mask HttpLocator::locate(const Image& image, const std::string&,
                         const std::string& normalized_command) const {
  httplib::Client client(base_);
  const auto secs = static_cast<time_t>(timeout_s_);
  const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::MultipartFormDataItems items{
      {"image", encode_png(image), "image.png", "image/png"},
      {"text", normalized_command, "", "text/plain; charset=utf-8"},
  };
  auto res = client.Post(path_, items);
  if (!res) {
    throw TransportError("locator request to " + base_ + path_ +
                         " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 404) {
    Mask m = Mask::empty(image.height(), image.width(), normalized_command);
    m.provenance = MaskProvenance::kExternal;
    return m;
  }
  if (res->status != 200) {
    throw TransportError("locator answered HTTP " + std::to_string(res->status));
  }
  return mask_from_image(decode_png(res->body), image.height(), image.width(),
                         MaskProvenance::kExternal, normalized_command);
}

Mask locate(const Image& image, const std::string& image_id, const std::string& text,
            const LocatorProvider& provider) {
  const auto normalized = normalize_command(text);
  Mask m = provider.locate(image, image_id, normalized);
  require(m.values.dim() == 2 && m.height() == image.height() && m.width() == image.width(),
          "locator returned a mask of the wrong size");
  return m;
}

// ---------------------------------------------------------------- stub server

struct StubLocatorServer::State {
  std::filesystem::path dir;
  httplib::Server server;
  std::thread thread;
};

StubLocatorServer::StubLocatorServer(std::filesystem::path mask_dir)
    : state_(std::make_unique<State>()) {
  state_->dir = std::move(mask_dir);
  auto* st = state_.get();
  st->server.Post("/locate", [st](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_file("image") || !req.has_file("text")) {
      res.status = 400;
      res.set_content("expected multipart fields 'image' and 'text'", "text/plain");
      return;
    }
    std::string key;
    try {
      key = normalize_command(req.get_file_value("text").content);
    } catch (const ValidationError&) {
      res.status = 400;
      res.set_content("empty text command", "text/plain");
      return;
    }
    const auto path = st->dir / (command_hash(key) + ".png");
    std::ifstream f(path, std::ios::binary);
    if (!f) {
      res.status = 404;
      res.set_content("no object found", "text/plain");
      return;
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    res.set_content(ss.str(), "image/png");
  });
}

StubLocatorServer::~StubLocatorServer() { stop(); }

int StubLocatorServer::start(const std::string& host, int port) {
  auto* st = state_.get();
  const int bound = port == 0 ? st->server.bind_to_any_port(host) : (st->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw TransportError("stub locator cannot bind " + host + ":" + std::to_string(port));
  st->thread = std::thread([st] { st->server.listen_after_bind(); });
  st->server.wait_until_ready();
  return bound;
}

void StubLocatorServer::listen_blocking(const std::string& host, int port) {
  if (!state_->server.listen(host, port)) {
    throw TransportError("stub locator cannot listen on " + host + ":" + std::to_string(port));
  }
}

void StubLocatorServer::stop() {
  if (!state_) return;
  state_->server.stop();
  if (state_->thread.joinable()) state_->thread.join();
}

}  // namespace difuse
