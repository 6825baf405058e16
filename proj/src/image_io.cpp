#include "difuse/image_io.hpp"

#include <opencv2/imgcodecs.hpp>

#include <fstream>
#include <sstream>
#include <vector>

#include "difuse/error.hpp"

namespace difuse {

namespace {

Image from_mat(const cv::Mat& decoded, const std::string& what) {
  if (decoded.empty()) throw FormatError("cannot decode image: " + what);
  cv::Mat m;
  double scale = 1.0 / 255.0;
  if (decoded.depth() == CV_16U) {
    scale = 1.0 / 65535.0;
  } else if (decoded.depth() != CV_8U) {
    throw FormatError("unsupported image depth: " + what);
  }
  decoded.convertTo(m, CV_32F, scale);

  const int h = m.rows;
  const int w = m.cols;
  const int ch = m.channels();
  if (ch != 1 && ch != 3 && ch != 4) throw FormatError("unsupported channel count: " + what);
  const int out_ch = ch == 1 ? 1 : 3;
  auto t = torch::empty({out_ch, h, w}, torch::kFloat32);
  auto acc = t.accessor<float, 3>();
  for (int i = 0; i < h; ++i) {
    const float* row = m.ptr<float>(i);
    for (int j = 0; j < w; ++j) {
      if (out_ch == 1) {
        acc[0][i][j] = row[j];
      } else {
        // OpenCV stores BGR(A).
        acc[0][i][j] = row[j * ch + 2];
        acc[1][i][j] = row[j * ch + 1];
        acc[2][i][j] = row[j * ch + 0];
      }
    }
  }
  return Image(t);
}

cv::Mat to_mat(const Image& img) {
  require(!img.empty(), "cannot encode an empty image");
  const auto h = static_cast<int>(img.height());
  const auto w = static_cast<int>(img.width());
  auto q = (img.values() * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  auto acc = q.accessor<uint8_t, 3>();
  if (img.channels() == 1) {
    cv::Mat m(h, w, CV_8UC1);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) m.at<uint8_t>(i, j) = acc[0][i][j];
    }
    return m;
  }
  cv::Mat m(h, w, CV_8UC3);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      m.at<cv::Vec3b>(i, j) = cv::Vec3b(acc[2][i][j], acc[1][i][j], acc[0][i][j]);
    }
  }
  return m;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("image not found: " + path.string());
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  const auto bytes = ss.str();
  std::vector<uchar> buf(bytes.begin(), bytes.end());
  return from_mat(cv::imdecode(buf, cv::IMREAD_UNCHANGED), path.string());
}

void write_image(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string encode_png(const Image& img) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", to_mat(img), buf)) throw FormatError("PNG encoding failed");
  return {buf.begin(), buf.end()};
}

Image decode_png(const std::string& bytes) {
  std::vector<uchar> buf(bytes.begin(), bytes.end());
  if (buf.empty()) throw FormatError("empty image payload");
  return from_mat(cv::imdecode(buf, cv::IMREAD_UNCHANGED), "in-memory payload");
}

}  // namespace difuse
