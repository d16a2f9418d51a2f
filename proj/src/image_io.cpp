#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>

#include "r2au/data.hpp"

namespace r2au {

namespace {

cv::Mat plane_to_mat(const Tensor<float>& t, std::size_t n, std::size_t c) {
  const Shape s = t.shape();
  cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_32F);
  const float* src = t.data() + (n * s.c + c) * s.plane();
  for (std::size_t i = 0; i < s.h; ++i) {
    float* row = m.ptr<float>(static_cast<int>(i));
    std::copy(src + i * s.w, src + (i + 1) * s.w, row);
  }
  return m;
}

void write_u8(const std::filesystem::path& path, const Tensor<float>& t, bool binary) {
  const Shape s = t.shape();
  if (s.n != 1 || s.c != 1) throw ArgumentError("PNG writer expects a (1,1,H,W) tensor, got " + to_string(s));
  cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_8U);
  for (std::size_t i = 0; i < s.h; ++i) {
    auto* row = m.ptr<unsigned char>(static_cast<int>(i));
    for (std::size_t j = 0; j < s.w; ++j) {
      const float v = t[i * s.w + j];
      row[j] = binary ? (v >= 0.5f ? 255 : 0)
                      : static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), m, params)) throw IngestError("cannot write PNG " + path.string());
}

}  // namespace

Tensor<float> read_grayscale_png(const std::filesystem::path& path) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IngestError("unreadable PNG " + path.string());
  double scale;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw IngestError("unsupported PNG bit depth in " + path.string());
  }
  const int ch = raw.channels();
  if (ch != 1 && ch != 3 && ch != 4) throw IngestError("unsupported channel count in " + path.string());
  cv::Mat f;
  raw.convertTo(f, CV_MAKETYPE(CV_64F, ch), scale);

  Tensor<float> out(Shape{1, 1, static_cast<std::size_t>(f.rows), static_cast<std::size_t>(f.cols)});
  std::size_t k = 0;
  for (int i = 0; i < f.rows; ++i) {
    const double* row = f.ptr<double>(i);
    for (int j = 0; j < f.cols; ++j, ++k) {
      const double* px = row + j * ch;
      // OpenCV stores colour pixels as B, G, R[, A].
      const double y = ch == 1 ? px[0] : 0.114 * px[0] + 0.587 * px[1] + 0.299 * px[2];
      out[k] = static_cast<float>(std::clamp(y, 0.0, 1.0));
    }
  }
  return out;
}

void write_grayscale_png(const std::filesystem::path& path, const Tensor<float>& image) {
  write_u8(path, image, false);
}

void write_mask_png(const std::filesystem::path& path, const Tensor<float>& mask) {
  write_u8(path, mask, true);
}

Tensor<float> resize_bilinear(const Tensor<float>& t, std::size_t height, std::size_t width) {
  const Shape s = t.shape();
  if (height == 0 || width == 0) throw ArgumentError("resize target must be non-empty");
  if (s.h == height && s.w == width) return t;
  Tensor<float> out(Shape{s.n, s.c, height, width});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      cv::Mat dst;
      cv::resize(plane_to_mat(t, n, c), dst, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
                 cv::INTER_LINEAR);
      float* o = out.data() + (n * s.c + c) * height * width;
      for (std::size_t i = 0; i < height; ++i) {
        const float* row = dst.ptr<float>(static_cast<int>(i));
        std::copy(row, row + width, o + i * width);
      }
    }
  return out;
}

Tensor<float> threshold(const Tensor<float>& t, float level) {
  Tensor<float> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] >= level ? 1.0f : 0.0f;
  return out;
}

}  // namespace r2au
