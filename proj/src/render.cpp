#include "alcn/render.hpp"

#include <algorithm>
#include <array>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "alcn/util.hpp"

namespace alcn {
namespace fs = std::filesystem;

namespace {

void write_png(const fs::path& path, const cv::Mat& img) {
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", img, buf)) throw std::runtime_error("PNG encoding failed for " + path.string());
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

}  // namespace

void write_image_grid(const fs::path& path, const std::vector<Tensor<float>>& rows,
                      std::size_t max_cols) {
  if (rows.empty() || rows.front().rank() != 4)
    throw std::invalid_argument("image grid needs (B, C, H, W) rows");
  const std::size_t C = rows.front().dim(1), H = rows.front().dim(2), W = rows.front().dim(3);
  std::size_t cols = 0;
  for (const auto& r : rows) {
    if (r.rank() != 4 || r.dim(1) != C || r.dim(2) != H || r.dim(3) != W)
      throw std::invalid_argument("image grid rows must share (C, H, W)");
    cols = std::max(cols, std::min(max_cols, r.dim(0)));
  }
  constexpr int gap = 2;
  const int cell_w = static_cast<int>(W) + gap, cell_h = static_cast<int>(H) + gap;
  cv::Mat canvas(static_cast<int>(rows.size()) * cell_h + gap, static_cast<int>(cols) * cell_w + gap,
                 C == 3 ? CV_8UC3 : CV_8UC1, cv::Scalar::all(64));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t b = 0; b < std::min(cols, rows[r].dim(0)); ++b) {
      const float* img = rows[r].data() + b * C * H * W;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const int py = gap + static_cast<int>(r) * cell_h + static_cast<int>(y);
          const int px = gap + static_cast<int>(b) * cell_w + static_cast<int>(x);
          auto px8 = [&](std::size_t c) {
            return cv::saturate_cast<uchar>(img[c * H * W + y * W + x] * 255.0f + 0.5f);
          };
          if (C == 3)
            canvas.at<cv::Vec3b>(py, px) = cv::Vec3b(px8(2), px8(1), px8(0));  // RGB -> BGR
          else
            canvas.at<uchar>(py, px) = px8(0);
        }
    }
  write_png(path, canvas);
}

void write_roc_plot(const fs::path& path, const EvalReport& report, int size) {
  const int margin = 40, plot = size - 2 * margin;
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  auto at = [&](double fpr, double tpr) {
    return cv::Point(margin + static_cast<int>(fpr * plot),
                     size - margin - static_cast<int>(tpr * plot));
  };
  cv::rectangle(img, at(0, 0), at(1, 1), cv::Scalar(0, 0, 0), 1);
  cv::line(img, at(0, 0), at(1, 1), cv::Scalar(180, 180, 180), 1, cv::LINE_AA);
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    char label[8];
    std::snprintf(label, sizeof label, "%.2f", v);
    cv::putText(img, label, at(v, 0) + cv::Point(-12, 16), cv::FONT_HERSHEY_PLAIN, 0.8,
                cv::Scalar(0, 0, 0));
    cv::putText(img, label, at(0, v) + cv::Point(-36, 4), cv::FONT_HERSHEY_PLAIN, 0.8,
                cv::Scalar(0, 0, 0));
  }
  cv::putText(img, "FPR", at(0.5, 0) + cv::Point(-10, 32), cv::FONT_HERSHEY_PLAIN, 1.0,
              cv::Scalar(0, 0, 0));
  cv::putText(img, "TPR", cv::Point(4, margin - 12), cv::FONT_HERSHEY_PLAIN, 1.0,
              cv::Scalar(0, 0, 0));

  static const std::array<cv::Scalar, 6> palette{
      cv::Scalar(180, 90, 30), cv::Scalar(40, 120, 230), cv::Scalar(60, 160, 60),
      cv::Scalar(40, 40, 200), cv::Scalar(160, 90, 150), cv::Scalar(90, 90, 90)};
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    const auto& c = report.classes[i];
    std::vector<cv::Point> pts;
    for (const auto& p : c.roc) pts.push_back(at(p.fpr, p.tpr));
    const cv::Scalar colour = palette[i % palette.size()];
    cv::polylines(img, pts, false, colour, 2, cv::LINE_AA);
    char label[96];
    std::snprintf(label, sizeof label, "%s AUC=%.3f", c.class_name.c_str(), c.auc);
    cv::putText(img, label, at(0.45, 0) + cv::Point(0, -10 - 16 * static_cast<int>(i)),
                cv::FONT_HERSHEY_PLAIN, 1.0, colour);
  }
  write_png(path, img);
}

}  // namespace alcn
