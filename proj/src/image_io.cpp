#include "smokenet/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace smokenet {

ImageU8 read_image(const std::string& path, int force_channels) {
    if (force_channels != 1 && force_channels != 3) {
        throw ConfigError(format_msg("read_image: force_channels must be 1 or 3, got ", force_channels));
    }
    cv::Mat m = cv::imread(path, force_channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (m.empty()) {
        throw IoError(format_msg("failed to decode raster '", path, "'"));
    }
    ImageU8 img;
    img.width = m.cols;
    img.height = m.rows;
    img.channels = force_channels;
    img.pixels.resize(static_cast<std::size_t>(m.cols) * m.rows * force_channels);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            if (force_channels == 1) {
                img.at(y, x, 0) = m.at<std::uint8_t>(y, x);
            } else {
                const auto& bgr = m.at<cv::Vec3b>(y, x);
                img.at(y, x, 0) = bgr[2];
                img.at(y, x, 1) = bgr[1];
                img.at(y, x, 2) = bgr[0];
            }
        }
    }
    return img;
}

void write_image(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw ConfigError(format_msg("write_image: channels must be 1 or 3, got ", img.channels));
    }
    cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (img.channels == 1) {
                m.at<std::uint8_t>(y, x) = img.at(y, x, 0);
            } else {
                m.at<cv::Vec3b>(y, x) = cv::Vec3b(img.at(y, x, 2), img.at(y, x, 1), img.at(y, x, 0));
            }
        }
    }
    if (!cv::imwrite(path, m)) {
        throw IoError(format_msg("failed to write raster '", path, "'"));
    }
}

}  // namespace smokenet
