#ifndef SAP_IMAGE_IO_HPP_
#define SAP_IMAGE_IO_HPP_

#include <cstdint>
#include <string>

#include "sap/tensor.hpp"

namespace sap {

// Minimal binary PPM (P6) / PGM (P5) support, 8-bit, maxval 255.
// RGB images are 3×H×W tensors; gray images are H×W.

void write_ppm(const std::string& path, const Tensor<std::uint8_t>& rgb);
Tensor<std::uint8_t> read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Tensor<std::uint8_t>& gray);
Tensor<std::uint8_t> read_pgm(const std::string& path);

}  // namespace sap

#endif  // SAP_IMAGE_IO_HPP_
