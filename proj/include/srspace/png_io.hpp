#pragma once

#include <string>

#include "srspace/tensor.hpp"

namespace srspace {

// Reads an 8-bit PNG into a [0,1] image tensor. Palette and gray inputs are
// expanded; an alpha channel, if present, is dropped. Throws std::runtime_error
// on unreadable or undecodable files.
ImageTensor load_png(const std::string& path);

// Writes a 1- or 3-channel image as an 8-bit gray/RGB PNG. Values are clamped
// to [0,1] and rounded; this is the clamping I/O boundary for image tensors.
void save_png(const std::string& path, const ImageTensor& img);

}  // namespace srspace
