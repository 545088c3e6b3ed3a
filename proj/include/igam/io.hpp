#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace igam {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
void ensure_directory(const std::string& path);

// %.17g: doubles survive a print/parse round trip exactly.
std::string fmt_double(double v);
double parse_double(const std::string& s);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

// Binary PGM (P5) / PPM (P6), 8-bit.
void write_pgm(const std::string& path, int64_t height, int64_t width,
               const std::vector<uint8_t>& gray);
void write_ppm(const std::string& path, int64_t height, int64_t width,
               const std::vector<uint8_t>& rgb);

}  // namespace igam
