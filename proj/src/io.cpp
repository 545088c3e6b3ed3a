#include "igam/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "igam/errors.hpp"

namespace igam {

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write " + path);
  os << content;
  if (!os) throw IoError("write failed " + path);
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw IoError("bad number: '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

namespace {

void write_netpbm(const std::string& path, const char* magic, int64_t height,
                  int64_t width, int64_t channels,
                  const std::vector<uint8_t>& bytes) {
  if (static_cast<int64_t>(bytes.size()) != height * width * channels) {
    throw IoError("image byte count mismatch for " + path);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write " + path);
  os << magic << "\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed " + path);
}

}  // namespace

void write_pgm(const std::string& path, int64_t height, int64_t width,
               const std::vector<uint8_t>& gray) {
  write_netpbm(path, "P5", height, width, 1, gray);
}

void write_ppm(const std::string& path, int64_t height, int64_t width,
               const std::vector<uint8_t>& rgb) {
  write_netpbm(path, "P6", height, width, 3, rgb);
}

}  // namespace igam
