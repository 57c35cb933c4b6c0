#include "simres/textio.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "simres/errors.hpp"

namespace simres {

std::string format_double(double v) {
  std::array<char, 32> buf;
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw IoError("format_double: conversion failed");
  return std::string(buf.data(), end);
}

namespace {

void write_file(const std::filesystem::path& path, std::string_view content, std::ios::openmode mode) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_text_file(const std::filesystem::path& path, std::string_view content) { write_file(path, content, std::ios::out); }

void write_binary_file(const std::filesystem::path& path, std::string_view bytes) {
  write_file(path, bytes, std::ios::out | std::ios::binary);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

}  // namespace simres
