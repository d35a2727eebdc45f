#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmgn/image_io.hpp"
#include "dmgn/synth.hpp"

// Dataset directory layout: a `manifest` text file with one record per line
// (id, kind, then key=value parameter pairs) next to <id>_I.png, <id>_B.png
// and <id>_R.png. Metadata round-trips losslessly; pixels round-trip exactly
// after 8-bit quantization.

namespace dmgn {

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void corpus_write(const std::vector<ImageTriple>& triples, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir + ": " + ec.message());
  std::ostringstream manifest;
  for (const ImageTriple& t : triples) {
    manifest << t.id << " " << kind_name(t.kind);
    for (const auto& [key, value] : t.params) manifest << " " << key << "=" << detail::format_double(value);
    manifest << "\n";
    write_png(dir + "/" + t.id + "_I.png", t.input);
    write_png(dir + "/" + t.id + "_B.png", t.background);
    write_png(dir + "/" + t.id + "_R.png", t.noise);
  }
  std::ofstream out(dir + "/manifest", std::ios::binary);
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << manifest.str();
  if (!out.flush()) throw IoError("manifest write failed in " + dir);
}

inline std::vector<ImageTriple> corpus_read(const std::string& dir) {
  std::ifstream in(dir + "/manifest", std::ios::binary);
  if (!in) throw IoError("missing manifest in " + dir);
  std::vector<ImageTriple> triples;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    ImageTriple t;
    std::string kind;
    if (!(row >> t.id >> kind))
      throw IoError("corrupt manifest line " + std::to_string(lineno) + " in " + dir);
    t.kind = kind_from_name(kind);
    std::string pair;
    while (row >> pair) {
      const auto eq = pair.find('=');
      if (eq == std::string::npos)
        throw IoError("corrupt manifest parameter '" + pair + "' at line " +
                      std::to_string(lineno));
      t.params[pair.substr(0, eq)] = std::stod(pair.substr(eq + 1));
    }
    t.input = read_png(dir + "/" + t.id + "_I.png");
    t.background = read_png(dir + "/" + t.id + "_B.png");
    t.noise = read_png(dir + "/" + t.id + "_R.png");
    if (t.input.shape() != t.background.shape() || t.input.shape() != t.noise.shape())
      throw IoError("triple " + t.id + " has mismatched image shapes");
    triples.push_back(std::move(t));
  }
  return triples;
}

// FNV-1a over the manifest followed by every referenced image file.
inline uint64_t corpus_checksum(const std::string& dir) {
  auto file_bytes = [&](const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing corpus file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  const std::string manifest = file_bytes(dir + "/manifest");
  uint64_t h = fnv1a(manifest);
  std::istringstream in(manifest);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id;
    row >> id;
    for (const char* suffix : {"_I.png", "_B.png", "_R.png"})
      h = fnv1a(file_bytes(dir + "/" + id + suffix), h);
  }
  return h;
}

}  // namespace dmgn
