#include "nmcdr/model/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "nmcdr/util/io.hpp"

namespace nmcdr::model {

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  // width-1 octal digits, then NUL
  for (std::size_t i = width - 1; i-- > 0;) {
    field[i] = static_cast<char>('0' + (value & 7));
    value >>= 3;
  }
  field[width - 1] = '\0';
}

std::uint64_t get_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i] >= '0' && field[i] <= '7'; ++i) v = v * 8 + (field[i] - '0');
  return v;
}

void append_entry(std::string& out, const std::string& name, std::string_view body) {
  if (name.size() >= 100) throw CheckpointError("archive member name too long: " + name);
  char h[kBlock] = {};
  std::memcpy(h, name.data(), name.size());
  put_octal(h + 100, 8, 0644);
  put_octal(h + 108, 8, 0);
  put_octal(h + 116, 8, 0);
  put_octal(h + 124, 12, body.size());
  put_octal(h + 136, 12, 0);
  h[156] = '0';
  std::memcpy(h + 257, "ustar", 6);
  std::memcpy(h + 263, "00", 2);
  std::memset(h + 148, ' ', 8);
  unsigned sum = 0;
  for (unsigned char c : h) sum += c;
  put_octal(h + 148, 7, sum);
  h[155] = ' ';
  out.append(h, kBlock);
  out.append(body);
  out.append((kBlock - body.size() % kBlock) % kBlock, '\0');
}

std::string encode_values(const num::Tensor& t) {
  std::string bytes(t.size() * 8, '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(t[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return bytes;
}

num::Tensor decode_values(std::string_view bytes, std::size_t rows, std::size_t cols) {
  if (bytes.size() != rows * cols * 8) throw CheckpointError("tensor buffer has the wrong size");
  num::Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    t[i] = std::bit_cast<double>(bits);
  }
  return t;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["format"] = "nmcdr-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64-le";
  manifest["config_hash"] = ck.config_hash;
  manifest["metadata"] = ck.metadata.is_null() ? nlohmann::json::object() : ck.metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::size_t k = 0;
  for (const auto& [name, t] : ck.params) {
    manifest["tensors"].push_back(
        {{"name", name}, {"shape", {t.rows(), t.cols()}}, {"file", "tensors/" + std::to_string(k++) + ".bin"}});
  }
  std::string out;
  append_entry(out, "manifest.json", manifest.dump(2) + "\n");
  k = 0;
  for (const auto& [name, t] : ck.params) append_entry(out, "tensors/" + std::to_string(k++) + ".bin", encode_values(t));
  out.append(2 * kBlock, '\0');
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  std::map<std::string, std::string_view> members;
  std::size_t pos = 0;
  while (pos + kBlock <= bytes.size()) {
    const char* h = bytes.data() + pos;
    if (h[0] == '\0') break;
    unsigned sum = 0;
    for (std::size_t i = 0; i < kBlock; ++i) sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(h[i]);
    if (sum != get_octal(h + 148, 8)) throw CheckpointError("archive header checksum mismatch");
    const std::string name(h, strnlen(h, 100));
    const auto size = get_octal(h + 124, 12);
    pos += kBlock;
    if (pos + size > bytes.size()) throw CheckpointError("archive truncated in member " + name);
    members[name] = bytes.substr(pos, size);
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  auto it = members.find("manifest.json");
  if (it == members.end()) throw CheckpointError("archive has no manifest.json");
  const auto manifest = nlohmann::json::parse(it->second);
  if (manifest.value("format", "") != "nmcdr-checkpoint" || manifest.value("dtype", "") != "float64-le") {
    throw CheckpointError("not an nmcdr float64 checkpoint");
  }
  Checkpoint ck;
  ck.config_hash = manifest.at("config_hash").get<std::string>();
  ck.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const auto file = entry.at("file").get<std::string>();
    auto m = members.find(file);
    if (m == members.end()) throw CheckpointError("archive is missing " + file);
    const auto shape = entry.at("shape");
    ck.params[entry.at("name").get<std::string>()] =
        decode_values(m->second, shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_file_atomic(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed manifest: " + e.what());
  }
}

}  // namespace nmcdr::model
