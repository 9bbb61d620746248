#include "avh/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace avh {

namespace {

constexpr const char* kFormatName = "avh-tensor-archive";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

void TensorArchive::put(const std::string& name, Tensor tensor) {
  for (auto d : tensor.shape)
    if (d < 0) throw ArchiveError("tensor '" + name + "' has a negative dimension");
  if (tensor.numel() != static_cast<std::int64_t>(tensor.data.size()))
    throw ArchiveError("tensor '" + name + "' data length does not match shape " +
                       shape_string(tensor.shape));
  tensors_[name] = std::move(tensor);
}

const Tensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ArchiveError("missing tensor '" + name + "'");
  return it->second;
}

const Tensor& TensorArchive::expect(const std::string& name, const std::vector<std::int64_t>& shape) const {
  const Tensor& t = at(name);
  if (t.shape != shape)
    throw ArchiveError("shape mismatch for tensor '" + name + "': expected " + shape_string(shape) +
                       ", got " + shape_string(t.shape));
  return t;
}

std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
  auto blob = manifest;
  blob.replace_extension(".bin");
  return blob;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& manifest) {
  const auto blob = blob_path_for(manifest);
  nlohmann::json doc;
  doc["format"] = kFormatName;
  doc["version"] = TensorArchive::kFormatVersion;
  doc["dtype"] = "f32";
  doc["blob"] = blob.filename().string();
  doc["metadata"] = archive.metadata();
  auto entries = nlohmann::json::array();

  std::ofstream out(blob, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + blob.string());
  std::uint64_t offset = 0;
  std::vector<std::uint32_t> words;
  for (const auto& [name, t] : archive.tensors()) {
    const std::uint64_t length = t.data.size() * sizeof(float);
    entries.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape},
                       {"byte_offset", offset}, {"byte_length", length}});
    words.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(t.data[i]));
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(length));
    offset += length;
  }
  if (!out) throw IoError("failed writing " + blob.string());
  doc["tensors"] = std::move(entries);

  std::ofstream m(manifest, std::ios::trunc);
  if (!m) throw IoError("cannot write " + manifest.string());
  m << doc.dump(1) << '\n';
  if (!m) throw IoError("failed writing " + manifest.string());
}

TensorArchive load_archive(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError("corrupt manifest " + manifest.string() + ": " + e.what());
  }

  TensorArchive archive;
  std::string blob_name;
  try {
    if (doc.at("format").get<std::string>() != kFormatName)
      throw ArchiveError("corrupt manifest: unknown format '" + doc.at("format").get<std::string>() + "'");
    if (doc.at("version").get<int>() != TensorArchive::kFormatVersion)
      throw ArchiveError("corrupt manifest: unsupported version " + doc.at("version").dump());
    blob_name = doc.at("blob").get<std::string>();
    if (doc.contains("metadata")) archive.metadata() = doc.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError("corrupt manifest " + manifest.string() + ": " + e.what());
  }

  const auto blob = manifest.parent_path() / blob_name;
  std::ifstream b(blob, std::ios::binary | std::ios::ate);
  if (!b) throw IoError("cannot open " + blob.string());
  const auto blob_size = static_cast<std::uint64_t>(b.tellg());

  try {
    for (const auto& e : doc.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      if (e.at("dtype").get<std::string>() != "f32")
        throw ArchiveError("corrupt manifest: tensor '" + name + "' has unsupported dtype");
      Tensor t;
      t.shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = e.at("byte_offset").get<std::uint64_t>();
      const auto length = e.at("byte_length").get<std::uint64_t>();
      if (length != static_cast<std::uint64_t>(t.numel()) * sizeof(float))
        throw ArchiveError("corrupt manifest: byte_length of '" + name + "' disagrees with shape " +
                           shape_string(t.shape));
      if (offset + length > blob_size)
        throw ArchiveError("corrupt manifest: tensor '" + name + "' extends past end of blob");
      std::vector<std::uint32_t> words(static_cast<std::size_t>(t.numel()));
      b.seekg(static_cast<std::streamoff>(offset));
      b.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(length));
      if (!b) throw IoError("short read in " + blob.string());
      t.data.resize(words.size());
      for (std::size_t i = 0; i < words.size(); ++i) t.data[i] = std::bit_cast<float>(to_little(words[i]));
      archive.put(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError("corrupt manifest " + manifest.string() + ": " + e.what());
  }
  return archive;
}

}  // namespace avh
