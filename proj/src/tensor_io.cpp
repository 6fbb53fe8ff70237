#include "metasaug/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "metasaug/errors.hpp"

namespace metasaug {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");
static_assert(sizeof(double) == 8, "checkpoint format assumes 8-byte doubles");

void save_tensors(const std::vector<NamedTensor>& tensors, const std::string& prefix,
                  const nlohmann::json& metadata) {
  const std::string bin_path = prefix + ".bin";
  const std::string json_path = prefix + ".json";

  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot open " + bin_path + " for writing");

  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const NamedTensor& t : tensors) {
    bin.write(reinterpret_cast<const char*>(t.data.data.data()),
              static_cast<std::streamsize>(t.data.data.size() * sizeof(double)));
    index.push_back({{"name", t.name},
                     {"rows", t.data.rows},
                     {"cols", t.data.cols},
                     {"offset", offset}});
    offset += t.data.data.size() * sizeof(double);
  }
  bin.flush();
  if (!bin) throw IoError("write failed for " + bin_path);

  nlohmann::json doc;
  doc["tensors"] = std::move(index);
  doc["total_bytes"] = offset;
  doc["metadata"] = metadata;

  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw IoError("cannot open " + json_path + " for writing");
  js << doc.dump(2) << "\n";
  js.flush();
  if (!js) throw IoError("write failed for " + json_path);
}

std::pair<std::vector<NamedTensor>, nlohmann::json> load_tensors(const std::string& prefix) {
  const std::string bin_path = prefix + ".bin";
  const std::string json_path = prefix + ".json";

  std::ifstream js(json_path);
  if (!js) throw IoError("cannot open " + json_path);
  nlohmann::json doc;
  try {
    js >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(json_path + ": " + e.what());
  }

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path);
  bin.seekg(0, std::ios::end);
  const std::uint64_t file_bytes = static_cast<std::uint64_t>(bin.tellg());

  std::vector<NamedTensor> tensors;
  try {
    if (doc.at("total_bytes").get<std::uint64_t>() != file_bytes)
      throw ParseError(bin_path + ": size does not match sidecar total_bytes");
    for (const auto& entry : doc.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      const int rows = entry.at("rows").get<int>();
      const int cols = entry.at("cols").get<int>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      if (rows < 0 || cols < 0) throw ParseError(json_path + ": negative tensor shape");
      const std::uint64_t bytes =
          static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * sizeof(double);
      if (offset + bytes > file_bytes)
        throw ParseError(bin_path + ": tensor " + t.name + " extends past end of file");
      t.data = Matrix(rows, cols);
      bin.seekg(static_cast<std::streamoff>(offset));
      bin.read(reinterpret_cast<char*>(t.data.data.data()),
               static_cast<std::streamsize>(bytes));
      if (!bin) throw IoError("read failed for " + bin_path);
      tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(json_path + ": " + e.what());
  }
  return {std::move(tensors), doc.value("metadata", nlohmann::json::object())};
}

}  // namespace metasaug
