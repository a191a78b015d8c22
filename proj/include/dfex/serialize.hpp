#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dfex/models.hpp"

namespace dfex::io {

/// One named array inside a section file. Data is little-endian on disk.
struct F32Section {
  std::string name;
  std::vector<float> data;
};
struct I32Section {
  std::string name;
  std::vector<std::int32_t> data;
};

/// Writes a manifest + raw sections container ("DFEXBIN1"). The write is
/// atomic (tmp file + rename).
void write_section_file(const std::string& path, const nlohmann::json& manifest,
                        const std::vector<F32Section>& f32,
                        const std::vector<I32Section>& i32 = {});

struct SectionFile {
  nlohmann::json manifest;
  std::vector<F32Section> f32;
  std::vector<I32Section> i32;

  const F32Section& f32_section(const std::string& name) const;
  const I32Section& i32_section(const std::string& name) const;
  bool has_f32(const std::string& name) const;
};

SectionFile read_section_file(const std::string& path);

nlohmann::json arch_to_json(const models::ArchitectureSpec& spec);
models::ArchitectureSpec arch_from_json(const nlohmann::json& j);

/// Saves a network (architecture + params + batch-norm buffers) to one file.
void save_network(const std::string& path, models::Network<float>& net,
                  const nlohmann::json& meta = nlohmann::json::object());

struct LoadedNetwork {
  models::Network<float> net;
  nlohmann::json meta;
};

LoadedNetwork load_network(const std::string& path);

}  // namespace dfex::io
