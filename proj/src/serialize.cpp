#include "dfex/serialize.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dfex/errors.hpp"

namespace dfex::io {

namespace {

constexpr char kMagic[9] = "DFEXBIN1";

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void write_section_file(const std::string& path, const nlohmann::json& manifest,
                        const std::vector<F32Section>& f32,
                        const std::vector<I32Section>& i32) {
  nlohmann::json m = manifest;
  auto& sections = m["sections"] = nlohmann::json::array();
  for (const auto& s : f32)
    sections.push_back({{"name", s.name}, {"dtype", "f32"}, {"count", s.data.size()}});
  for (const auto& s : i32)
    sections.push_back({{"name", s.name}, {"dtype", "i32"}, {"count", s.data.size()}});

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    const std::string mstr = m.dump();
    out.write(kMagic, 8);
    write_u64(out, mstr.size());
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto& s : f32)
      out.write(reinterpret_cast<const char*>(s.data.data()),
                static_cast<std::streamsize>(s.data.size() * sizeof(float)));
    for (const auto& s : i32)
      out.write(reinterpret_cast<const char*>(s.data.data()),
                static_cast<std::streamsize>(s.data.size() * sizeof(std::int32_t)));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

SectionFile read_section_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(path + ": not a DFEXBIN1 section file");
  const std::uint64_t mlen = read_u64(in);
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw IoError(path + ": truncated manifest");

  SectionFile sf;
  try {
    sf.manifest = nlohmann::json::parse(mstr);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": corrupt manifest: " + e.what());
  }
  for (const auto& s : sf.manifest.at("sections")) {
    const std::string name = s.at("name").get<std::string>();
    const std::string dtype = s.at("dtype").get<std::string>();
    const std::uint64_t count = s.at("count").get<std::uint64_t>();
    if (dtype == "f32") {
      F32Section sec{name, std::vector<float>(count)};
      in.read(reinterpret_cast<char*>(sec.data.data()),
              static_cast<std::streamsize>(count * sizeof(float)));
      sf.f32.push_back(std::move(sec));
    } else if (dtype == "i32") {
      I32Section sec{name, std::vector<std::int32_t>(count)};
      in.read(reinterpret_cast<char*>(sec.data.data()),
              static_cast<std::streamsize>(count * sizeof(std::int32_t)));
      sf.i32.push_back(std::move(sec));
    } else {
      throw IoError(path + ": unknown section dtype " + dtype);
    }
    if (!in) throw IoError(path + ": truncated section " + name);
  }
  return sf;
}

const F32Section& SectionFile::f32_section(const std::string& name) const {
  for (const auto& s : f32)
    if (s.name == name) return s;
  throw IoError("missing f32 section: " + name);
}

const I32Section& SectionFile::i32_section(const std::string& name) const {
  for (const auto& s : i32)
    if (s.name == name) return s;
  throw IoError("missing i32 section: " + name);
}

bool SectionFile::has_f32(const std::string& name) const {
  for (const auto& s : f32)
    if (s.name == name) return true;
  return false;
}

nlohmann::json arch_to_json(const models::ArchitectureSpec& spec) {
  nlohmann::json j{{"family", models::family_name(spec.family)},
                   {"num_classes", spec.num_classes},
                   {"input_shape", spec.input_shape}};
  if (spec.family == models::Family::kResnetKx) {
    j["depth"] = spec.depth;
    j["width_multiplier"] = spec.width_multiplier;
  }
  if (spec.family == models::Family::kGenerator) {
    j["latent_dim"] = spec.latent_dim;
    j["base_channels"] = spec.base_channels;
  }
  return j;
}

models::ArchitectureSpec arch_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"family",        "num_classes", "input_shape",
                                              "depth",         "width_multiplier",
                                              "latent_dim",    "base_channels"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("architecture: unknown key '" + it.key() + "'");
  models::ArchitectureSpec spec;
  spec.family = models::family_from_name(j.at("family").get<std::string>());
  spec.num_classes = j.at("num_classes").get<int>();
  const auto shape = j.at("input_shape").get<std::vector<int>>();
  if (shape.size() != 3) throw ConfigError("architecture: input_shape must have 3 entries");
  spec.input_shape = {shape[0], shape[1], shape[2]};
  spec.depth = j.value("depth", 0);
  spec.width_multiplier = j.value("width_multiplier", 0);
  spec.latent_dim = j.value("latent_dim", 0);
  spec.base_channels = j.value("base_channels", 128);
  spec.validate();
  return spec;
}

void save_network(const std::string& path, models::Network<float>& net,
                  const nlohmann::json& meta) {
  nlohmann::json manifest{{"kind", "network"}, {"schema", 1}, {"arch", arch_to_json(net.spec())},
                          {"meta", meta}};
  std::vector<F32Section> f32;
  f32.push_back({"params", net.params().values});
  f32.push_back({"buffers", net.buffers().values});
  write_section_file(path, manifest, f32);
}

LoadedNetwork load_network(const std::string& path) {
  const SectionFile sf = read_section_file(path);
  if (sf.manifest.value("kind", "") != "network")
    throw IoError(path + ": not a network file");
  const auto spec = arch_from_json(sf.manifest.at("arch"));
  models::Network<float> net =
      spec.family == models::Family::kGenerator
          ? models::build_generator<float>(spec)
          : models::build_classifier<float>(spec);
  nn::ParamVector<float> pv{sf.f32_section("params").data};
  if (pv.size() != net.param_count())
    throw IoError(path + ": parameter count mismatch for stored architecture");
  net.set_params(pv);
  nn::ParamVector<float> bv{sf.f32_section("buffers").data};
  net.set_buffers(bv);
  return LoadedNetwork{std::move(net), sf.manifest.value("meta", nlohmann::json::object())};
}

}  // namespace dfex::io
