// SPDX-License-Identifier: Apache-2.0
#include "icefm/checkpoint.hpp"

#include "icefm/io.hpp"
#include "icefm/vit.hpp"

namespace icefm {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'E', 'F', 'M', 'C', 'K', 'P'};

LoraConfig lora_from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.at("rank").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.targets.clear();
  for (const auto& t : j.at("targets")) c.targets.push_back(param_role_from_string(t.get<std::string>()));
  return c;
}

}  // namespace

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& file) {
  nlohmann::json header;
  header["spec"] = to_json(model.spec());
  header["meta"] = {{"strategy", meta.strategy}, {"train_domain", meta.train_domain}, {"extra", meta.extra}};
  header["structure"] = model.structure();
  header["params"] = nlohmann::json::array();
  for (const auto& p : model.params())
    header["params"].push_back({{"path", p.path}, {"role", std::string(to_string(p.role))}, {"rows", p.value.rows()},
                                {"cols", p.value.cols()}, {"trainable", p.trainable}});
  const std::string text = header.dump();
  ByteWriter w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.str(text);
  for (const auto& p : model.params()) w.f32_array(p.value.data(), static_cast<std::size_t>(p.value.size()));
  w.u64(fnv1a(w.view()));
  w.save(file);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file, const ModelSpec* expected) {
  const std::string where = file.string();
  ByteReader r = ByteReader::from_file(file);
  if (r.size() < sizeof(kMagic) + 4 + 8 + 8) throw FormatError(where + ": truncated");
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError(where + ": not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError(where + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t stored = ByteReader(r.view().substr(r.size() - 8), where).u64();
  if (stored != fnv1a(r.view().substr(0, r.size() - 8))) throw FormatError(where + ": checksum mismatch (corrupt or truncated)");
  ByteReader body(r.view().substr(0, r.size() - 8), where);
  body.bytes(magic, sizeof(magic));
  body.u32();
  const std::uint64_t header_len = body.u64();
  if (header_len > body.remaining()) throw FormatError(where + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.view().substr(sizeof(kMagic) + 12, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": bad header: " + e.what());
  }
  std::string skip(header_len, '\0');
  body.bytes(skip.data(), header_len);

  LoadedCheckpoint out;
  const ModelSpec spec = model_spec_from_json(header.at("spec"));
  if (expected && (expected->class_count != spec.class_count || expected->in_channels != spec.in_channels))
    throw ValidationError(where + ": checkpoint has class_count " + std::to_string(spec.class_count) + " and in_channels " +
                          std::to_string(spec.in_channels) + ", expected " + std::to_string(expected->class_count) + " and " +
                          std::to_string(expected->in_channels));
  Rng rng(0);
  out.model = build_model<float>(spec, rng);
  const auto& structure = header.value("structure", nlohmann::json::object());
  if (structure.contains("vpt") || structure.contains("lora")) {
    auto* vit = dynamic_cast<VitModel<float>*>(out.model.get());
    if (!vit) throw FormatError(where + ": adapter structure on a non-transformer model");
    if (structure.contains("vpt")) {
      VptConfig vc;
      vc.prompt_length = structure["vpt"].at("prompt_length").get<int>();
      vc.per_layer = structure["vpt"].at("per_layer").get<bool>();
      vit->add_prompts(vc, rng);
    }
    if (structure.contains("lora")) vit->add_lora(lora_from_json(structure["lora"]), rng);
  }
  auto& params = out.model->params();
  const auto& entries = header.at("params");
  if (entries.size() != params.size()) throw FormatError(where + ": parameter count does not match the architecture");
  for (const auto& e : entries) {
    const auto path = e.at("path").get<std::string>();
    const auto idx = params.find(path);
    if (!idx) throw FormatError(where + ": unknown parameter '" + path + "'");
    auto& p = params[*idx];
    if (e.at("rows").get<Eigen::Index>() != p.value.rows() || e.at("cols").get<Eigen::Index>() != p.value.cols())
      throw FormatError(where + ": shape mismatch for '" + path + "'");
    if (param_role_from_string(e.at("role").get<std::string>()) != p.role) throw FormatError(where + ": role mismatch for '" + path + "'");
    body.f32_array(p.value.data(), static_cast<std::size_t>(p.value.size()));
    p.trainable = e.at("trainable").get<bool>();
  }
  if (!body.at_end()) throw FormatError(where + ": trailing bytes");
  const auto& meta = header.at("meta");
  out.meta.strategy = meta.value("strategy", "");
  out.meta.train_domain = meta.value("train_domain", "all");
  out.meta.extra = meta.value("extra", nlohmann::json::object());
  return out;
}

}  // namespace icefm
