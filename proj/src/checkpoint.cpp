#include "cmdrec/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace cmdrec {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'M', 'D', 'R', 'E', 'C', 'K', '1'};

json lora_to_json(const LoraSpec& s) {
  return {{"rank", s.rank},         {"alpha", s.alpha},          {"targets", s.targets},
          {"layers", s.layers},     {"freeze_base", s.freeze_base}, {"train_head", s.train_head}};
}

LoraSpec lora_from_json(const json& j) {
  LoraSpec s;
  s.rank = j.at("rank").get<int>();
  s.alpha = j.at("alpha").get<double>();
  s.targets = j.at("targets").get<std::vector<std::string>>();
  s.layers = j.at("layers").get<std::vector<int>>();
  s.freeze_base = j.at("freeze_base").get<bool>();
  s.train_head = j.at("train_head").get<bool>();
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path, std::uint64_t vocab_hash,
                     const std::string& extra_json) {
  json header;
  header["version"] = kCheckpointVersion;
  header["config"] = json::parse(model.config().to_json_text());
  header["vocab_hash"] = std::to_string(vocab_hash);
  header["extra"] = json::parse(extra_json);
  if (model.lora()) header["lora"] = lora_to_json(*model.lora());
  json table = json::array();
  for (const auto& p : model.params())
    table.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"trainable", p.trainable}});
  header["tensors"] = table;
  auto text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  std::uint64_t n = text.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params())
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  char magic[8];
  std::uint64_t n = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0 || n > (1ULL << 30))
    throw Error(ErrorCode::FormatError, "not a checkpoint: " + path.string());
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  LoadedCheckpoint out;
  try {
    auto header = json::parse(text);
    if (header.at("version").get<int>() != kCheckpointVersion)
      throw Error(ErrorCode::FormatError, "unsupported checkpoint version");
    out.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>());
    if (expected_vocab_hash && *expected_vocab_hash != out.vocab_hash)
      throw Error(ErrorCode::VocabularyMismatch, "checkpoint was trained with a different vocabulary");
    out.extra_json = header.value("extra", json::object()).dump();
    out.model = Model(BackboneConfig::from_json_text(header.at("config").dump()), 0);
    for (const auto& t : header.at("tensors")) {
      Parameter p;
      p.name = t.at("name").get<std::string>();
      p.value = ag::Mat(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
      p.trainable = t.at("trainable").get<bool>();
      in.read(reinterpret_cast<char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
      if (!in) throw Error(ErrorCode::FormatError, "truncated checkpoint " + path.string());
      if (out.model.has_param(p.name)) {
        auto& dst = out.model.param(p.name);
        if (dst.value.rows() != p.value.rows() || dst.value.cols() != p.value.cols())
          throw Error(ErrorCode::DimensionMismatch, "tensor shape mismatch for " + p.name);
        dst.value = std::move(p.value);
        dst.trainable = p.trainable;
      } else {
        out.model.add_param(std::move(p));
      }
    }
    if (header.contains("lora")) out.model.set_lora_spec(lora_from_json(header["lora"]));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, e.what());
  }
  return out;
}

}  // namespace cmdrec
