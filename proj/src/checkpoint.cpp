#include "mtm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace mtm {

namespace {

void put_le(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

float get_le(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw CheckpointError("checkpoint: payload truncated");
  const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[3]) << 24);
  return std::bit_cast<float>(bits);
}

Metrics metrics_from_json(const nlohmann::json& j) {
  Confusion c;
  j.at("tp").get_to(c.tp);
  j.at("fp").get_to(c.fp);
  j.at("tn").get_to(c.tn);
  j.at("fn").get_to(c.fn);
  return compute_metrics(c);
}

}  // namespace

void write_checkpoint(std::ostream& out, const TrainConfig& config, const Vocabulary& vocab,
                      const Model<float>& model, std::size_t best_epoch, const std::optional<Metrics>& best_valid) {
  nlohmann::ordered_json header;
  header["schema"] = kCheckpointSchema;
  header["config"] = config_to_json(config);
  header["vocab"] = vocab.entries();
  header["best"] = {{"epoch", best_epoch}};
  if (best_valid) header["best"]["valid"] = metrics_to_json(*best_valid);
  auto params = nlohmann::ordered_json::array();
  for (const auto& p : model.params()) params.push_back({{"name", p.name}, {"shape", p.shape}});
  header["params"] = params;
  out << header.dump() << '\n';
  for (const auto& p : model.params()) {
    for (float v : p.value) put_le(out, v);
  }
  if (!out) throw CheckpointError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (!header.is_object() || header.value("schema", "") != kCheckpointSchema) {
    throw CheckpointError("checkpoint: expected schema " + std::string(kCheckpointSchema));
  }
  try {
    TrainConfig config = config_from_json(header.at("config"));
    Vocabulary vocab(header.at("vocab").get<std::vector<std::string>>());
    Model<float> model(config.model_config(vocab.size()), 0);
    const auto& params = header.at("params");
    if (params.size() != model.params().size()) {
      throw CheckpointError("checkpoint: " + std::to_string(params.size()) + " parameters, model expects " +
                            std::to_string(model.params().size()));
    }
    for (ParamId id = 0; id < params.size(); ++id) {
      auto& p = model.params()[id];
      const auto name = params[id].at("name").get<std::string>();
      const auto shape = params[id].at("shape").get<Shape>();
      if (name != p.name || shape != p.shape) {
        throw CheckpointError("checkpoint: parameter " + std::to_string(id) + " is " + name + " " +
                              shape_str(shape) + ", expected " + p.name + " " + shape_str(p.shape));
      }
      for (auto& v : p.value) v = get_le(in);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes");
    Checkpoint ck{config, vocab, std::move(model), 0, std::nullopt};
    const auto& best = header.at("best");
    best.at("epoch").get_to(ck.best_epoch);
    if (best.contains("valid")) ck.best_valid = metrics_from_json(best.at("valid"));
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad header field: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const TrainConfig& config, const Vocabulary& vocab,
                     const Model<float>& model, std::size_t best_epoch, const std::optional<Metrics>& best_valid) {
  write_file_atomic(path, [&](std::ostream& out) { write_checkpoint(out, config, vocab, model, best_epoch, best_valid); });
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

void write_file_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::ios_base::failure("cannot write " + tmp.string());
    try {
      writer(out);
      out.flush();
      if (!out) throw std::ios_base::failure("write failed: " + tmp.string());
    } catch (...) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw;
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::ios_base::failure("cannot rename onto " + path);
  }
}

}  // namespace mtm
