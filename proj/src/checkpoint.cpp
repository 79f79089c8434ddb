#include "compass/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "compass/errors.hpp"

namespace compass {
namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

float get_f32(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace

std::string encode_checkpoint(const nn::ParamSet<float>& params, const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (int i = 0; i < params.size(); ++i) {
    tensors.push_back({{"name", params.name(i)},
                       {"shape", {params[i].rows(), params[i].cols()}},
                       {"dtype", "f32"},
                       {"byte_offset", offset}});
    offset += 4 * params[i].size();
  }
  nlohmann::json manifest = {{"format_version", kCheckpointVersion},
                             {"meta", meta.is_null() ? nlohmann::json::object() : meta},
                             {"tensors", tensors}};
  const std::string text = manifest.dump();
  std::string out;
  out.reserve(8 + text.size() + offset);
  put_u64(out, text.size());
  out += text;
  for (int i = 0; i < params.size(); ++i) {
    for (float v : params[i].storage()) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8) throw InputError("checkpoint truncated (no header)");
  const std::uint64_t len = get_u64(bytes);
  if (len > bytes.size() - 8) throw InputError("checkpoint truncated (manifest)");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer() ||
      manifest["format_version"].get<int>() != kCheckpointVersion) {
    throw InputError("unsupported checkpoint format_version " +
                     (manifest.contains("format_version") ? manifest["format_version"].dump() : "(missing)"));
  }
  const std::string_view blob = bytes.substr(8 + len);

  std::vector<nn::ParamSpec> specs;
  std::vector<std::uint64_t> offsets;
  try {
    for (const auto& t : manifest.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32") {
        throw InputError("checkpoint tensor " + t.at("name").get<std::string>() + " has unsupported dtype " +
                         t.at("dtype").dump());
      }
      const auto shape = t.at("shape").get<std::vector<int>>();
      if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw InputError("checkpoint tensor shape must be 2-D");
      specs.push_back({t.at("name").get<std::string>(), shape[0], shape[1]});
      offsets.push_back(t.at("byte_offset").get<std::uint64_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint manifest: ") + e.what());
  }

  Checkpoint ck;
  ck.params = nn::ParamSet<float>(specs);
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (int i = 0; i < ck.params.size(); ++i) {
    auto& m = ck.params[i];
    const std::uint64_t need = 4 * static_cast<std::uint64_t>(m.size());
    if (offsets[i] > blob.size() || need > blob.size() - offsets[i]) {
      throw InputError("checkpoint blob truncated at tensor " + ck.params.name(i));
    }
    const char* p = blob.data() + offsets[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      m.data()[j] = get_f32(p + 4 * j);
      if (!std::isfinite(m.data()[j])) throw InputError("checkpoint tensor " + ck.params.name(i) + " is not finite");
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const nn::ParamSet<float>& params,
                     const nlohmann::json& meta) {
  const std::string bytes = encode_checkpoint(params, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

nlohmann::json net_config_to_json(const nn::NetConfig& c) {
  return {{"N", c.targets},
          {"M", c.agents},
          {"d_e", c.d_model},
          {"heads", c.heads},
          {"d_pe", c.d_pe},
          {"H", c.slots},
          {"ff_mult", c.ff_mult},
          {"critic_hidden", c.critic_hidden},
          {"spatial_layers", c.spatial_layers},
          {"critic", std::string(nn::critic_name(c.critic))},
          {"variant", std::string(nn::variant_name(c.variant))}};
}

nn::NetConfig net_config_from_json(const nlohmann::json& j) {
  nn::NetConfig c;
  try {
    c.targets = j.at("N").get<int>();
    c.agents = j.at("M").get<int>();
    c.d_model = j.at("d_e").get<int>();
    c.heads = j.at("heads").get<int>();
    c.d_pe = j.at("d_pe").get<int>();
    c.slots = j.at("H").get<int>();
    c.ff_mult = j.at("ff_mult").get<int>();
    c.critic_hidden = j.at("critic_hidden").get<int>();
    c.spatial_layers = j.at("spatial_layers").get<int>();
    c.critic = nn::parse_critic(j.at("critic").get<std::string>());
    c.variant = nn::parse_variant(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("network settings: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace compass
