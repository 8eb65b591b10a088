#include "crowdlab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "crowdlab/common.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace crowdlab::nn {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'W', 'D', 'C', 'K', 'P', '1'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_f32(std::FILE* f, const Tensor& t) {
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  for (std::size_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  if (!buf.empty() && std::fwrite(buf.data(), sizeof(float), buf.size(), f) != buf.size())
    throw IoError("checkpoint: short write");
}

Tensor read_f32(std::FILE* f, const std::vector<int>& shape, const std::string& what) {
  Tensor t(shape);
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  if (!buf.empty() && std::fread(buf.data(), sizeof(float), buf.size(), f) != buf.size())
    throw IoError(cat("checkpoint: truncated payload while reading ", what));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& model, const Adam* opt,
                     int64_t step, const std::string& config_hash) {
  if (opt) {
    for (const auto& [name, p] : model.params) {
      if (!p.requires_grad()) continue;
      auto mi = opt->m.find(name);
      auto vi = opt->v.find(name);
      if (mi == opt->m.end() || vi == opt->v.end())
        throw ContractError(cat("checkpoint: optimizer has no slots for '", name,
                                "'; step the optimizer at least once before saving it"));
      if (!mi->second.same_shape(p.value()) || !vi->second.same_shape(p.value()))
        throw ContractError(cat("checkpoint: optimizer slot shape mismatch for '", name, "'"));
    }
  }
  nlohmann::json header;
  header["arch_id"] = model.arch_id;
  header["hparams"] = model.hparams;
  header["step"] = step;
  header["config_hash"] = config_hash;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& [name, p] : model.params) {
    plist.push_back({{"name", name},
                     {"shape", p.value().shape()},
                     {"grad", p.requires_grad()}});
  }
  header["params"] = plist;
  if (opt) {
    header["opt"] = {{"t", opt->t}, {"beta1", opt->beta1}, {"beta2", opt->beta2},
                     {"eps", opt->eps}};
  } else {
    header["opt"] = nullptr;
  }
  const std::string hs = header.dump();

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError(cat("checkpoint: cannot open '", path, "' for writing"));
  if (std::fwrite(kMagic, 1, 8, f.get()) != 8) throw IoError("checkpoint: short write");
  const uint64_t hlen = hs.size();
  if (std::fwrite(&hlen, sizeof(hlen), 1, f.get()) != 1) throw IoError("checkpoint: short write");
  if (std::fwrite(hs.data(), 1, hs.size(), f.get()) != hs.size())
    throw IoError("checkpoint: short write");
  for (const auto& [name, p] : model.params) write_f32(f.get(), p.value());
  if (opt) {
    for (const auto& [name, p] : model.params) {
      if (p.requires_grad()) write_f32(f.get(), opt->m.at(name));
    }
    for (const auto& [name, p] : model.params) {
      if (p.requires_grad()) write_f32(f.get(), opt->v.at(name));
    }
  }
  if (std::fflush(f.get()) != 0) throw IoError(cat("checkpoint: flush failed for '", path, "'"));
}

Checkpoint load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError(cat("checkpoint: cannot open '", path, "'"));
  char magic[8];
  if (std::fread(magic, 1, 8, f.get()) != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(cat("checkpoint: '", path, "' is not a checkpoint file"));
  uint64_t hlen = 0;
  if (std::fread(&hlen, sizeof(hlen), 1, f.get()) != 1)
    throw IoError("checkpoint: truncated header length");
  if (hlen > (64ull << 20)) throw IoError("checkpoint: implausible header size");
  std::string hs(hlen, '\0');
  if (hlen > 0 && std::fread(hs.data(), 1, hlen, f.get()) != hlen)
    throw IoError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(cat("checkpoint: bad header JSON: ", e.what()));
  }

  Checkpoint ck;
  try {
    ck.model.arch_id = header.at("arch_id").get<std::string>();
    ck.model.hparams = header.at("hparams").get<std::map<std::string, int>>();
    ck.step = header.at("step").get<int64_t>();
    ck.config_hash = header.at("config_hash").get<std::string>();
    for (const auto& pj : header.at("params")) {
      const auto name = pj.at("name").get<std::string>();
      const auto shape = pj.at("shape").get<std::vector<int>>();
      const bool grad = pj.at("grad").get<bool>();
      Tensor t = read_f32(f.get(), shape, name);
      ck.model.params.emplace(name, Var::leaf(t, grad));
    }
    if (!header.at("opt").is_null()) {
      Adam opt;
      opt.t = header["opt"].at("t").get<int64_t>();
      opt.beta1 = header["opt"].at("beta1").get<double>();
      opt.beta2 = header["opt"].at("beta2").get<double>();
      opt.eps = header["opt"].at("eps").get<double>();
      for (const auto& pj : header.at("params")) {
        if (!pj.at("grad").get<bool>()) continue;
        const auto name = pj.at("name").get<std::string>();
        const auto shape = pj.at("shape").get<std::vector<int>>();
        opt.m.emplace(name, read_f32(f.get(), shape, cat(name, " (m slot)")));
      }
      for (const auto& pj : header.at("params")) {
        if (!pj.at("grad").get<bool>()) continue;
        const auto name = pj.at("name").get<std::string>();
        const auto shape = pj.at("shape").get<std::vector<int>>();
        opt.v.emplace(name, read_f32(f.get(), shape, cat(name, " (v slot)")));
      }
      ck.opt = std::move(opt);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(cat("checkpoint: malformed header field: ", e.what()));
  }
  char extra;
  if (std::fread(&extra, 1, 1, f.get()) == 1)
    throw IoError(cat("checkpoint: trailing bytes in '", path, "'"));
  return ck;
}

}  // namespace crowdlab::nn
