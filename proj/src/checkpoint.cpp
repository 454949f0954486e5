#include "ivp/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ivp/config.hpp"
#include "ivp/errors.hpp"

namespace ivp {

namespace {

constexpr std::array<char, 4> kMagic{'I', 'V', 'P', 'C'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const char* raw(std::size_t n) {
    need(n);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("checkpoint truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

Reader open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  Reader r(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  if (r.bytes(4) != std::string(kMagic.data(), kMagic.size())) throw FormatError("bad checkpoint magic");
  if (r.get<std::uint16_t>() != kVersion) throw FormatError("unsupported checkpoint version");
  return r;
}

nlohmann::json read_header(Reader& r) {
  const auto len = r.get<std::uint32_t>();
  try {
    return nlohmann::json::parse(r.bytes(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
}

}  // namespace

void save_checkpoint(IvpModel& model, const std::filesystem::path& path) {
  nlohmann::json header{{"model", to_json(model->config())},
                        {"trained_steps", model->trained_steps},
                        {"lp_finetuned", model->lp_finetuned}};
  const std::string text = header.dump();

  std::string buf(kMagic.data(), kMagic.size());
  put<std::uint16_t>(buf, kVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(text.size()));
  buf += text;

  const auto params = model->named_parameters();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& item : params) {
    auto t = item.value().detach().contiguous();
    std::uint8_t tag;
    if (t.scalar_type() == torch::kFloat32) {
      tag = 0;
    } else if (t.scalar_type() == torch::kFloat64) {
      tag = 1;
    } else {
      throw ContractError("unsupported parameter dtype for " + item.key());
    }
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(item.key().size()));
    buf += item.key();
    put<std::uint8_t>(buf, tag);
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(buf, d);
    buf.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  auto r = open(path);
  return model_config_from_json(read_header(r).at("model"));
}

IvpModel load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  auto r = open(path);
  const auto header = read_header(r);
  const auto cfg = model_config_from_json(header.at("model"));
  if (expected && !(*expected == cfg)) {
    throw ConfigError("checkpoint configuration does not match the requested model configuration");
  }
  IvpModel model(cfg);
  model->trained_steps = header.value("trained_steps", std::int64_t{0});
  model->lp_finetuned = header.value("lp_finetuned", false);

  auto params = model->named_parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) throw FormatError("checkpoint parameter count does not match model");
  bool converted_to_double = false;
  torch::NoGradGuard no_grad;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.bytes(r.get<std::uint16_t>());
    const auto tag = r.get<std::uint8_t>();
    if (tag > 1) throw FormatError("unknown dtype tag for " + name);
    if (tag == 1 && !converted_to_double) {
      model->to(torch::kFloat64);
      params = model->named_parameters();
      converted_to_double = true;
    }
    const auto ndim = r.get<std::uint8_t>();
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = r.get<std::int64_t>();
    auto* target = params.find(name);
    if (target == nullptr) throw FormatError("checkpoint has unknown parameter " + name);
    if (target->sizes() != c10::IntArrayRef(dims)) throw FormatError("shape mismatch for " + name);
    const auto dtype = tag == 0 ? torch::kFloat32 : torch::kFloat64;
    if (target->scalar_type() != dtype) throw FormatError("mixed parameter dtypes in checkpoint");
    const auto bytes = static_cast<std::size_t>(target->numel() * target->element_size());
    std::memcpy(target->data_ptr(), r.raw(bytes), bytes);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return model;
}

}  // namespace ivp
