#include "grokforget/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "grokforget/errors.hpp"

namespace gf::zoo {
namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_params(const Params& params) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint16_t>(out, kCheckpointVersion);
  const auto& entries = params.layout().entries();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_le<std::uint8_t>(out, 0);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.offset) * sizeof(float));
  }
  for (float f : params.flat()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Params decode_params(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw FormatError("bad checkpoint magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  auto layout = std::make_shared<IndexMap>();
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    auto name = r.str(len);
    if (r.get<std::uint8_t>() != 0) throw FormatError("unsupported dtype in checkpoint");
    const auto ndim = r.get<std::uint8_t>();
    Shape shape;
    for (std::uint8_t d = 0; d < ndim; ++d) shape.push_back(r.get<std::uint32_t>());
    offsets.push_back(r.get<std::uint64_t>());
    layout->append(std::move(name), std::move(shape));
  }
  const auto payload = r.pos();
  std::vector<float> values(static_cast<std::size_t>(layout->total()));
  for (std::size_t i = 0; i < layout->entries().size(); ++i) {
    const auto& e = layout->entries()[i];
    Reader pr(bytes.subspan(std::min(bytes.size(), payload + offsets[i])));
    for (std::int64_t k = 0; k < e.length; ++k) values[static_cast<std::size_t>(e.offset + k)] = std::bit_cast<float>(pr.get<std::uint32_t>());
  }
  return Params(std::move(layout), std::move(values));
}

nlohmann::json CheckpointMeta::to_json() const {
  return {{"spec", spec.to_json()},
          {"seed", seed},
          {"step", step},
          {"init_scheme", init_scheme},
          {"trajectory_summary", trajectory_summary}};
}

CheckpointMeta CheckpointMeta::from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.spec = ModelSpec::from_json(j.at("spec"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.step = j.at("step").get<std::int64_t>();
  m.init_scheme = j.value("init_scheme", std::string("fan_in_uniform"));
  m.trajectory_summary = j.value("trajectory_summary", nlohmann::json::object());
  return m;
}

void save_checkpoint(const std::filesystem::path& base, const Params& params, const CheckpointMeta& meta) {
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  const auto bytes = encode_params(params);
  auto bin = base;
  bin += ".grkf";
  auto tmp = bin;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, bin);
  auto side = base;
  side += ".json";
  std::ofstream js(side);
  js << meta.to_json().dump(2) << '\n';
  if (!js) throw Error("failed writing " + side.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& base) {
  auto bin = base;
  bin += ".grkf";
  std::ifstream f(bin, std::ios::binary);
  if (!f) throw Error("cannot open " + bin.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  auto side = base;
  side += ".json";
  std::ifstream js(side);
  if (!js) throw Error("cannot open " + side.string());
  auto meta = CheckpointMeta::from_json(nlohmann::json::parse(js));
  auto params = decode_params(bytes);
  if (!(params.layout() == *parameter_layout(meta.spec))) throw FormatError("checkpoint layout does not match its spec");
  return Checkpoint{std::move(params), std::move(meta)};
}

}  // namespace gf::zoo
