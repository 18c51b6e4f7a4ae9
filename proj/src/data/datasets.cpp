#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "grokforget/data.hpp"
#include "grokforget/errors.hpp"
#include "grokforget/rng.hpp"

namespace gf::data {

std::vector<std::int64_t> Dataset::ids() const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(size()));
  for (std::int64_t i = 0; i < size(); ++i) out[static_cast<std::size_t>(i)] = first_id + i;
  return out;
}

std::int64_t Dataset::row_of(std::int64_t id) const {
  const auto r = id - first_id;
  if (r < 0 || r >= size()) throw ValidationError("example id " + std::to_string(id) + " not in dataset");
  return r;
}

std::vector<std::int64_t> Dataset::rows_of(std::span<const std::int64_t> ids) const {
  std::vector<std::int64_t> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(row_of(id));
  return out;
}

Dataset Dataset::rows(std::span<const std::int64_t> row_indices) const {
  Dataset d = *this;
  d.inputs = inputs.gather_rows(row_indices);
  if (!labels.empty()) {
    d.labels.clear();
    for (auto r : row_indices) d.labels.push_back(labels[static_cast<std::size_t>(r)]);
  }
  return d;
}

bool is_prime(std::int64_t n) {
  if (n < 2) return false;
  for (std::int64_t d = 2; d * d <= n; ++d)
    if (n % d == 0) return false;
  return true;
}

TrainTest gen_modular_arithmetic(std::int64_t p, ModularOp op, double train_fraction, std::uint64_t seed,
                                 ModularEncoding encoding) {
  if (!is_prime(p)) throw ValidationError("modulus " + std::to_string(p) + " is not prime");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train_fraction must lie in (0, 1)");
  const auto total = p * p;
  std::vector<std::int64_t> order(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed, 0x6d6f64);
  rng.shuffle(order);
  const auto n_train = static_cast<std::int64_t>(std::floor(train_fraction * static_cast<double>(total)));
  if (n_train < 1 || n_train >= total) throw ValidationError("train_fraction leaves an empty split");

  const bool one_hot = encoding == ModularEncoding::one_hot;
  const auto width = one_hot ? 2 * p : 4;
  auto build = [&](std::int64_t begin, std::int64_t end, std::int64_t first_id) {
    Dataset d;
    d.kind = Kind::classification;
    d.first_id = first_id;
    d.token_input = !one_hot;
    d.num_classes = one_hot ? p : p + 2;
    d.input_max = one_hot ? 1.0f : static_cast<float>(p + 1);
    const auto n = end - begin;
    d.inputs = Tensor({n, width});
    for (std::int64_t i = 0; i < n; ++i) {
      const auto pair = order[static_cast<std::size_t>(begin + i)];
      const auto a = pair / p, b = pair % p;
      const auto y = op == ModularOp::add ? (a + b) % p : ((a - b) % p + p) % p;
      if (one_hot) {
        d.inputs.at(i, a) = 1.0f;
        d.inputs.at(i, p + b) = 1.0f;
      } else {
        d.inputs.at(i, 0) = static_cast<float>(a);
        d.inputs.at(i, 1) = static_cast<float>(p);
        d.inputs.at(i, 2) = static_cast<float>(b);
        d.inputs.at(i, 3) = static_cast<float>(p + 1);
      }
      d.labels.push_back(static_cast<std::int32_t>(y));
    }
    return d;
  };
  return TrainTest{build(0, n_train, 0), build(n_train, total, n_train)};
}

TrainTest gen_toy_images(std::int64_t classes, std::int64_t per_class, ImageDims dims, double noise_sigma,
                         std::uint64_t seed, std::int64_t test_per_class) {
  if (classes < 4) throw ValidationError("gen_toy_images needs at least 4 classes");
  if (per_class < 1) throw ValidationError("per_class must be positive");
  if (noise_sigma < 0.0) throw ValidationError("noise_sigma must be non-negative");
  if (test_per_class < 0) test_per_class = per_class;
  const auto pixels = dims.height * dims.width;
  const auto width = dims.channels * pixels;
  Rng proto_rng(seed, 0x70726f);
  // Each class: one blob per channel with its own centre and amplitude.
  std::vector<std::vector<float>> protos(static_cast<std::size_t>(classes), std::vector<float>(static_cast<std::size_t>(width)));
  const double spread = std::max(1.0, 0.2 * static_cast<double>(std::min(dims.height, dims.width)));
  for (auto& proto : protos) {
    for (std::int64_t c = 0; c < dims.channels; ++c) {
      const double cy = proto_rng.uniform(0.0, static_cast<double>(dims.height - 1));
      const double cx = proto_rng.uniform(0.0, static_cast<double>(dims.width - 1));
      const double amp = proto_rng.uniform(0.6, 1.0);
      for (std::int64_t y = 0; y < dims.height; ++y)
        for (std::int64_t x = 0; x < dims.width; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          proto[static_cast<std::size_t>(c * pixels + y * dims.width + x)] = static_cast<float>(amp * std::exp(-d2 / (2.0 * spread * spread)));
        }
    }
  }
  auto build = [&](std::int64_t count, std::int64_t first_id, std::uint64_t stream) {
    Rng noise(seed, stream);
    Dataset d;
    d.kind = Kind::classification;
    d.first_id = first_id;
    d.num_classes = classes;
    d.inputs = Tensor({classes * count, width});
    std::int64_t row = 0;
    for (std::int64_t k = 0; k < classes; ++k)
      for (std::int64_t i = 0; i < count; ++i, ++row) {
        for (std::int64_t j = 0; j < width; ++j) {
          const double v = protos[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] + noise_sigma * noise.normal();
          d.inputs.at(row, j) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        d.labels.push_back(static_cast<std::int32_t>(k));
      }
    return d;
  };
  auto train = build(per_class, 0, 0x747261);
  auto test = build(test_per_class, train.size(), 0x746573);
  return TrainTest{std::move(train), std::move(test)};
}

Dataset gen_kv_qa(std::int64_t n_facts, std::int64_t key_len, std::int64_t val_len, std::int64_t vocab,
                  std::uint64_t seed) {
  if (n_facts < 1 || key_len < 1 || val_len < 1) throw ValidationError("gen_kv_qa: sizes must be positive");
  if (vocab <= key_len + val_len) throw ValidationError("gen_kv_qa: vocabulary must exceed key_len + val_len");
  if (std::pow(static_cast<double>(vocab), static_cast<double>(key_len)) < static_cast<double>(n_facts)) {
    throw ValidationError("gen_kv_qa: vocabulary cannot hold that many distinct keys");
  }
  Rng rng(seed, 0x6b76);
  std::set<std::vector<std::int32_t>> keys, values;
  const auto len = key_len + val_len;
  Dataset d;
  d.kind = Kind::sequence_qa;
  d.token_input = true;
  d.num_classes = vocab;
  d.key_len = key_len;
  d.value_len = val_len;
  d.input_max = static_cast<float>(vocab - 1);
  d.inputs = Tensor({n_facts, len});
  auto draw = [&](std::int64_t n, std::set<std::vector<std::int32_t>>& seen, const char* what) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::vector<std::int32_t> s(static_cast<std::size_t>(n));
      for (auto& t : s) t = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
      if (seen.insert(s).second) return s;
    }
    throw GenerationError(std::string("gen_kv_qa: could not draw a distinct ") + what);
  };
  for (std::int64_t f = 0; f < n_facts; ++f) {
    const auto key = draw(key_len, keys, "key");
    const auto val = draw(val_len, values, "value");
    for (std::int64_t i = 0; i < key_len; ++i) d.inputs.at(f, i) = static_cast<float>(key[static_cast<std::size_t>(i)]);
    for (std::int64_t i = 0; i < val_len; ++i) d.inputs.at(f, key_len + i) = static_cast<float>(val[static_cast<std::size_t>(i)]);
  }
  return d;
}

void export_records(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f.precision(9);
  const auto w = ds.inputs.cols();
  for (std::int64_t r = 0; r < ds.size(); ++r) {
    f << (ds.first_id + r) << '\t';
    for (std::int64_t c = 0; c < w; ++c) f << (c ? " " : "") << ds.inputs.at(r, c);
    f << '\t' << (ds.labels.empty() ? -1 : ds.labels[static_cast<std::size_t>(r)]) << '\n';
  }
}

Dataset import_records(const std::filesystem::path& path, const Dataset& schema) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  Dataset d = schema;
  d.labels.clear();
  std::vector<float> values;
  std::int64_t width = -1, rows = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id_s, in_s, lab_s;
    if (!std::getline(ls, id_s, '\t') || !std::getline(ls, in_s, '\t') || !std::getline(ls, lab_s)) {
      throw FormatError("malformed record line: " + line);
    }
    const auto id = std::stoll(id_s);
    if (rows == 0) d.first_id = id;
    if (id != d.first_id + rows) throw FormatError("record ids are not contiguous");
    std::istringstream vs(in_s);
    std::int64_t n = 0;
    float v;
    while (vs >> v) {
      values.push_back(v);
      ++n;
    }
    if (width >= 0 && n != width) throw FormatError("ragged record widths");
    width = n;
    const auto lab = std::stoi(lab_s);
    if (lab >= 0) d.labels.push_back(lab);
    ++rows;
  }
  if (rows == 0) throw FormatError("no records in " + path.string());
  d.inputs = Tensor({rows, width}, std::move(values));
  return d;
}

}  // namespace gf::data
