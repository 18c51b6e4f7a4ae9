#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grokforget/ops.hpp"
#include "grokforget/tensor.hpp"

namespace gf::data {

enum class Kind { classification, sequence_qa };

/// Rows of `inputs` paired with labels. Example ids are contiguous, starting
/// at `first_id`; a train/test pair from one generator shares a single dense
/// id space so the two sets are disjoint by construction.
struct Dataset {
  Kind kind = Kind::classification;
  Tensor inputs;   // [n, width]; token ids stored as floats for sequence data
  Labels labels;   // classification only
  std::int64_t first_id = 0;
  std::int64_t num_classes = 0;  // class count, or vocabulary size for tokens
  float input_min = 0.0f;        // valid input range, used for clipping
  float input_max = 1.0f;
  bool token_input = false;
  std::int64_t key_len = 0;  // sequence_qa: prompt tokens per row
  std::int64_t value_len = 0;

  std::int64_t size() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }
  std::vector<std::int64_t> ids() const;
  std::int64_t row_of(std::int64_t id) const;
  std::vector<std::int64_t> rows_of(std::span<const std::int64_t> ids) const;
  // Rows in the given order; ids stay attached to their original values
  // through the returned row list, not through `first_id`.
  Dataset rows(std::span<const std::int64_t> row_indices) const;
  Dataset subset(std::span<const std::int64_t> ids) const { return rows(rows_of(ids)); }
};

enum class ModularOp { add, sub };
enum class ModularEncoding { one_hot, tokens };

struct TrainTest {
  Dataset train;
  Dataset test;
};

bool is_prime(std::int64_t n);

// All p^2 pairs (a, b) labelled (a op b) mod p, shuffled and split.
// one_hot rows are [onehot(a) | onehot(b)]; token rows are [a, p, b, p+1].
TrainTest gen_modular_arithmetic(std::int64_t p, ModularOp op, double train_fraction, std::uint64_t seed,
                                 ModularEncoding encoding = ModularEncoding::one_hot);

struct ImageDims {
  std::int64_t channels = 1;
  std::int64_t height = 8;
  std::int64_t width = 8;
};

// Class-conditional Gaussian-blob images in [0, 1]. test_per_class < 0
// means the same count as per_class.
TrainTest gen_toy_images(std::int64_t classes, std::int64_t per_class, ImageDims dims, double noise_sigma,
                         std::uint64_t seed, std::int64_t test_per_class = -1);

// n_facts unique key sequences, each mapped to a random value sequence.
Dataset gen_kv_qa(std::int64_t n_facts, std::int64_t key_len, std::int64_t val_len, std::int64_t vocab,
                  std::uint64_t seed);

enum class SplitMode { class_partial, random_global, by_local_grok_label };
enum class LocalGrokLabel { grokked, ungrokked, ambiguous };

std::string to_string(SplitMode m);
SplitMode split_mode_from_string(const std::string& s);
std::string to_string(LocalGrokLabel l);

struct SplitSpec {
  SplitMode mode = SplitMode::random_global;
  double forget_fraction = 0.1;
  std::vector<std::int32_t> target_classes;
  // by_local_grok_label: which group to draw from, and an optional absolute
  // forget count overriding the fraction.
  LocalGrokLabel label_group = LocalGrokLabel::grokked;
  std::optional<std::int64_t> forget_count;
  std::uint64_t seed = 0;
};

struct DataSplit {
  std::vector<std::int64_t> retain_ids;
  std::vector<std::int64_t> forget_ids;
  std::vector<std::int64_t> test_ids;
};

// Count drawn from a group of `group_size`: floor(fraction * size), min 1.
std::int64_t forget_count(double fraction, std::int64_t group_size);

// `aux` holds one label per training row (by_local_grok_label only).
DataSplit make_split(const Dataset& train, const SplitSpec& spec, std::span<const LocalGrokLabel> aux = {},
                     const Dataset* test = nullptr);

// Line format: "<id>\t<space-separated input values>\t<label>\n"; sequence
// rows use label -1.
void export_records(const Dataset& ds, const std::filesystem::path& path);
Dataset import_records(const std::filesystem::path& path, const Dataset& schema);

}  // namespace gf::data
