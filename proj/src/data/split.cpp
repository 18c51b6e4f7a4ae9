#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "grokforget/data.hpp"
#include "grokforget/errors.hpp"
#include "grokforget/rng.hpp"

namespace gf::data {

std::string to_string(SplitMode m) {
  switch (m) {
    case SplitMode::class_partial: return "class_partial";
    case SplitMode::random_global: return "random_global";
    case SplitMode::by_local_grok_label: return "by_local_grok_label";
  }
  return "?";
}

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "class_partial") return SplitMode::class_partial;
  if (s == "random_global") return SplitMode::random_global;
  if (s == "by_local_grok_label") return SplitMode::by_local_grok_label;
  throw ValidationError("unknown split mode '" + s + "'");
}

std::string to_string(LocalGrokLabel l) {
  switch (l) {
    case LocalGrokLabel::grokked: return "grokked";
    case LocalGrokLabel::ungrokked: return "ungrokked";
    case LocalGrokLabel::ambiguous: return "ambiguous";
  }
  return "?";
}

std::int64_t forget_count(double fraction, std::int64_t group_size) {
  const auto k = static_cast<std::int64_t>(std::floor(fraction * static_cast<double>(group_size)));
  return std::clamp<std::int64_t>(k, 1, group_size);
}

DataSplit make_split(const Dataset& train, const SplitSpec& spec, std::span<const LocalGrokLabel> aux,
                     const Dataset* test) {
  if (!(spec.forget_fraction > 0.0 && spec.forget_fraction < 1.0)) {
    throw ValidationError("forget_fraction must lie in (0, 1)");
  }
  if (train.size() < 2) throw ValidationError("training set too small to split");
  Rng rng(spec.seed, 0x73706c);
  std::vector<std::int64_t> forget_rows;
  auto draw_from = [&](const std::vector<std::int64_t>& group, std::int64_t k) {
    for (auto i : rng.sample_without_replacement(static_cast<std::int64_t>(group.size()), k)) {
      forget_rows.push_back(group[static_cast<std::size_t>(i)]);
    }
  };

  switch (spec.mode) {
    case SplitMode::class_partial: {
      if (train.kind != Kind::classification) throw ValidationError("class_partial needs a classification dataset");
      if (spec.target_classes.empty()) throw ValidationError("class_partial needs target classes");
      for (auto cls : spec.target_classes) {
        std::vector<std::int64_t> group;
        for (std::int64_t r = 0; r < train.size(); ++r)
          if (train.labels[static_cast<std::size_t>(r)] == cls) group.push_back(r);
        if (group.empty()) throw ValidationError("target class " + std::to_string(cls) + " absent from training set");
        draw_from(group, forget_count(spec.forget_fraction, static_cast<std::int64_t>(group.size())));
      }
      break;
    }
    case SplitMode::random_global: {
      std::vector<std::int64_t> all(static_cast<std::size_t>(train.size()));
      for (std::int64_t r = 0; r < train.size(); ++r) all[static_cast<std::size_t>(r)] = r;
      draw_from(all, forget_count(spec.forget_fraction, train.size()));
      break;
    }
    case SplitMode::by_local_grok_label: {
      if (static_cast<std::int64_t>(aux.size()) != train.size()) {
        throw ValidationError("by_local_grok_label needs one local-grok label per training example");
      }
      std::vector<std::int64_t> group;
      for (std::int64_t r = 0; r < train.size(); ++r)
        if (aux[static_cast<std::size_t>(r)] == spec.label_group) group.push_back(r);
      const auto want = spec.forget_count ? *spec.forget_count
                                          : forget_count(spec.forget_fraction, std::max<std::int64_t>(1, static_cast<std::int64_t>(group.size())));
      if (want < 1 || static_cast<std::int64_t>(group.size()) < want) {
        throw ValidationError("only " + std::to_string(group.size()) + " examples labelled " + to_string(spec.label_group) +
                              ", need " + std::to_string(want));
      }
      if (static_cast<std::int64_t>(group.size()) == train.size()) {
        throw ValidationError("forget set would consume the whole training set");
      }
      draw_from(group, want);
      break;
    }
  }

  std::sort(forget_rows.begin(), forget_rows.end());
  if (static_cast<std::int64_t>(forget_rows.size()) >= train.size()) throw ValidationError("retain set would be empty");
  DataSplit split;
  std::unordered_set<std::int64_t> in_forget(forget_rows.begin(), forget_rows.end());
  for (std::int64_t r = 0; r < train.size(); ++r) {
    (in_forget.count(r) ? split.forget_ids : split.retain_ids).push_back(train.first_id + r);
  }
  if (test) split.test_ids = test->ids();
  return split;
}

}  // namespace gf::data
