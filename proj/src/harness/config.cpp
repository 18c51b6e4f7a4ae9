#include <fstream>
#include <set>

#include "grokforget/config_hash.hpp"
#include "grokforget/errors.hpp"
#include "grokforget/harness.hpp"

namespace gf::harness {
namespace {

std::string kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::modular: return "modular";
    case DatasetKind::toy_images: return "toy_images";
    case DatasetKind::kv_qa: return "kv_qa";
  }
  return "?";
}

DatasetKind kind_from(const std::string& s) {
  if (s == "modular") return DatasetKind::modular;
  if (s == "toy_images") return DatasetKind::toy_images;
  if (s == "kv_qa") return DatasetKind::kv_qa;
  throw ValidationError("unknown dataset kind '" + s + "'");
}

data::LocalGrokLabel label_from(const std::string& s) {
  if (s == "grokked") return data::LocalGrokLabel::grokked;
  if (s == "ungrokked") return data::LocalGrokLabel::ungrokked;
  if (s == "ambiguous") return data::LocalGrokLabel::ambiguous;
  throw ValidationError("unknown local-grok label '" + s + "'");
}

bool valid_selector(const std::string& s) {
  if (s == "pre" || s == "grok" || s == "final") return true;
  if (s.rfind("step:", 0) != 0 || s.size() == 5) return false;
  return s.find_first_not_of("0123456789", 5) == std::string::npos;
}

nlohmann::json thresholds_json(const train::GrokThresholds& t) {
  return {{"fit", t.fit}, {"grok", t.grok}, {"persistence_evals", t.persistence_evals}, {"min_gap_steps", t.min_gap_steps}};
}

train::GrokThresholds thresholds_from(const nlohmann::json& j) {
  train::GrokThresholds t;
  t.fit = j.value("fit", t.fit);
  t.grok = j.value("grok", t.grok);
  t.persistence_evals = j.value("persistence_evals", t.persistence_evals);
  t.min_gap_steps = j.value("min_gap_steps", t.min_gap_steps);
  return t;
}

}  // namespace

nlohmann::json DatasetConfig::to_json() const {
  nlohmann::json j{{"kind", kind_name(kind)}, {"seed", seed}};
  switch (kind) {
    case DatasetKind::modular:
      j["modulus"] = modulus;
      j["op"] = op == data::ModularOp::add ? "add" : "sub";
      j["train_fraction"] = train_fraction;
      j["encoding"] = encoding == data::ModularEncoding::one_hot ? "one_hot" : "tokens";
      break;
    case DatasetKind::toy_images:
      j["classes"] = classes;
      j["per_class"] = per_class;
      j["test_per_class"] = test_per_class;
      j["channels"] = dims.channels;
      j["height"] = dims.height;
      j["width"] = dims.width;
      j["noise_sigma"] = noise_sigma;
      break;
    case DatasetKind::kv_qa:
      j["n_facts"] = n_facts;
      j["key_len"] = key_len;
      j["value_len"] = value_len;
      j["vocab"] = vocab;
      break;
  }
  return j;
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.kind = kind_from(j.at("kind").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.modulus = j.value("modulus", c.modulus);
  const auto op = j.value("op", std::string("add"));
  if (op != "add" && op != "sub") throw ValidationError("modular op must be add or sub");
  c.op = op == "add" ? data::ModularOp::add : data::ModularOp::sub;
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  const auto enc = j.value("encoding", std::string("one_hot"));
  if (enc != "one_hot" && enc != "tokens") throw ValidationError("encoding must be one_hot or tokens");
  c.encoding = enc == "one_hot" ? data::ModularEncoding::one_hot : data::ModularEncoding::tokens;
  c.classes = j.value("classes", c.classes);
  c.per_class = j.value("per_class", c.per_class);
  c.test_per_class = j.value("test_per_class", c.test_per_class);
  c.dims.channels = j.value("channels", c.dims.channels);
  c.dims.height = j.value("height", c.dims.height);
  c.dims.width = j.value("width", c.dims.width);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.n_facts = j.value("n_facts", c.n_facts);
  c.key_len = j.value("key_len", c.key_len);
  c.value_len = j.value("value_len", c.value_len);
  c.vocab = j.value("vocab", c.vocab);
  return c;
}

data::TrainTest make_datasets(const DatasetConfig& cfg) {
  switch (cfg.kind) {
    case DatasetKind::modular:
      return data::gen_modular_arithmetic(cfg.modulus, cfg.op, cfg.train_fraction, cfg.seed, cfg.encoding);
    case DatasetKind::toy_images:
      return data::gen_toy_images(cfg.classes, cfg.per_class, cfg.dims, cfg.noise_sigma, cfg.seed, cfg.test_per_class);
    case DatasetKind::kv_qa: {
      auto facts = data::gen_kv_qa(cfg.n_facts, cfg.key_len, cfg.value_len, cfg.vocab, cfg.seed);
      return {facts, facts};
    }
  }
  throw ValidationError("unknown dataset kind");
}

nlohmann::json SplitConfig::to_json() const {
  return {{"mode", data::to_string(mode)},
          {"fractions", fractions},
          {"target_classes", target_classes},
          {"label_group", data::to_string(label_group)}};
}

SplitConfig SplitConfig::from_json(const nlohmann::json& j) {
  SplitConfig c;
  c.mode = data::split_mode_from_string(j.value("mode", std::string("random_global")));
  if (j.contains("fractions")) c.fractions = j["fractions"].get<std::vector<double>>();
  if (j.contains("target_classes")) c.target_classes = j["target_classes"].get<std::vector<std::int32_t>>();
  if (j.contains("label_group")) c.label_group = label_from(j["label_group"].get<std::string>());
  return c;
}

nlohmann::json MetricsConfig::to_json() const {
  nlohmann::json j{{"mia", mia}, {"grad", grad}, {"cka", cka}, {"lc", lc}, {"fgsm", fgsm}, {"target_ua", target_ua}};
  nlohmann::json l{{"seed", lc_cfg.seed}, {"max_points", lc_cfg.max_points}};
  l["radius"] = lc_cfg.radius ? nlohmann::json(*lc_cfg.radius) : nlohmann::json(nullptr);
  l["frame_size"] = lc_cfg.frame_size ? nlohmann::json(*lc_cfg.frame_size) : nlohmann::json(nullptr);
  j["lc_config"] = l;
  return j;
}

MetricsConfig MetricsConfig::from_json(const nlohmann::json& j) {
  MetricsConfig c;
  c.mia = j.value("mia", c.mia);
  c.grad = j.value("grad", c.grad);
  c.cka = j.value("cka", c.cka);
  c.lc = j.value("lc", c.lc);
  if (j.contains("fgsm")) c.fgsm = j["fgsm"].get<std::vector<double>>();
  c.target_ua = j.value("target_ua", c.target_ua);
  if (j.contains("lc_config")) {
    const auto& l = j["lc_config"];
    c.lc_cfg.seed = l.value("seed", c.lc_cfg.seed);
    c.lc_cfg.max_points = l.value("max_points", c.lc_cfg.max_points);
    if (l.contains("radius") && !l["radius"].is_null()) c.lc_cfg.radius = l["radius"].get<double>();
    if (l.contains("frame_size") && !l["frame_size"].is_null()) c.lc_cfg.frame_size = l["frame_size"].get<std::int64_t>();
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ValidationError("experiment needs at least one seed");
  if (algorithms.empty()) throw ValidationError("experiment needs at least one algorithm");
  if (checkpoints.empty()) throw ValidationError("experiment needs at least one checkpoint selector");
  if (split.fractions.empty()) throw ValidationError("experiment needs at least one forget fraction");
  if (workers < 1) throw ValidationError("workers must be >= 1");
  for (const auto& s : checkpoints)
    if (!valid_selector(s)) throw ValidationError("bad checkpoint selector '" + s + "'");
  std::set<std::string> names;
  for (const auto& a : algorithms) {
    a.cfg.validate();
    if (!names.insert(a.name).second) throw ValidationError("duplicate algorithm label '" + a.name + "'");
  }
  model.validate();
  train.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json algos = nlohmann::json::array();
  for (const auto& a : algorithms) {
    auto j = a.cfg.to_json();
    j["name"] = a.name;
    algos.push_back(j);
  }
  return {{"dataset", dataset.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"grok", thresholds_json(grok)},
          {"split", split.to_json()},
          {"checkpoints", checkpoints},
          {"algorithms", algos},
          {"seeds", seeds},
          {"metrics", metrics.to_json()},
          {"checkpoint_sweep", checkpoint_sweep},
          {"workers", workers},
          {"output_dir", output_dir.string()}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.dataset = DatasetConfig::from_json(j.at("dataset"));
  c.model = zoo::ModelSpec::from_json(j.at("model"));
  if (j.contains("train")) c.train = train::TrainConfig::from_json(j["train"]);
  if (j.contains("grok")) c.grok = thresholds_from(j["grok"]);
  if (j.contains("split")) c.split = SplitConfig::from_json(j["split"]);
  if (j.contains("checkpoints")) c.checkpoints = j["checkpoints"].get<std::vector<std::string>>();
  for (const auto& a : j.value("algorithms", nlohmann::json::array())) {
    AlgorithmEntry e;
    e.cfg = unlearn::UnlearnConfig::from_json(a);
    e.name = a.value("name", unlearn::to_string(e.cfg.algorithm));
    c.algorithms.push_back(std::move(e));
  }
  c.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  if (j.contains("metrics")) c.metrics = MetricsConfig::from_json(j["metrics"]);
  c.checkpoint_sweep = j.value("checkpoint_sweep", c.checkpoint_sweep);
  c.workers = j.value("workers", c.workers);
  c.output_dir = j.value("output_dir", std::string());
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j.erase("workers");
  j.erase("output_dir");
  return config_hash(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

}  // namespace gf::harness
