#include <cmath>

#include "grokforget/errors.hpp"
#include "grokforget/metrics.hpp"
#include "grokforget/objective.hpp"

namespace gf::metrics {
namespace {

double split_accuracy(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                      std::span<const std::int64_t> ids, const char* name) {
  if (ids.empty()) throw ValidationError(std::string(name) + " split is empty");
  const auto rows = ds.rows_of(ids);
  return accuracy(spec, params, ds, rows);
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

AccuracyTriple ua_ra_ta(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& train,
                        const data::Dataset& test, const data::DataSplit& split) {
  AccuracyTriple t;
  t.ua = split_accuracy(spec, params, train, split.forget_ids, "forget");
  t.ra = split_accuracy(spec, params, train, split.retain_ids, "retain");
  t.ta = split_accuracy(spec, params, test, split.test_ids, "test");
  return t;
}

std::optional<double> ues_percent(double ua_o, double ra_o, double ta_o, double ua_u, double ra_u, double ta_u) {
  const double dt = ta_o - ta_u;
  const double dr = ra_o - ra_u;
  if (std::abs(dt) < 1e-9 || std::abs(dr) < 1e-9) return std::nullopt;
  return (ua_o - ua_u) / (dt * dr);
}

std::optional<double> ues(const AccuracyTriple& before, const AccuracyTriple& after) {
  return ues_percent(100.0 * before.ua, 100.0 * before.ra, 100.0 * before.ta, 100.0 * after.ua, 100.0 * after.ra,
                     100.0 * after.ta);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["triple_before"] = before.to_json();
  j["triple_after"] = after.to_json();
  j["ues"] = optional_number(ues);
  if (mia) {
    j["mia_balanced_accuracy"] = mia->balanced_accuracy;
    j["mia_auc"] = mia->auc;
  }
  j["es_retain"] = optional_number(es_retain);
  j["es_unlearn"] = optional_number(es_unlearn);
  if (grad) {
    j["grad_cosine"] = grad->cosine;
    j["grad_angle"] = grad->angle_degrees;
  }
  j["cka"] = optional_number(cka);
  if (lc) {
    j["lc_retain"] = lc->retain;
    j["lc_test"] = lc->test;
    j["lc_forget"] = lc->forget;
  }
  j["fgsm"] = nlohmann::json::array();
  for (const auto& [eps, acc] : fgsm) j["fgsm"].push_back({eps, acc});
  j["steps_to_target"] = steps_to_target ? nlohmann::json(*steps_to_target) : nlohmann::json(nullptr);
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  auto triple = [](const nlohmann::json& t) {
    return AccuracyTriple{t.at("ua").get<double>(), t.at("ra").get<double>(), t.at("ta").get<double>()};
  };
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  MetricsReport r;
  r.before = triple(j.at("triple_before"));
  r.after = triple(j.at("triple_after"));
  r.ues = opt("ues");
  if (j.contains("mia_balanced_accuracy")) r.mia = MiaResult{j["mia_balanced_accuracy"], j["mia_auc"]};
  r.es_retain = opt("es_retain");
  r.es_unlearn = opt("es_unlearn");
  if (j.contains("grad_cosine")) r.grad = CosineResult{j["grad_cosine"], j["grad_angle"]};
  r.cka = opt("cka");
  if (j.contains("lc_retain")) r.lc = LocalComplexityReport{j["lc_retain"], j["lc_test"], j["lc_forget"]};
  if (j.contains("fgsm"))
    for (const auto& e : j["fgsm"]) r.fgsm.emplace_back(e.at(0).get<double>(), e.at(1).get<double>());
  if (j.contains("steps_to_target") && !j["steps_to_target"].is_null())
    r.steps_to_target = j["steps_to_target"].get<std::int64_t>();
  return r;
}

std::vector<std::string> MetricsReport::csv_columns() {
  return {"ua_before", "ra_before", "ta_before", "ua", "ra", "ta", "ues", "mia_balanced_accuracy", "mia_auc",
          "es_retain", "es_unlearn", "grad_cosine", "grad_angle", "cka", "lc_retain", "lc_test", "lc_forget", "fgsm",
          "steps_to_target"};
}

std::vector<std::string> MetricsReport::csv_row() const {
  std::string fg;
  for (const auto& [eps, acc] : fgsm) {
    if (!fg.empty()) fg += ';';
    fg += fmt(eps) + ":" + fmt(acc);
  }
  auto pct = [](double v) { return fmt(100.0 * v); };
  return {pct(before.ua),
          pct(before.ra),
          pct(before.ta),
          pct(after.ua),
          pct(after.ra),
          pct(after.ta),
          fmt(ues),
          mia ? fmt(mia->balanced_accuracy) : "",
          mia ? fmt(mia->auc) : "",
          fmt(es_retain),
          fmt(es_unlearn),
          grad ? fmt(grad->cosine) : "",
          grad ? fmt(grad->angle_degrees) : "",
          fmt(cka),
          lc ? fmt(lc->retain) : "",
          lc ? fmt(lc->test) : "",
          lc ? fmt(lc->forget) : "",
          fg,
          steps_to_target ? std::to_string(*steps_to_target) : ""};
}

}  // namespace gf::metrics
