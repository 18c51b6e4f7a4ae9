#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "grokforget/errors.hpp"
#include "grokforget/harness.hpp"

namespace gf::harness {
namespace {

const char* kLogName = "records.jsonl";

const std::vector<std::string> kRecordColumns{
    "config_hash", "checkpoint", "algorithm", "fraction", "seed", "checkpoint_step", "status", "wall_time",
    "ua_before", "ra_before", "ta_before", "ua", "ra", "ta", "ues", "mia_balanced_accuracy", "mia_auc",
    "es_retain", "es_unlearn", "grad_cosine", "grad_angle", "cka", "lc_retain", "lc_test", "lc_forget", "fgsm",
    "steps_to_target"};

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> opt_num(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("bad number in CSV: '" + s + "'");
  return v;
}

double num(const std::string& s) {
  auto v = opt_num(s);
  if (!v) throw FormatError("missing number in CSV");
  return *v;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string to_string(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::diverged: return "diverged";
    case Status::skipped: return "skipped";
    case Status::failed: return "failed";
  }
  return "?";
}

Status status_from_string(const std::string& s) {
  if (s == "ok") return Status::ok;
  if (s == "diverged") return Status::diverged;
  if (s == "skipped") return Status::skipped;
  if (s == "failed") return Status::failed;
  throw FormatError("unknown status '" + s + "'");
}

std::string RunRecord::key() const {
  return config_hash + "|" + checkpoint + "|" + algorithm + "|" + format_double(fraction) + "|" + std::to_string(seed);
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& p : trajectory) traj.push_back({p.step, p.ua, p.ra});
  nlohmann::json j{{"type", "cell"},
                   {"config_hash", config_hash},
                   {"checkpoint", checkpoint},
                   {"algorithm", algorithm},
                   {"fraction", fraction},
                   {"seed", seed},
                   {"status", to_string(status)},
                   {"message", message},
                   {"wall_time", wall_time},
                   {"metrics", report.to_json()},
                   {"trajectory", traj}};
  j["checkpoint_step"] = checkpoint_step ? nlohmann::json(*checkpoint_step) : nlohmann::json(nullptr);
  return j;
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.algorithm = j.at("algorithm").get<std::string>();
  r.fraction = j.at("fraction").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = status_from_string(j.at("status").get<std::string>());
  r.message = j.value("message", std::string());
  r.wall_time = j.value("wall_time", 0.0);
  if (j.contains("checkpoint_step") && !j["checkpoint_step"].is_null())
    r.checkpoint_step = j["checkpoint_step"].get<std::int64_t>();
  r.report = metrics::MetricsReport::from_json(j.at("metrics"));
  for (const auto& p : j.value("trajectory", nlohmann::json::array()))
    r.trajectory.push_back({p.at(0).get<std::int64_t>(), p.at(1).get<double>(), p.at(2).get<double>()});
  return r;
}

std::string SweepPoint::key() const {
  return "sweep|" + config_hash + "|" + std::to_string(seed) + "|" + format_double(fraction) + "|" +
         std::to_string(step);
}

nlohmann::json SweepPoint::to_json() const {
  return {{"type", "sweep"}, {"config_hash", config_hash}, {"seed", seed}, {"fraction", fraction},
          {"step", step},    {"ua", ua},                   {"ra", ra},     {"ta", ta}};
}

SweepPoint SweepPoint::from_json(const nlohmann::json& j) {
  return {j.at("config_hash").get<std::string>(), j.at("seed").get<std::uint64_t>(), j.at("fraction").get<double>(),
          j.at("step").get<std::int64_t>(),       j.at("ua").get<double>(),          j.at("ra").get<double>(),
          j.at("ta").get<double>()};
}

ResultsStore::ResultsStore(std::filesystem::path dir) : dir_(std::move(dir)), log_path_(dir_ / kLogName) {
  std::filesystem::create_directories(dir_);
  if (!std::filesystem::exists(log_path_)) return;
  std::string content;
  {
    std::ifstream in(log_path_, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  const auto last_nl = content.rfind('\n');
  const std::size_t complete = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (complete < content.size()) std::filesystem::resize_file(log_path_, complete);
  std::size_t pos = 0;
  while (pos < complete) {
    const auto nl = content.find('\n', pos);
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("corrupt record in " + log_path_.string() + ": " + e.what());
    }
    if (j.value("type", std::string("cell")) == "sweep") {
      auto p = SweepPoint::from_json(j);
      if (index_.emplace(p.key(), sweep_.size()).second) sweep_.push_back(std::move(p));
    } else {
      auto r = RunRecord::from_json(j);
      if (index_.emplace(r.key(), records_.size()).second) records_.push_back(std::move(r));
    }
  }
}

bool ResultsStore::has(const std::string& key) const {
  std::lock_guard lock(mu_);
  return index_.count(key) > 0;
}

void ResultsStore::write_line(const nlohmann::json& j) {
  std::ofstream out(log_path_, std::ios::app | std::ios::binary);
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw FormatError("failed appending to " + log_path_.string());
}

bool ResultsStore::append(const RunRecord& r) {
  std::lock_guard lock(mu_);
  if (index_.count(r.key())) return false;
  write_line(r.to_json());
  index_.emplace(r.key(), records_.size());
  records_.push_back(r);
  return true;
}

bool ResultsStore::append(const SweepPoint& p) {
  std::lock_guard lock(mu_);
  if (index_.count(p.key())) return false;
  write_line(p.to_json());
  index_.emplace(p.key(), sweep_.size());
  sweep_.push_back(p);
  return true;
}

std::vector<RunRecord> ResultsStore::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::vector<SweepPoint> ResultsStore::sweep_points() const {
  std::lock_guard lock(mu_);
  return sweep_;
}

void export_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (std::size_t i = 0; i < kRecordColumns.size(); ++i) out << (i ? "," : "") << kRecordColumns[i];
  out << '\n';
  for (const auto& r : records) {
    const auto& m = r.report;
    std::string fg;
    for (const auto& [eps, acc] : m.fgsm) fg += (fg.empty() ? "" : ";") + format_double(eps) + ":" + format_double(acc);
    const std::vector<std::string> row{
        r.config_hash,
        r.checkpoint,
        r.algorithm,
        format_double(r.fraction),
        std::to_string(r.seed),
        r.checkpoint_step ? std::to_string(*r.checkpoint_step) : "",
        to_string(r.status),
        format_double(r.wall_time),
        format_double(m.before.ua),
        format_double(m.before.ra),
        format_double(m.before.ta),
        format_double(m.after.ua),
        format_double(m.after.ra),
        format_double(m.after.ta),
        opt_str(m.ues),
        m.mia ? format_double(m.mia->balanced_accuracy) : "",
        m.mia ? format_double(m.mia->auc) : "",
        opt_str(m.es_retain),
        opt_str(m.es_unlearn),
        m.grad ? format_double(m.grad->cosine) : "",
        m.grad ? format_double(m.grad->angle_degrees) : "",
        opt_str(m.cka),
        m.lc ? format_double(m.lc->retain) : "",
        m.lc ? format_double(m.lc->test) : "",
        m.lc ? format_double(m.lc->forget) : "",
        fg,
        m.steps_to_target ? std::to_string(*m.steps_to_target) : ""};
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

std::vector<RunRecord> ingest_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != kRecordColumns)
    throw FormatError("unexpected record columns in " + path.string());
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != kRecordColumns.size()) throw FormatError("wrong field count in " + path.string());
    RunRecord r;
    r.config_hash = f[0];
    r.checkpoint = f[1];
    r.algorithm = f[2];
    r.fraction = num(f[3]);
    r.seed = std::stoull(f[4]);
    if (!f[5].empty()) r.checkpoint_step = std::stoll(f[5]);
    r.status = status_from_string(f[6]);
    r.wall_time = num(f[7]);
    auto& m = r.report;
    m.before = {num(f[8]), num(f[9]), num(f[10])};
    m.after = {num(f[11]), num(f[12]), num(f[13])};
    m.ues = opt_num(f[14]);
    if (!f[15].empty()) m.mia = metrics::MiaResult{num(f[15]), num(f[16])};
    m.es_retain = opt_num(f[17]);
    m.es_unlearn = opt_num(f[18]);
    if (!f[19].empty()) m.grad = CosineResult{num(f[19]), num(f[20])};
    m.cka = opt_num(f[21]);
    if (!f[22].empty()) m.lc = metrics::LocalComplexityReport{num(f[22]), num(f[23]), num(f[24])};
    std::stringstream fg(f[25]);
    std::string item;
    while (std::getline(fg, item, ';')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw FormatError("bad fgsm entry '" + item + "'");
      m.fgsm.emplace_back(num(item.substr(0, colon)), num(item.substr(colon + 1)));
    }
    if (!f[26].empty()) m.steps_to_target = std::stoll(f[26]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gf::harness
