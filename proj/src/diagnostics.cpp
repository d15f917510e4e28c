#include "packerlab/diagnostics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "packerlab/errors.hpp"

namespace packerlab {

Metrics Metrics::from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                             std::uint64_t tn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  m.recall = tp + fn > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.precision = tp + fp > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.fpr = fp + tn > 0 ? 100.0 * static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0;
  return m;
}

nlohmann::json Metrics::to_json() const {
  return nlohmann::json{{"recall", recall},
                        {"precision", precision},
                        {"f1", f1},
                        {"fpr", fpr},
                        {"counts", {{"tp", tp}, {"fp", fp}, {"fn", fn}, {"tn", tn}}}};
}

double f1_from_percent(double recall_pct, double precision_pct) {
  double s = recall_pct + precision_pct;
  return s > 0 ? 2.0 * recall_pct * precision_pct / s : 0.0;
}

namespace {

void check_domains(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a != b) fail(errc::domain_mismatch, "prediction and oracle domains differ");
}

}  // namespace

Metrics score_family(const std::map<std::string, std::optional<std::string>>& predictions,
                     const std::map<std::string, OracleLabel>& oracle, const std::string& family,
                     std::uint64_t* excluded) {
  std::set<std::string> pd, od;
  for (const auto& [k, v] : predictions) pd.insert(k);
  for (const auto& [k, v] : oracle) od.insert(k);
  check_domains(pd, od);

  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0, skipped = 0;
  for (const auto& [sample, pred] : predictions) {
    const OracleLabel& truth = oracle.at(sample);
    if (truth.family == "UNKNOWN_PACKED") {
      ++skipped;
      continue;
    }
    bool predicted = pred && *pred == family;
    bool actual = truth.family == family;
    if (predicted && actual)
      ++tp;
    else if (predicted)
      ++fp;
    else if (actual)
      ++fn;
    else
      ++tn;
  }
  if (excluded) *excluded = skipped;
  return Metrics::from_counts(tp, fp, fn, tn);
}

Metrics score_packedness(const std::map<std::string, bool>& verdicts,
                         const std::map<std::string, OracleLabel>& oracle) {
  std::set<std::string> pd, od;
  for (const auto& [k, v] : verdicts) pd.insert(k);
  for (const auto& [k, v] : oracle) od.insert(k);
  check_domains(pd, od);

  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& [sample, said_packed] : verdicts) {
    bool actual = oracle.at(sample).packed();
    if (said_packed && actual)
      ++tp;
    else if (said_packed)
      ++fp;
    else if (actual)
      ++fn;
    else
      ++tn;
  }
  return Metrics::from_counts(tp, fp, fn, tn);
}

nlohmann::json SignatureScore::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [fam, tally] : per_family)
    per[fam] = {{"matches", tally.matches},
                {"correct", tally.correct},
                {"correct_samples", tally.correct_samples}};
  return nlohmann::json{{"sig_index", sig_index}, {"label", label},     {"family", family},
                        {"matches", matches},     {"correct", correct}, {"accuracy", accuracy},
                        {"per_family", std::move(per)}};
}

SignatureScore SignatureScore::from_json(const nlohmann::json& j) {
  SignatureScore s;
  s.sig_index = j.at("sig_index").get<std::size_t>();
  s.label = j.at("label").get<std::string>();
  s.family = j.at("family").get<std::string>();
  s.matches = j.at("matches").get<std::uint64_t>();
  s.correct = j.at("correct").get<std::uint64_t>();
  s.accuracy = j.at("accuracy").get<double>();
  for (const auto& [fam, tally] : j.at("per_family").items()) {
    FamilyTally t;
    t.matches = tally.at("matches").get<std::uint64_t>();
    t.correct = tally.at("correct").get<std::uint64_t>();
    t.correct_samples = tally.at("correct_samples").get<std::vector<std::string>>();
    s.per_family[fam] = std::move(t);
  }
  return s;
}

std::vector<SignatureScore> score_signatures(const SignatureDb& db,
                                             const std::vector<SigMatchLogEntry>& match_log,
                                             const std::map<std::string, OracleLabel>& oracle,
                                             const FamilyAliasTable& aliases) {
  std::vector<SignatureScore> scores(db.entries.size());
  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    scores[i].sig_index = i;
    scores[i].label = db.entries[i].label;
    scores[i].family = canonicalize_label(db.entries[i].label, aliases).family;
  }

  // Dedup (sample, signature): a signature counts once per sample.
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& entry : match_log) {
    if (entry.sig_index >= db.entries.size())
      fail(errc::config_invalid, "match log references a signature outside the db");
    if (!seen.insert({entry.sample_id, entry.sig_index}).second) continue;
    auto it = oracle.find(entry.sample_id);
    if (it == oracle.end())
      fail(errc::domain_mismatch, "match log sample missing from oracle: " + entry.sample_id);

    SignatureScore& s = scores[entry.sig_index];
    const std::string& truth = it->second.family;
    FamilyTally& tally = s.per_family[truth];
    ++s.matches;
    ++tally.matches;
    if (truth == s.family) {
      ++s.correct;
      ++tally.correct;
      tally.correct_samples.push_back(entry.sample_id);
    }
  }
  for (auto& s : scores)
    s.accuracy = s.matches > 0 ? static_cast<double>(s.correct) / static_cast<double>(s.matches)
                               : 0.0;
  return scores;
}

nlohmann::json RuleProfile::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [fam, stat] : per_family)
    per[fam] = {{"count", stat.count},
                {"fired", stat.fired},
                {"recall", stat.recall},
                {"precision", stat.precision}};
  return nlohmann::json{{"tool", rule.tool},
                        {"name", rule.name},
                        {"per_family", std::move(per)},
                        {"aggregate", aggregate.to_json()}};
}

RuleProfile RuleProfile::from_json(const nlohmann::json& j) {
  RuleProfile p;
  p.rule = {j.at("tool").get<std::string>(), j.at("name").get<std::string>()};
  for (const auto& [fam, stat] : j.at("per_family").items()) {
    RuleFamilyStat s;
    s.count = stat.at("count").get<std::uint64_t>();
    s.fired = stat.at("fired").get<std::uint64_t>();
    s.recall = stat.at("recall").get<double>();
    s.precision = stat.at("precision").get<double>();
    p.per_family[fam] = s;
  }
  const auto& agg = j.at("aggregate");
  p.aggregate = Metrics::from_counts(agg.at("counts").at("tp").get<std::uint64_t>(),
                                     agg.at("counts").at("fp").get<std::uint64_t>(),
                                     agg.at("counts").at("fn").get<std::uint64_t>(),
                                     agg.at("counts").at("tn").get<std::uint64_t>());
  return p;
}

std::vector<RuleProfile> profile_rules(const std::vector<RuleLogEntry>& log,
                                       const std::map<std::string, OracleLabel>& oracle) {
  std::map<std::string, std::uint64_t> class_counts;
  for (const auto& [sample, label] : oracle) ++class_counts[label.family];

  struct Acc {
    std::map<std::string, std::uint64_t> fired_per_class;
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::uint64_t fired_total = 0;
  };
  std::map<RuleId, Acc> acc;

  for (const auto& entry : log) {
    auto it = oracle.find(entry.sample_id);
    if (it == oracle.end())
      fail(errc::domain_mismatch, "rule log sample missing from oracle: " + entry.sample_id);
    Acc& a = acc[entry.rule];
    const std::string& cls = it->second.family;
    bool actual = it->second.packed();
    if (entry.fired) {
      ++a.fired_per_class[cls];
      ++a.fired_total;
      actual ? ++a.tp : ++a.fp;
    } else {
      actual ? ++a.fn : ++a.tn;
    }
  }

  std::vector<RuleProfile> out;
  for (const auto& [rule, a] : acc) {
    RuleProfile p;
    p.rule = rule;
    for (const auto& [cls, count] : class_counts) {
      RuleFamilyStat stat;
      stat.count = count;
      auto it = a.fired_per_class.find(cls);
      stat.fired = it == a.fired_per_class.end() ? 0 : it->second;
      stat.recall = count > 0 ? 100.0 * static_cast<double>(stat.fired) / static_cast<double>(count)
                              : 0.0;
      stat.precision = a.fired_total > 0
                           ? 100.0 * static_cast<double>(stat.fired) /
                                 static_cast<double>(a.fired_total)
                           : 0.0;
      p.per_family[cls] = stat;
    }
    p.aggregate = Metrics::from_counts(a.tp, a.fp, a.fn, a.tn);
    out.push_back(std::move(p));
  }
  return out;
}

void sort_rows_by_recall(std::vector<ReportRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return a.metrics.recall > b.metrics.recall;
  });
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "Tool,Family,Recall,Prec.,F1,FPR\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.1f,%.1f,%.1f,%.1f\n", r.tool.c_str(),
                  r.family.c_str(), r.metrics.recall, r.metrics.precision, r.metrics.f1,
                  r.metrics.fpr);
    out += buf;
  }
  return out;
}

nlohmann::json report_json(const std::vector<ReportRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row = r.metrics.to_json();
    row["tool"] = r.tool;
    row["family"] = r.family;
    arr.push_back(std::move(row));
  }
  return arr;
}

}  // namespace packerlab
