#include "famguard/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "famguard/baselines.hpp"
#include "famguard/concepts.hpp"
#include "famguard/config.hpp"
#include "famguard/errors.hpp"
#include "famguard/evalkit.hpp"
#include "famguard/familiarity.hpp"
#include "famguard/lm.hpp"
#include "famguard/log.hpp"
#include "famguard/parallel.hpp"
#include "famguard/remote_lm.hpp"

namespace famguard::cli {

using nlohmann::json;

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

const std::vector<std::string> kMethods = {"self_familiarity", "perplexity",  "avg_logp",        "min_logp",
                                           "significance",     "sample_bert", "sample_sentence", "forward"};

struct Globals {
  std::string config_path;
  std::string lm_url;
  std::string toy_lm;
  std::string freq_dict;
  std::string gazetteer;
  std::string extractor_url;
  std::string embed_url;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool no_audit = false;
  bool no_timestamp = false;
  std::optional<std::size_t> common_cutoff;
  std::string aggregator;
  std::string score_mode;
  std::string theta_order;
  std::string kl_direction;
  bool no_grouping = false;
  bool no_filtering = false;
  bool no_ranking = false;
  std::string manifest_path;
};

/// Everything a command needs, resolved with precedence flag > env > config file > defaults.
struct Context {
  Globals g;
  const Env* env = nullptr;
  Config cfg;
  std::string model_ref;

  std::optional<std::string> lookup(const std::string& flag, const char* env_name) const {
    if (!flag.empty()) return flag;
    return (*env)(env_name);
  }

  void resolve() {
    if (auto path = lookup(g.config_path, "FAMGUARD_CONFIG")) cfg = Config::load(*path);
    if (auto s = (*env)("FAMGUARD_SEED")) {
      try {
        cfg.seed = std::stoull(*s);
      } catch (const std::exception&) {
        throw UsageError("FAMGUARD_SEED is not an unsigned integer: " + *s);
      }
    }
    if (g.seed) cfg.seed = *g.seed;
    if (g.common_cutoff) cfg.common_cutoff = *g.common_cutoff;
    if (!g.aggregator.empty()) cfg.aggregator = parse_aggregator(g.aggregator);
    if (!g.score_mode.empty()) cfg.score = parse_score_mode(g.score_mode);
    if (!g.theta_order.empty()) cfg.theta_order = parse_theta_order(g.theta_order);
    if (!g.kl_direction.empty()) cfg.kl_direction = parse_kl_direction(g.kl_direction);
    if (g.no_grouping) cfg.grouping = false;
    if (g.no_filtering) cfg.filtering = false;
    if (g.no_ranking) cfg.ranking = false;
    if (g.jobs < 1) throw UsageError("--jobs must be >= 1");
    cfg.validate();
  }

  ModelPtr model() {
    if (!g.lm_url.empty() && !g.toy_lm.empty()) throw UsageError("--lm-url and --toy-lm are mutually exclusive");
    if (!g.lm_url.empty()) return remote(g.lm_url);
    if (!g.toy_lm.empty()) return toy(g.toy_lm);
    if (auto url = (*env)(kLmUrlEnv)) return remote(*url);
    if (auto path = (*env)("FAMGUARD_TOY_LM")) return toy(*path);
    throw UsageError("no language model: pass --lm-url URL or --toy-lm PATH (or set " + std::string(kLmUrlEnv) + ")");
  }

  FrequencyDictionary dictionary() const {
    if (auto path = lookup(g.freq_dict, "FAMGUARD_FREQ_DICT")) return FrequencyDictionary::load(*path, cfg.common_cutoff);
    log::warn("no_frequency_dictionary", {{"effect", "every word ranks 0 and no concept is filtered"}});
    return FrequencyDictionary({}, cfg.common_cutoff);
  }

  std::unique_ptr<Extractor> extractor() const {
    if (auto url = lookup(g.extractor_url, "FAMGUARD_EXTRACTOR_URL")) {
      return std::make_unique<RemoteExtractor>(HttpJsonClient(*url));
    }
    if (auto path = lookup(g.gazetteer, "FAMGUARD_GAZETTEER")) {
      return std::make_unique<GazetteerExtractor>(GazetteerExtractor::load(*path));
    }
    return std::make_unique<GazetteerExtractor>();
  }

  PipelineOptions pipeline(int concept_jobs) const {
    auto opts = PipelineOptions::from_config(cfg);
    opts.jobs = concept_jobs;
    return opts;
  }

  json manifest(std::string_view command) const {
    json m = {{"tool", "famguard"},
              {"version", kVersion},
              {"command", command},
              {"config", cfg.to_json()},
              {"model", model_ref.empty() ? json(nullptr) : json(model_ref)},
              {"seed", cfg.seed}};
    if (!g.no_timestamp) {
      const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      std::tm tm{};
      gmtime_r(&now, &tm);
      std::ostringstream ts;
      ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
      m["created_at"] = ts.str();
    }
    return m;
  }

  /// Hash embedded in every output; also writes the manifest when --manifest is given.
  std::string publish_manifest(std::string_view command) const {
    const auto m = manifest(command);
    const auto hash = fnv1a_hex(m.dump());
    if (!g.manifest_path.empty()) {
      std::ofstream f(g.manifest_path);
      if (!f) throw IoError("cannot write manifest " + g.manifest_path);
      f << json{{"manifest", m}, {"manifest_hash", hash}}.dump(2) << '\n';
    }
    return hash;
  }

 private:
  ModelPtr remote(const std::string& url) {
    model_ref = url;
    return connect_remote_lm(url);
  }
  ModelPtr toy(const std::string& path) {
    model_ref = "toy:" + path;
    return load_toy_lm(path);
  }
};

// ---------------------------------------------------------------------------
// JSONL IO

struct InputLine {
  std::size_t line = 0;
  std::optional<json> record;
  std::string error;
};

std::vector<InputLine> read_jsonl(const std::string& path, std::istream& in) {
  std::ifstream file;
  std::istream* src = &in;
  if (path != "-") {
    file.open(path);
    if (!file) throw IoError("cannot open " + path);
    src = &file;
  }
  std::vector<InputLine> lines;
  std::string raw;
  for (std::size_t n = 1; std::getline(*src, raw); ++n) {
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    InputLine l;
    l.line = n;
    try {
      l.record = json::parse(raw);
      if (!l.record->is_object()) {
        l.record.reset();
        l.error = "line is not a JSON object";
      }
    } catch (const json::parse_error& e) {
      l.error = std::string("malformed JSON: ") + e.what();
    }
    lines.push_back(std::move(l));
  }
  if (src->bad()) throw IoError("error reading " + path);
  return lines;
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (path.empty() || path == "-") return;
    file_.open(path);
    if (!file_) throw IoError("cannot write " + path);
    out_ = &file_;
  }
  std::ostream& stream() { return *out_; }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

std::string string_field(const json& rec, const char* key) {
  if (!rec.contains(key) || !rec[key].is_string()) {
    throw ValidationError(std::string("record lacks string field \"") + key + "\"");
  }
  return rec[key].get<std::string>();
}

std::optional<std::string> optional_string(const json& rec, const char* key) {
  if (rec.contains(key) && rec[key].is_string()) return rec[key].get<std::string>();
  return std::nullopt;
}

json record_id(const json& rec, std::size_t line) {
  if (rec.contains("id")) return rec["id"];
  return "line-" + std::to_string(line);
}

std::string id_text(const json& id) { return id.is_string() ? id.get<std::string>() : id.dump(); }

/// Processes records concurrently; results keep input order. Per-record failures become
/// {"id", "line", "error"} records.
std::vector<json> map_records(const std::vector<InputLine>& lines, int jobs,
                              const std::function<json(const json&, std::size_t)>& fn, bool& any_error) {
  std::vector<json> results(lines.size());
  parallel_for(lines.size(), jobs, [&](std::size_t i) {
    const auto& l = lines[i];
    if (!l.record) {
      results[i] = {{"line", l.line}, {"error", l.error}};
      return;
    }
    try {
      results[i] = fn(*l.record, l.line);
    } catch (const std::exception& e) {
      results[i] = {{"id", record_id(*l.record, l.line)}, {"line", l.line}, {"error", e.what()}};
    }
  });
  any_error = false;
  for (const auto& r : results) any_error = any_error || r.contains("error");
  return results;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractArgs {
  std::string input = "-";
  std::string output;
};

int cmd_extract(Context& ctx, const ExtractArgs& a, std::istream& in, std::ostream& out) {
  const auto dict = ctx.dictionary();
  const auto extractor = ctx.extractor();
  const auto hash = ctx.publish_manifest("extract");
  const auto lines = read_jsonl(a.input, in);
  bool any_error = false;
  const auto results = map_records(
      lines, ctx.g.jobs,
      [&](const json& rec, std::size_t line) {
        const auto text = string_field(rec, "text");
        const auto domain = optional_string(rec, "domain").value_or("");
        const auto extracted = extract_entities(*extractor, text, domain);
        auto grouped = ctx.cfg.grouping ? group_concepts(extracted, text) : extracted;
        FilterResult fr;
        if (ctx.cfg.filtering) {
          fr = filter_concepts(std::move(grouped), dict);
        } else {
          fr.kept = std::move(grouped);
        }
        json concepts = json::array();
        for (const auto& s : fr.kept) concepts.push_back(to_json(s, text));
        json dropped = json::array();
        for (const auto& s : fr.dropped) {
          auto d = to_json(s, text);
          d["reason"] = "filtered";
          dropped.push_back(std::move(d));
        }
        json o = {{"id", record_id(rec, line)}, {"concepts", std::move(concepts)}, {"dropped", std::move(dropped)}};
        if (fr.kept.empty()) o["reason"] = extracted.empty() ? "none_extracted" : "filtered";
        if (!ctx.g.no_audit) {
          json raw = json::array();
          for (const auto& s : extracted) raw.push_back(to_json(s, text));
          o["extracted"] = std::move(raw);
        }
        o["manifest_hash"] = hash;
        return o;
      },
      any_error);
  Output sink(a.output, out);
  for (const auto& r : results) sink.stream() << r.dump() << '\n';
  return any_error ? kExitIo : kExitOk;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  std::string input = "-";
  std::string output;
  std::string method = "self_familiarity";
  std::string mode = "instruction";
  std::string default_domain;
};

std::vector<std::string> instruction_concepts(const Extractor& extractor, const FrequencyDictionary& dict,
                                              const Config& cfg, const std::string& text, const std::string& domain) {
  auto spans = extract_entities(extractor, text, domain);
  if (cfg.grouping) spans = group_concepts(std::move(spans), text);
  if (cfg.filtering) spans = filter_concepts(std::move(spans), dict).kept;
  std::vector<std::string> out;
  for (const auto& s : spans) out.push_back(s.text);
  return out;
}

int cmd_score(Context& ctx, const ScoreArgs& a, std::istream& in, std::ostream& out) {
  const bool concept_mode = a.mode == "concept";
  const auto model = ctx.model();
  const bool needs_dict = a.method == "self_familiarity" || (a.method == "significance" && !concept_mode);
  const auto dict = needs_dict ? ctx.dictionary() : FrequencyDictionary({}, 0);
  const auto extractor = ctx.extractor();
  std::unique_ptr<SimilarityBackend> backend;
  if (a.method == "sample_bert") {
    backend = std::make_unique<TokenF1Similarity>();
  } else if (a.method == "sample_sentence") {
    if (auto url = ctx.lookup(ctx.g.embed_url, "FAMGUARD_EMBED_URL")) {
      backend = std::make_unique<RemoteEmbeddingSimilarity>(HttpJsonClient(*url));
    } else {
      backend = std::make_unique<BagOfWordsCosine>();
    }
  }
  const auto pipeline = ctx.pipeline(1);
  const auto& cfg = ctx.cfg;
  const auto hash = ctx.publish_manifest("score");
  const auto lines = read_jsonl(a.input, in);
  const bool audit = !ctx.g.no_audit;

  bool any_error = false;
  const auto results = map_records(
      lines, ctx.g.jobs,
      [&](const json& rec, std::size_t line) {
        auto domain = optional_string(rec, "domain");
        if (!domain && !a.default_domain.empty()) domain = a.default_domain;
        const std::string subject = string_field(rec, concept_mode ? "concept" : "text");
        if (subject.empty()) throw ValidationError(concept_mode ? "empty concept" : "empty instruction");

        // Greedy and sampling baselines answer the instruction; in concept mode the
        // instruction is the concept explanation prompt.
        auto prompt = [&] {
          if (!concept_mode) return subject;
          const std::pair<std::string_view, std::string_view> slots[] = {{"concept", subject},
                                                                         {"domain", domain.value_or("general")}};
          return fill_template(pipeline.familiarity.templates.explain_domain, slots);
        };

        double score = 0.0;
        json details;
        if (a.method == "self_familiarity") {
          const auto report = concept_mode ? assess_concept(*model, dict, subject, domain, pipeline)
                                           : assess_instruction(*model, *extractor, dict, subject, domain, pipeline);
          score = report.instruction_score;
          details = to_json(report, concept_mode ? std::string_view(subject) : std::string_view(subject), audit);
        } else {
          BaselineScore b;
          if (a.method == "perplexity") {
            b = greedy_perplexity(*model, prompt(), cfg.l_f);
          } else if (a.method == "avg_logp") {
            b = greedy_avg_logp(*model, prompt(), cfg.l_f);
          } else if (a.method == "min_logp") {
            b = greedy_min_logp(*model, prompt(), cfg.l_f);
          } else if (a.method == "significance") {
            const auto concepts = concept_mode ? std::vector<std::string>{subject}
                                               : instruction_concepts(*extractor, dict, cfg, subject, domain.value_or(""));
            b = greedy_significance(*model, prompt(), concepts, cfg.mask_token, cfg.l_f, cfg.kl_direction);
          } else if (a.method == "sample_bert" || a.method == "sample_sentence") {
            SamplingConfig sc{cfg.t_s, cfg.l_f, cfg.temperature, cfg.seed, 1};
            b = sample_consistency(*model, prompt(), *backend, sc,
                                   a.method == "sample_bert" ? BaselineMethod::sample_bertscore
                                                             : BaselineMethod::sample_sentence);
          } else {
            b = forward_inference(*model, subject, domain.value_or("general"),
                                  concept_mode ? InferenceMode::concept_level : InferenceMode::instruction_level,
                                  cfg.score, cfg.l_f);
          }
          score = b.score;
          details = to_json(b, audit);
        }

        json o = {{"id", record_id(rec, line)}, {"method", a.method}, {"mode", a.mode}, {"score", score}};
        for (const char* key : {"kind", "label", "gold_score", "domain"}) {
          if (rec.contains(key)) o[key] = rec[key];
        }
        o["details"] = std::move(details);
        o["manifest_hash"] = hash;
        return o;
      },
      any_error);
  Output sink(a.output, out);
  for (const auto& r : results) sink.stream() << r.dump() << '\n';
  return any_error ? kExitIo : kExitOk;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string input = "-";
  std::string output;
  std::size_t n_resamples = 1000;
  double q = 0.05;
  double c = 0.95;
  std::string calibration_mode = "percentile";
  std::string method;
  std::string mode;
};

std::string score_key(const json& rec) {
  return rec.value("method", std::string("self_familiarity")) + "/" + rec.value("mode", std::string("instruction"));
}

struct ScoredRecord {
  json id;
  std::string key;
  double score = 0.0;
  json rec;
};

/// Parses a scores JSONL; malformed lines and records without a numeric score are errors.
std::vector<ScoredRecord> read_scores(const std::string& path, std::istream& in, const std::string& method,
                                      const std::string& mode) {
  std::vector<ScoredRecord> out;
  for (const auto& l : read_jsonl(path, in)) {
    if (!l.record) throw ValidationError(path + ":" + std::to_string(l.line) + ": " + l.error);
    const auto& rec = *l.record;
    const auto id = record_id(rec, l.line);
    if (!rec.contains("score") || !rec["score"].is_number()) {
      throw ValidationError("record " + id_text(id) + " has no numeric score" +
                            (rec.contains("error") ? " (" + rec["error"].dump() + ")" : ""));
    }
    if (!method.empty() && rec.value("method", std::string("self_familiarity")) != method) continue;
    if (!mode.empty() && rec.value("mode", std::string("instruction")) != mode) continue;
    out.push_back({id, score_key(rec), rec["score"].get<double>(), rec});
  }
  return out;
}

int cmd_calibrate(Context& ctx, const CalibrateArgs& a, std::istream& in, std::ostream& out) {
  const auto records = read_scores(a.input, in, a.method, a.mode);
  // Basic-concept records form the calibration set; without kinds every record counts.
  const bool has_kinds = std::any_of(records.begin(), records.end(),
                                     [](const auto& r) { return r.rec.value("kind", std::string()) == "basic"; });
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : records) {
    if (has_kinds && r.rec.value("kind", std::string()) != "basic") continue;
    groups[r.key].push_back(r.score);
  }
  if (groups.empty()) throw ValidationError("insufficient calibration data: no basic scores in " + a.input);

  BootstrapOptions opts;
  opts.n_resamples = a.n_resamples;
  opts.q = a.q;
  opts.c = a.c;
  opts.seed = ctx.cfg.seed;
  opts.mode = parse_calibration_mode(a.calibration_mode);
  opts.jobs = ctx.g.jobs;

  json doc = {{"thresholds", json::object()}};
  if (!a.output.empty() && std::ifstream(a.output)) {
    doc = read_json_file(a.output);
    if (!doc.contains("thresholds") || !doc["thresholds"].is_object()) {
      throw ValidationError(a.output + " is not a calibration file");
    }
  }
  for (const auto& [key, scores] : groups) {
    try {
      doc["thresholds"][key] = to_json(bootstrap_threshold(scores, opts));
    } catch (const ValidationError& e) {
      throw ValidationError(key + ": " + e.what());
    }
  }
  doc["manifest"] = ctx.manifest("calibrate");
  doc["manifest_hash"] = ctx.publish_manifest("calibrate");
  if (!a.output.empty()) {
    std::ofstream f(a.output);
    if (!f) throw IoError("cannot write " + a.output);
    f << doc.dump(2) << '\n';
  }
  out << doc.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string input = "-";
  std::string calibration;
  std::string labels;
  std::string roc_csv;
  std::optional<double> threshold;
  bool include_basic = false;
};

std::optional<CalibrationResult> calibration_for(const json& calib, const std::string& key) {
  if (!calib.contains("thresholds") || !calib["thresholds"].contains(key)) return std::nullopt;
  return calibration_from_json(calib["thresholds"][key]);
}

json load_calibration(const Context& ctx, const std::string& flag) {
  auto path = ctx.lookup(flag, "FAMGUARD_CALIBRATION");
  if (!path) return nullptr;
  if (!std::ifstream(*path)) throw UsageError("calibration file " + *path + " not found; run `famguard calibrate` first");
  return read_json_file(*path);
}

std::string format_metric(std::optional<double> v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << *v;
  return s.str();
}

int cmd_evaluate(Context& ctx, const EvaluateArgs& a, std::istream& in, std::ostream& out, std::ostream& err) {
  const auto records = read_scores(a.input, in, "", "");
  const auto calib = load_calibration(ctx, a.calibration);

  std::map<std::string, json> label_table;
  if (!a.labels.empty()) {
    for (const auto& l : read_jsonl(a.labels, in)) {
      if (!l.record) throw ValidationError(a.labels + ":" + std::to_string(l.line) + ": " + l.error);
      label_table[id_text(record_id(*l.record, l.line))] = *l.record;
    }
  }

  std::map<std::string, std::vector<LabeledScore>> groups;
  std::vector<std::string> unlabeled;
  for (const auto& r : records) {
    if (!a.include_basic && r.rec.value("kind", std::string()) == "basic") continue;
    json source = r.rec;
    if (auto it = label_table.find(id_text(r.id)); it != label_table.end()) source.update(it->second);
    if (!source.contains("label") || !source["label"].is_string()) {
      unlabeled.push_back(id_text(r.id));
      continue;
    }
    LabeledScore ls{id_text(r.id), r.score, parse_label(source["label"].get<std::string>()), std::nullopt};
    if (source.contains("gold_score") && source["gold_score"].is_number()) {
      ls.gold_score = source["gold_score"].get<double>();
      if (*ls.gold_score < 1.0 || *ls.gold_score > 9.0) {
        throw ValidationError("record " + ls.id + ": gold_score outside [1, 9]");
      }
    }
    groups[r.key].push_back(std::move(ls));
  }
  if (!unlabeled.empty()) {
    std::string ids;
    for (const auto& id : unlabeled) ids += (ids.empty() ? "" : ", ") + id;
    throw ValidationError("missing labels for: " + ids);
  }
  if (groups.empty()) throw ValidationError("no labeled test scores in " + a.input);

  json results = json::array();
  std::ostringstream roc;
  roc.precision(17);
  roc << "method,threshold,fpr,tpr\n";
  std::ostringstream table;
  table << std::left << std::setw(34) << "method" << std::right << std::setw(8) << "AUC" << std::setw(8) << "ACC"
        << std::setw(8) << "F1" << std::setw(8) << "PEA" << std::setw(10) << "h" << '\n';
  for (const auto& [key, scores] : groups) {
    double h = 0.0;
    if (a.threshold) {
      h = *a.threshold;
    } else if (auto c = calibration_for(calib, key)) {
      h = c->threshold;
    } else {
      throw UsageError("no calibrated threshold for " + key + "; run `famguard calibrate` or pass --threshold");
    }
    EvalMetrics m;
    try {
      m = evaluate(scores, h);
    } catch (const ValidationError& e) {
      throw ValidationError(key + ": " + e.what());
    }
    auto j = to_json(m);
    const auto slash = key.find('/');
    j["method"] = key.substr(0, slash);
    j["mode"] = key.substr(slash + 1);
    results.push_back(std::move(j));
    table << std::left << std::setw(34) << key << std::right << std::setw(8) << format_metric(m.auc) << std::setw(8)
          << format_metric(m.acc) << std::setw(8) << format_metric(m.f1) << std::setw(8) << format_metric(m.pearson)
          << std::setw(10) << format_metric(h) << '\n';
    for (const auto& p : roc_curve(scores)) roc << key << ',' << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
  }
  if (!a.roc_csv.empty()) {
    std::ofstream f(a.roc_csv);
    if (!f) throw IoError("cannot write " + a.roc_csv);
    f << roc.str();
  }
  json doc = {{"results", std::move(results)}, {"manifest", ctx.manifest("evaluate")},
              {"manifest_hash", ctx.publish_manifest("evaluate")}};
  out << doc.dump(2) << '\n';
  err << table.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// guard

struct GuardArgs {
  std::string instruction;
  std::string concept_text;
  std::string domain;
  std::string calibration;
  std::optional<double> threshold;
};

int cmd_guard(Context& ctx, const GuardArgs& a, std::ostream& out, std::ostream& err) {
  if (a.instruction.empty() == a.concept_text.empty()) {
    throw UsageError("guard needs exactly one of --instruction or --concept");
  }
  const bool concept_mode = !a.concept_text.empty();
  const std::string key = std::string("self_familiarity/") + (concept_mode ? "concept" : "instruction");
  double h = 0.0;
  if (a.threshold) {
    h = *a.threshold;
  } else {
    const auto calib = load_calibration(ctx, a.calibration);
    const auto c = calib.is_null() ? std::nullopt : calibration_for(calib, key);
    if (!c) throw UsageError("no calibrated threshold for " + key + "; run `famguard calibrate` first");
    h = c->threshold;
  }

  const auto model = ctx.model();
  const auto dict = ctx.dictionary();
  const auto pipeline = ctx.pipeline(ctx.g.jobs);
  const std::optional<std::string> domain = a.domain.empty() ? std::nullopt : std::optional(a.domain);
  const std::string& subject = concept_mode ? a.concept_text : a.instruction;

  FamiliarityReport report;
  if (concept_mode) {
    report = assess_concept(*model, dict, subject, domain, pipeline);
  } else {
    const auto extractor = ctx.extractor();
    report = assess_instruction(*model, *extractor, dict, subject, domain, pipeline);
  }
  const auto decision = decide(report, h);

  json doc = {{"decision", to_json(decision, subject)},
              {"report", to_json(report, subject, !ctx.g.no_audit)},
              {"manifest_hash", ctx.publish_manifest("guard")}};
  out << doc.dump(2) << '\n';

  std::ostringstream summary;
  summary << to_string(decision.verdict) << std::fixed << std::setprecision(4) << "  s_f=" << decision.score
          << (decision.verdict == Verdict::withhold ? " < " : " >= ") << "h=" << h;
  if (decision.no_concepts) summary << "  (no concepts)";
  if (!decision.unfamiliar_concepts.empty()) {
    summary << "  unfamiliar:";
    for (const auto& s : decision.unfamiliar_concepts) summary << " \"" << s.text << '"';
  }
  err << summary.str() << '\n';
  return decision.verdict == Verdict::withhold ? kExitWithhold : kExitOk;
}

int exit_code_for(const Error& e) { return dynamic_cast<const UsageError*>(&e) ? kExitUsage : kExitIo; }

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err, const Env& env) {
  CLI::App app{"Pre-detects hallucination risk by measuring a model's familiarity with instruction concepts"};
  app.name("famguard");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Context ctx;
  ctx.env = &env;
  auto& g = ctx.g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--lm-url", g.lm_url, "Inference server base URL (overrides FAMGUARD_LM_URL)");
  app.add_option("--toy-lm", g.toy_lm, "Toy table or n-gram model JSON");
  app.add_option("--freq-dict", g.freq_dict, "Ranked word list, one word per line");
  app.add_option("--gazetteer", g.gazetteer, "Entity phrases, one per line");
  app.add_option("--extractor-url", g.extractor_url, "Remote concept extractor base URL");
  app.add_option("--embed-url", g.embed_url, "Remote embedding server for sample_sentence");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--no-audit", g.no_audit, "Omit explanations, candidates, and responses from outputs");
  app.add_flag("--no-timestamp", g.no_timestamp, "Omit timestamps so reruns are byte-identical");
  app.add_option("--common-cutoff", g.common_cutoff, "Dictionary rank at or below which a word is common");
  app.add_option("--aggregator", g.aggregator, "weighted|min|most_infrequent");
  app.add_option("--score", g.score_mode, "mean_logprob|joint");
  app.add_option("--theta-order", g.theta_order, "ascending|descending|position");
  app.add_option("--kl-direction", g.kl_direction, "forward|reverse|symmetric");
  app.add_flag("--no-grouping", g.no_grouping, "Skip concept grouping");
  app.add_flag("--no-filtering", g.no_filtering, "Skip common-concept filtering");
  app.add_flag("--no-ranking", g.no_ranking, "Weight concepts by position instead of frequency");
  app.add_option("--manifest", g.manifest_path, "Also write the run manifest to this path");

  ExtractArgs ea;
  auto* extract = app.add_subcommand("extract", "Extract, group, and filter concepts of instruction records");
  extract->add_option("input", ea.input, "Instruction JSONL ('-' for stdin)");
  extract->add_option("-o,--output", ea.output, "Output JSONL (default stdout)");

  ScoreArgs sa;
  auto* score = app.add_subcommand("score", "Score concept or instruction records with one method");
  score->add_option("input", sa.input, "Record JSONL ('-' for stdin)");
  score->add_option("-o,--output", sa.output, "Output JSONL (default stdout)");
  score->add_option("--method", sa.method, "Scoring method")->check(CLI::IsMember(kMethods));
  score->add_option("--mode", sa.mode, "concept|instruction")->check(CLI::IsMember({"concept", "instruction"}));
  score->add_option("--domain", sa.default_domain, "Domain for records without one");

  CalibrateArgs ca;
  auto* calibrate = app.add_subcommand("calibrate", "Estimate per-method thresholds from basic-concept scores");
  calibrate->add_option("input", ca.input, "Scores JSONL ('-' for stdin)");
  calibrate->add_option("-o,--output", ca.output, "Calibration file to create or update");
  calibrate->add_option("--n-resamples", ca.n_resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
  calibrate->add_option("--quantile", ca.q, "Quantile of basic scores")->check(CLI::Range(0.0, 1.0));
  calibrate->add_option("--confidence", ca.c, "Interval confidence")->check(CLI::Range(0.0, 1.0));
  calibrate->add_option("--calibration-mode", ca.calibration_mode, "percentile|raw")
      ->check(CLI::IsMember({"percentile", "raw"}));
  calibrate->add_option("--method", ca.method, "Only calibrate this method");
  calibrate->add_option("--mode", ca.mode, "Only calibrate this mode");

  EvaluateArgs va;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "AUC/ACC/F1/PEA of labeled test scores");
  evaluate_cmd->add_option("input", va.input, "Scores JSONL ('-' for stdin)");
  evaluate_cmd->add_option("--calibration", va.calibration, "Calibration file");
  evaluate_cmd->add_option("--labels", va.labels, "JSONL of {id, label, gold_score} joined by id");
  evaluate_cmd->add_option("--threshold", va.threshold, "Threshold for every method, ignoring calibration");
  evaluate_cmd->add_option("--roc-csv", va.roc_csv, "Write ROC points here");
  evaluate_cmd->add_flag("--include-basic", va.include_basic, "Also evaluate kind=basic records");

  GuardArgs ga;
  auto* guard_cmd = app.add_subcommand("guard", "PROCEED (exit 0) or WITHHOLD (exit 3) on one instruction");
  guard_cmd->add_option("--instruction", ga.instruction, "Instruction text");
  guard_cmd->add_option("--concept", ga.concept_text, "A single concept instead of an instruction");
  guard_cmd->add_option("--domain", ga.domain, "Domain of the instruction or concept");
  guard_cmd->add_option("--calibration", ga.calibration, "Calibration file");
  guard_cmd->add_option("--threshold", ga.threshold, "Threshold h, ignoring calibration");

  std::vector<std::string> argv_store{"famguard"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    ctx.resolve();
    if (*extract) return cmd_extract(ctx, ea, in, out);
    if (*score) return cmd_score(ctx, sa, in, out);
    if (*calibrate) return cmd_calibrate(ctx, ca, in, out);
    if (*evaluate_cmd) return cmd_evaluate(ctx, va, in, out, err);
    if (*guard_cmd) return cmd_guard(ctx, ga, out, err);
  } catch (const Error& e) {
    err << "famguard: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "famguard: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace famguard::cli
