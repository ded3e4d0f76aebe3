#pragma once
// Batch pipeline behind the command-line tool. Every stage writes into its own
// subdirectory of the output directory and records inputs and outputs, with
// checksums, in `<stage>/manifest.json`. A stage reads only the files listed
// in the previous stage's manifest.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jjtls/bayes.hpp"
#include "jjtls/config.hpp"
#include "jjtls/correlate.hpp"
#include "jjtls/io.hpp"
#include "jjtls/scenario.hpp"
#include "jjtls/stats.hpp"
#include "jjtls/svg.hpp"
#include "jjtls/sweep.hpp"

#ifndef JJTLS_VERSION
#define JJTLS_VERSION "0.0.0"
#endif

namespace jjtls::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = JJTLS_VERSION;

// Root-seed streams, one per stage.
inline constexpr std::uint64_t kSimulateStream = 1;
inline constexpr std::uint64_t kDetectStream = 2;
inline constexpr std::uint64_t kCorrelateStream = 4;

struct PipelineConfig {
  std::string origin;  // config path as given
  std::string text;    // raw bytes, hashed into every manifest
  fs::path base;       // relative paths resolve against this directory
  std::optional<std::uint64_t> seed;

  // simulate
  std::string scenario;
  double bias_start = 0.0, bias_stop = 0.0;
  int bias_steps = 0;
  std::optional<double> f_start, span;
  double span_kappa = 10.0;
  int n_points = 201;

  // detect
  std::string traces;  // directory of recorded trace CSVs; default is the simulate stage
  std::size_t calib_first = 0, calib_last = 19;
  std::vector<Exclusion> exclusions;
  int ensemble_size = 5000;

  // infer
  std::string detection;  // external detection summary; default is the detect stage
  std::optional<double> area, delta_f;
  std::string treatment, resonator_id;

  // correlate
  std::string densities, morphology;
  int repeats = 100;
  std::optional<double> ridge_alpha;
  std::vector<std::pair<std::string, std::vector<std::string>>> merges;

  fs::path resolve(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
  }

  std::uint64_t root_seed() const {
    require(seed.has_value(), origin + ": `seed` is required (config key or --seed)");
    return *seed;
  }

  std::string hash() const {
    return io::fnv1a64(text + "\nseed=" + (seed ? std::to_string(*seed) : std::string("none")));
  }

  static PipelineConfig parse(const std::string& text, const std::string& origin,
                              const fs::path& base) {
    std::istringstream in(text);
    const auto kv = KeyValueFile::parse(in, origin);
    kv.check_keys({"seed", "scenario", "bias_start", "bias_stop", "bias_steps", "f_start", "span",
                   "span_kappa", "n_points", "traces", "calibration", "exclude", "ensemble_size",
                   "detection", "area", "delta_f", "treatment", "resonator_id", "densities",
                   "morphology", "repeats", "ridge_alpha", "merge"});
    PipelineConfig c;
    c.origin = origin;
    c.text = text;
    c.base = base;
    auto opt = [&](const char* key) -> std::optional<double> {
      if (!kv.has(key)) return std::nullopt;
      return kv.get_double(key);
    };
    auto index_pair = [&](const std::vector<double>& row, const char* key) {
      require(row.size() == 2, origin + ": `" + key + "` expects two step indices");
      for (double v : row)
        require(v >= 0 && v == std::floor(v), origin + ": `" + key + "` indices must be non-negative integers");
      return std::pair{static_cast<std::size_t>(row[0]), static_cast<std::size_t>(row[1])};
    };
    if (kv.has("seed")) {
      const auto s = kv.get_int("seed");
      require(s >= 0, origin + ": seed must be non-negative");
      c.seed = static_cast<std::uint64_t>(s);
    }
    c.scenario = kv.get_string("scenario", "");
    c.bias_start = kv.get_double("bias_start", 0.0);
    c.bias_stop = kv.get_double("bias_stop", 0.0);
    c.bias_steps = static_cast<int>(kv.get_int("bias_steps", 0));
    c.f_start = opt("f_start");
    c.span = opt("span");
    c.span_kappa = kv.get_double("span_kappa", 10.0);
    c.n_points = static_cast<int>(kv.get_int("n_points", 201));
    c.traces = kv.get_string("traces", "");
    if (kv.has("calibration")) {
      auto [a, b] = index_pair(kv.get_list("calibration"), "calibration");
      c.calib_first = a;
      c.calib_last = b;
    }
    for (const auto& row : kv.get_rows("exclude")) {
      auto [a, b] = index_pair(row, "exclude");
      require(a <= b, origin + ": `exclude` expects first <= last");
      c.exclusions.push_back({a, b, ExclusionReason::Collision});
    }
    c.ensemble_size = static_cast<int>(kv.get_int("ensemble_size", 5000));
    c.detection = kv.get_string("detection", "");
    c.area = opt("area");
    c.delta_f = opt("delta_f");
    c.treatment = kv.get_string("treatment", "");
    c.resonator_id = kv.get_string("resonator_id", "");
    c.densities = kv.get_string("densities", "");
    c.morphology = kv.get_string("morphology", "");
    c.repeats = static_cast<int>(kv.get_int("repeats", 100));
    c.ridge_alpha = opt("ridge_alpha");
    for (const auto& e : kv.values("merge")) {
      std::istringstream ss(e.value);
      std::vector<std::string> tok;
      for (std::string t; ss >> t;) tok.push_back(t);
      require(tok.size() >= 3, origin + ":" + std::to_string(e.line) +
                                   ": `merge` expects a new label followed by at least two treatments");
      c.merges.push_back({tok[0], {tok.begin() + 1, tok.end()}});
    }

    require(!c.area || *c.area > 0, origin + ": `area` must be > 0");
    require(!c.delta_f || *c.delta_f > 0, origin + ": `delta_f` must be > 0");
    require(!c.span || *c.span > 0, origin + ": `span` must be > 0");
    require(c.span_kappa > 0, origin + ": `span_kappa` must be > 0");
    require(c.n_points >= 16, origin + ": `n_points` must be >= 16");
    require(c.ensemble_size >= 1000, origin + ": `ensemble_size` must be >= 1000");
    require(c.repeats >= 1, origin + ": `repeats` must be >= 1");
    require(!c.ridge_alpha || *c.ridge_alpha > 0, origin + ": `ridge_alpha` must be > 0");
    for (const auto* key : {&c.scenario, &c.traces, &c.detection, &c.densities, &c.morphology})
      require(key->empty() || fs::exists(c.resolve(*key)),
              origin + ": referenced file does not exist: " + *key);
    return c;
  }

  static PipelineConfig load(const fs::path& path) {
    const auto text = io::read_file(path);
    return parse(text, path.string(), path.parent_path());
  }
};

// ------------------------------------------------------------------ stages

/// Collects a stage's outputs and writes its manifest. Timings go to a
/// separate `timings.json` so that manifests stay byte-identical across runs.
class Stage {
 public:
  Stage(fs::path out, std::string name, const PipelineConfig& cfg)
      : out_(std::move(out)), name_(std::move(name)), cfg_(cfg), t0_(Clock::now()), last_(t0_) {
    fs::remove_all(out_ / name_);
    fs::create_directories(out_ / name_);
    input(fs::path(cfg.origin).filename().string(), cfg.text);
  }

  const std::string& name() const { return name_; }
  fs::path dir() const { return out_ / name_; }

  void input(const std::string& label, std::string_view bytes) {
    inputs_.push_back({{"path", label}, {"fnv1a64", io::fnv1a64(bytes)}, {"bytes", bytes.size()}});
  }

  /// Writes `rel` inside the stage directory and lists it in the manifest.
  void write(const std::string& rel, std::string_view bytes) {
    io::write_atomic(dir() / rel, bytes);
    outputs_.push_back({{"path", name_ + "/" + rel},
                        {"fnv1a64", io::fnv1a64(bytes)},
                        {"bytes", bytes.size()}});
  }

  void notice(const std::string& msg) {
    std::cerr << "notice: " << msg << "\n";
    notices_.push_back(msg);
  }

  void lap(const std::string& what) {
    const auto now = Clock::now();
    timings_[what] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

  void finish(const std::string& status = "ok", const std::string& error = "") {
    json m;
    m["stage"] = name_;
    m["version"] = kVersion;
    m["config_hash"] = cfg_.hash();
    m["seed"] = cfg_.seed ? json(*cfg_.seed) : json(nullptr);
    m["status"] = status;
    if (!error.empty()) m["error"] = error;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["notices"] = notices_;
    io::write_atomic(dir() / "manifest.json", m.dump(2) + "\n");
    timings_["total"] = std::chrono::duration<double>(Clock::now() - t0_).count();
    io::write_atomic(dir() / "timings.json", timings_.dump(2) + "\n");
  }

 private:
  using Clock = std::chrono::steady_clock;
  fs::path out_;
  std::string name_;
  const PipelineConfig& cfg_;
  json inputs_ = json::array(), outputs_ = json::array(), notices_ = json::array();
  json timings_ = json::object();
  Clock::time_point t0_, last_;
};

/// Outputs of an earlier stage, verified against its manifest checksums.
struct StageFiles {
  json manifest;
  std::vector<std::pair<std::string, std::string>> files;  // path relative to the output dir, bytes

  const std::string* find(const std::string& rel) const {
    for (const auto& [p, b] : files)
      if (p == rel) return &b;
    return nullptr;
  }

  const std::string& get(const std::string& rel) const {
    const auto* b = find(rel);
    if (!b) throw ValidationError("manifest does not list " + rel);
    return *b;
  }
};

inline StageFiles read_stage(const fs::path& out, const std::string& name, Stage* consumer) {
  const auto mpath = out / name / "manifest.json";
  if (!fs::exists(mpath))
    throw ValidationError("missing " + mpath.string() + ": run `jjtls " + name + "` first");
  const auto text = io::read_file(mpath);
  StageFiles s;
  try {
    s.manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(mpath.string() + ": malformed manifest: " + e.what());
  }
  if (s.manifest.value("status", "") != "ok")
    throw ValidationError(mpath.string() + ": the `" + name + "` stage did not complete");
  if (consumer) consumer->input(name + "/manifest.json", text);
  for (const auto& o : s.manifest.at("outputs")) {
    const auto rel = o.at("path").get<std::string>();
    auto bytes = io::read_file(out / rel);
    if (io::fnv1a64(bytes) != o.at("fnv1a64").get<std::string>())
      throw ValidationError((out / rel).string() + ": checksum differs from the `" + name +
                            "` manifest (file changed after it was written)");
    s.files.emplace_back(rel, std::move(bytes));
  }
  return s;
}

inline json params_json(const ResonatorParams& p) {
  return {{"f_r_GHz", p.f_r}, {"Q_l", p.Q_l}, {"Q_e", p.Q_e_mag}, {"theta", p.theta},
          {"A", p.A},         {"alpha", p.alpha}, {"phi_v", p.phi_v}, {"phi_0", p.phi_0}};
}

inline json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(origin + ": malformed JSON: " + e.what());
  }
}

// ----------------------------------------------------------------- simulate

inline SweepPlan plan_for(const PipelineConfig& cfg, const Scenario& sc) {
  require(cfg.bias_steps >= 2, cfg.origin + ": `bias_steps` must be >= 2");
  SweepPlan plan;
  plan.biases = bias_range(cfg.bias_start, cfg.bias_stop, cfg.bias_steps);
  const auto first = sc.tuned(plan.biases.front());
  plan.f_start = cfg.f_start.value_or(first.f_r);
  plan.span = cfg.span.value_or(cfg.span_kappa * first.kappa());
  plan.n_points = cfg.n_points;
  plan.calib_first = cfg.calib_first;
  plan.calib_last = cfg.calib_last;
  plan.manual = cfg.exclusions;
  plan.ensemble_size = cfg.ensemble_size;
  plan.validate();
  return plan;
}

inline std::string trace_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traces/step_%04zu.csv", i);
  return buf;
}

inline void run_simulate(const PipelineConfig& cfg, const fs::path& out) {
  require(!cfg.scenario.empty(), cfg.origin + ": `scenario` is required for simulate");
  const auto root = cfg.root_seed();
  Stage st(out, "simulate", cfg);
  const auto spath = cfg.resolve(cfg.scenario);
  const auto stext = io::read_file(spath);
  st.input(cfg.scenario, stext);
  std::istringstream in(stext);
  auto sc = Scenario::from_config(KeyValueFile::parse(in, spath.string()));
  sc.rng_seed = derive_seed(root, kSimulateStream, sc.rng_seed);
  const auto plan = plan_for(cfg, sc);
  const auto sweep = simulate_sweep(sc, plan);
  st.lap("sweep");
  for (std::size_t i = 0; i < sweep.size(); ++i) st.write(trace_name(i), io::format_trace(sweep.traces[i]));
  st.write("fits.csv", io::format_fits(sweep));
  st.finish();
}

// ------------------------------------------------------------------- detect

inline std::string format_exclusions(const SweepDataset& s) {
  std::string out = "first_step,last_step,reason\n";
  for (const auto& e : s.exclusions)
    out += std::to_string(e.first) + "," + std::to_string(e.last) + "," + to_string(e.reason) + "\n";
  return out;
}

inline std::string residual_plot(const DetectionRun& run) {
  svg::Plot p;
  p.title = "Fit residual along the tuning axis";
  p.xlabel = "frequency shift (kappa)";
  p.ylabel = "residual metric";
  svg::Series incl{{}, {}, "included", "#1f77b4", svg::Style::Markers};
  svg::Series excl{{}, {}, "excluded", "#bbbbbb", svg::Style::Markers};
  for (std::size_t i = 0; i < run.series.size(); ++i) {
    auto& s = run.series.excluded[i] ? excl : incl;
    s.x.push_back(run.series.shift[i]);
    s.y.push_back(run.series.residual[i]);
  }
  svg::Series ev{{}, {}, "detected", "#d62728", svg::Style::Markers};
  for (const auto& e : run.events) {
    ev.x.push_back(e.shift_position);
    ev.y.push_back(e.peak_residual);
  }
  p.series = {incl, excl, ev};
  p.hlines.push_back({run.calibration.threshold, "threshold"});
  return svg::render(p);
}

inline void run_detect(const PipelineConfig& cfg, const fs::path& out) {
  const auto root = cfg.root_seed();
  Stage st(out, "detect", cfg);
  std::vector<Trace> traces;
  if (!cfg.traces.empty()) {
    // recorded data: every *.csv in the directory, in file-name order
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(cfg.resolve(cfg.traces)))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto bytes = io::read_file(f);
      st.input((fs::path(cfg.traces) / f.filename()).generic_string(), bytes);
      traces.push_back(io::parse_trace(bytes, f.string()));
    }
    require(!traces.empty(), cfg.origin + ": no trace CSVs in " + cfg.traces);
  } else {
    const auto sim = read_stage(out, "simulate", &st);
    for (const auto& [rel, bytes] : sim.files)
      if (rel.rfind("simulate/traces/", 0) == 0) traces.push_back(io::parse_trace(bytes, (out / rel).string()));
    require(!traces.empty(), "simulate manifest lists no traces");
  }

  SweepPlan plan;
  for (const auto& t : traces) plan.biases.push_back(t.bias_current);
  plan.span = traces.front().freqs.back() - traces.front().freqs.front();
  plan.n_points = static_cast<int>(traces.front().size());
  plan.f_start = 0.5 * (traces.front().freqs.front() + traces.front().freqs.back());
  plan.calib_first = cfg.calib_first;
  plan.calib_last = cfg.calib_last;
  plan.manual = cfg.exclusions;
  plan.ensemble_size = cfg.ensemble_size;
  plan.validate();

  auto fitted = apply_exclusions(fit_recorded(std::move(traces)), plan.manual);
  st.lap("fit");
  st.write("fits.csv", io::format_fits(fitted));
  st.write("exclusions.csv", format_exclusions(fitted));
  try {
    const auto run = detect(std::move(fitted), plan, derive_seed(root, kDetectStream));
    st.lap("detect");
    st.write("residuals.csv", io::format_residual_series(run.series));
    st.write("events.csv", io::format_events(run.events));
    json cal;
    cal["threshold"] = run.calibration.threshold;
    cal["fp"] = run.calibration.fp;
    cal["fn"] = run.calibration.fn;
    cal["noise_sigma"] = run.interval.noise_sigma;
    cal["baseline_step"] = run.interval.baseline_index;
    cal["gauss_noise"] = {{"mean", run.calibration.gauss_noise.mean}, {"std", run.calibration.gauss_noise.std}};
    cal["gauss_tls"] = {{"mean", run.calibration.gauss_tls.mean}, {"std", run.calibration.gauss_tls.std}};
    cal["ensemble_size"] = plan.ensemble_size;
    cal["calibration_params"] = params_json(run.interval.params);
    st.write("calibration.json", cal.dump(2) + "\n");
    const auto rates = true_rates(run.calibration.fp, run.calibration.fn);
    json det;
    det["n_detected"] = run.events.size();
    det["bins"] = run.bins;
    det["delta_f_GHz"] = run.delta_f;
    det["kappa_GHz"] = run.series.kappa;
    det["rates"] = {{"fp", rates.fp}, {"fn", rates.fn}, {"FP", rates.FP}, {"FN", rates.FN}};
    st.write("detection.json", det.dump(2) + "\n");
    st.write("residuals.svg", residual_plot(run));
    st.finish();
  } catch (const std::exception& e) {
    st.finish("failed", e.what());
    throw;
  }
}

// -------------------------------------------------------------------- infer

inline constexpr const char* kRatesHint =
    "detection summary has no detector rates; run `jjtls detect` to calibrate them, or add "
    "\"rates\": {\"fp\": <p>, \"fn\": <p>} to the detection JSON";

inline std::string posterior_plot(const PosteriorDensity& post, const InferenceInput& in) {
  svg::Plot p;
  p.title = "Posterior for the number of defects";
  p.xlabel = "true defect count";
  p.ylabel = "probability";
  svg::Series pmf{{}, {}, "posterior", "#1f77b4", svg::Style::Markers};
  svg::Series lik{{}, {}, "likelihood (normalised)", "#ff7f0e", svg::Style::Line};
  std::vector<double> l(post.pmf.size());
  double z = 0;
  for (std::size_t k = 0; k < l.size(); ++k) z += l[k] = detection_likelihood(in.n_detected, static_cast<int>(k), in.bins, in.rates);
  // show the support only, not the whole 0..B axis
  std::size_t hi = 0;
  for (std::size_t k = 0; k < l.size(); ++k)
    if (post.pmf[k] > 1e-6 || (z > 0 && l[k] / z > 1e-6)) hi = k;
  hi = std::min(l.size() - 1, std::max<std::size_t>(hi + 2, 5));
  for (std::size_t k = 0; k <= hi; ++k) {
    pmf.x.push_back(static_cast<double>(k));
    pmf.y.push_back(post.pmf[k]);
    lik.x.push_back(static_cast<double>(k));
    lik.y.push_back(z > 0 ? l[k] / z : 0.0);
  }
  p.series = {pmf, lik};
  return svg::render(p);
}

inline void run_infer(const PipelineConfig& cfg, const fs::path& out) {
  Stage st(out, "infer", cfg);
  require(cfg.area.has_value(), cfg.origin + ": `area` (um^2) is required for infer");
  json det;
  std::optional<int> n_events;
  if (!cfg.detection.empty()) {
    const auto path = cfg.resolve(cfg.detection);
    const auto text = io::read_file(path);
    st.input(cfg.detection, text);
    det = parse_json(text, path.string());
  } else {
    const auto d = read_stage(out, "detect", &st);
    det = parse_json(d.get("detect/detection.json"), "detect/detection.json");
    n_events = static_cast<int>(io::parse_events(d.get("detect/events.csv"), "detect/events.csv").size());
  }
  if (!det.contains("rates") || !det["rates"].contains("fp") || !det["rates"].contains("fn"))
    throw ValidationError(kRatesHint);
  InferenceInput in;
  try {
    in.n_detected = det.at("n_detected").get<int>();
    in.bins = det.at("bins").get<int>();
    in.rates = true_rates(det["rates"]["fp"].get<double>(), det["rates"]["fn"].get<double>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("detection summary: ") + e.what());
  }
  require(!n_events || *n_events == in.n_detected, "detection.json and events.csv disagree on the event count");
  std::optional<double> delta_f = cfg.delta_f;
  if (!delta_f && det.contains("delta_f_GHz")) delta_f = det["delta_f_GHz"].get<double>();
  require(delta_f.has_value(), "infer: no swept range; set `delta_f` (GHz) in the config");
  require(*delta_f > 0, "infer: delta_f must be > 0");

  const auto post = posterior(in);
  const auto est = density(post, *delta_f, *cfg.area);
  st.write("posterior.csv", io::format_posterior(post));
  json e;
  e["n_detected"] = in.n_detected;
  e["bins"] = in.bins;
  e["rates"] = {{"fp", in.rates.fp}, {"fn", in.rates.fn}, {"FP", in.rates.FP}, {"FN", in.rates.FN}};
  e["lambda_star"] = post.lambda_star;
  e["mean_count"] = post.mean_count;
  e["count_ci68"] = {post.ci_lower, post.ci_upper};
  e["delta_f_GHz"] = *delta_f;
  e["area_um2"] = *cfg.area;
  e["rho"] = est.rho;
  e["ci68"] = {est.ci_lower, est.ci_upper};
  st.write("estimate.json", e.dump(2) + "\n");
  st.write("posterior.svg", posterior_plot(post, in));
  if (!cfg.treatment.empty()) {
    const io::DensityRow row{cfg.treatment, cfg.resonator_id.empty() ? "r0" : cfg.resonator_id,
                             est.rho, est.ci_lower, est.ci_upper};
    st.write("density_row.csv", io::format_densities({row}));
  }
  st.finish();
}

// ---------------------------------------------------------------- correlate

inline void treatment_statistics(const PipelineConfig& cfg, Stage& st, json& summary) {
  const auto path = cfg.resolve(cfg.densities);
  const auto text = io::read_file(path);
  st.input(cfg.densities, text);
  auto rows = io::parse_densities(text, path.string());
  std::map<std::string, std::string> rename;
  for (const auto& [label, members] : cfg.merges)
    for (const auto& m : members) rename[m] = label;
  std::map<std::string, std::vector<double>> groups;
  for (auto& r : rows) {
    if (auto it = rename.find(r.treatment); it != rename.end()) r.treatment = it->second;
    groups[r.treatment].push_back(r.rho);
  }
  require(!groups.empty(), path.string() + ": no density rows");

  std::string normal = "treatment,n,W,p\n", gam = "treatment,n,shape,scale,mean,mean_stderr\n";
  json jg = json::array();
  for (const auto& [t, v] : groups) {
    json g{{"treatment", t}, {"n", v.size()}};
    if (v.size() >= 3) {
      const auto sw = shapiro_wilk(v);
      normal += t + "," + std::to_string(v.size()) + "," + io::num(sw.statistic) + "," + io::num(sw.p) + "\n";
      g["shapiro_wilk"] = {{"W", sw.statistic}, {"p", sw.p}};
    } else {
      st.notice("treatment `" + t + "`: fewer than 3 resonators, Shapiro-Wilk skipped");
    }
    try {
      if (v.size() < 4) throw ValidationError("fewer than 4 resonators");
      const auto gf = gamma_fit(v);
      gam += t + "," + std::to_string(v.size()) + "," + io::num(gf.shape) + "," + io::num(gf.scale) + "," +
             io::num(gf.mean) + "," + io::num(gf.mean_stderr) + "\n";
      g["gamma"] = {{"shape", gf.shape}, {"scale", gf.scale}, {"mean", gf.mean}, {"mean_stderr", gf.mean_stderr}};
    } catch (const std::exception& e) {
      st.notice("treatment `" + t + "`: gamma fit skipped (" + e.what() + ")");
    }
    jg.push_back(g);
  }
  st.write("normality.csv", normal);
  st.write("gamma_fits.csv", gam);
  summary["treatments"] = jg;

  if (groups.size() < 2) {
    st.notice("single treatment `" + groups.begin()->first + "`: pairwise Kruskal-Wallis tests skipped");
    summary["kruskal_wallis"] = json::array();
  } else {
    std::string kw = "group_a,group_b,H,p\n";
    json jk = json::array();
    for (auto a = groups.begin(); a != groups.end(); ++a)
      for (auto b = std::next(a); b != groups.end(); ++b) {
        const auto r = kruskal_wallis({a->second, b->second});
        kw += a->first + "," + b->first + "," + io::num(r.statistic) + "," + io::num(r.p) + "\n";
        jk.push_back({{"group_a", a->first}, {"group_b", b->first}, {"H", r.statistic}, {"p", r.p}});
      }
    st.write("kruskal_wallis.csv", kw);
    summary["kruskal_wallis"] = jk;
  }

  svg::Plot p;
  p.title = "Defect density by treatment";
  p.ylabel = "density (1/GHz/um^2)";
  svg::Series s{{}, {}, "", "#1f77b4", svg::Style::Markers};
  int k = 0;
  for (const auto& [t, v] : groups) {
    for (double x : v) {
      s.x.push_back(k);
      s.y.push_back(x);
    }
    p.category_labels.push_back(t);
    ++k;
  }
  p.series = {s};
  st.write("densities.svg", svg::render(p));
}

inline void morphology_regression(const PipelineConfig& cfg, Stage& st, json& summary) {
  const auto root = cfg.root_seed();
  const auto path = cfg.resolve(cfg.morphology);
  const auto text = io::read_file(path);
  st.input(cfg.morphology, text);
  const auto m = io::parse_morphology(text, path.string());
  require(m.X.rows() >= 5, path.string() + ": need at least 5 devices");
  const auto p = static_cast<std::size_t>(m.X.cols());
  auto col = [&](std::size_t j) {
    return std::vector<double>(m.X.col(static_cast<Eigen::Index>(j)).data(),
                               m.X.col(static_cast<Eigen::Index>(j)).data() + m.X.rows());
  };
  const std::vector<double> dens(m.density.data(), m.density.data() + m.density.size());

  std::string pear = "metric,r,p,p_permutation\n";
  json jp = json::array();
  for (std::size_t j = 0; j < p; ++j) {
    const auto x = col(j);
    const auto r = pearson(x, dens);
    const double pp = pearson_permutation_p(x, dens, 9999, derive_seed(root, kCorrelateStream, 100 + j));
    pear += m.features[j] + "," + io::num(r.statistic) + "," + io::num(r.p) + "," + io::num(pp) + "\n";
    jp.push_back({{"metric", m.features[j]}, {"r", r.statistic}, {"p", r.p}, {"p_permutation", pp}});
  }
  st.write("pearson.csv", pear);
  summary["pearson"] = jp;

  std::string mat = "metric";
  for (const auto& f : m.features) mat += "," + f;
  mat += ",tls_density\n";
  for (std::size_t i = 0; i <= p; ++i) {
    const auto xi = i < p ? col(i) : dens;
    mat += i < p ? m.features[i] : std::string("tls_density");
    for (std::size_t j = 0; j <= p; ++j) mat += "," + io::num(pearson(xi, j < p ? col(j) : dens).statistic);
    mat += "\n";
  }
  st.write("pearson_matrix.csv", mat);

  const auto rep = analyze_features(m.X, m.density, cfg.repeats, derive_seed(root, kCorrelateStream, 0),
                                    cfg.ridge_alpha);
  json jr;
  jr["threshold"] = rep.selection.threshold;
  jr["ridge_alpha"] = rep.ridge_alpha;
  jr["loocv_r2"] = rep.loocv_r2;
  json jc = json::array();
  for (const auto& c : rep.selection.clusters) {
    json members = json::array();
    for (auto j : c.members) members.push_back(m.features[j]);
    jc.push_back({{"representative", m.features[c.representative]},
                  {"members", members},
                  {"target_spearman", c.target_correlation}});
  }
  jr["clusters"] = jc;
  json ji = json::array();
  std::string imp = "rank,feature,mean_r2_drop,std\n";
  svg::Plot ip;
  ip.title = "Permutation importance of cluster representatives";
  ip.ylabel = "drop in LOOCV R^2";
  svg::Series bars{{}, {}, "", "#2ca02c", svg::Style::Bars};
  for (std::size_t r = 0; r < rep.importances.size(); ++r) {
    const auto& f = rep.importances[r];
    imp += std::to_string(r + 1) + "," + m.features[f.feature] + "," + io::num(f.mean) + "," + io::num(f.std) + "\n";
    ji.push_back({{"feature", m.features[f.feature]}, {"mean", f.mean}, {"std", f.std}});
    bars.x.push_back(static_cast<double>(r));
    bars.y.push_back(f.mean);
    ip.category_labels.push_back(std::to_string(r + 1));
  }
  jr["importances"] = ji;
  json jl = json::array();
  for (const auto& mg : rep.selection.linkage)
    jl.push_back({{"a", mg.a}, {"b", mg.b}, {"height", mg.height}, {"size", mg.size}});
  jr["linkage"] = jl;
  ip.xlabel = "rank (see importance.csv)";
  ip.series = {bars};
  st.write("importance.csv", imp);
  st.write("regression.json", jr.dump(2) + "\n");
  st.write("importance.svg", svg::render(ip));
  summary["top_feature"] = rep.importances.empty() ? json(nullptr) : json(m.features[rep.importances.front().feature]);

  if (!rep.importances.empty()) {
    const auto top = rep.importances.front().feature;
    svg::Plot sp;
    sp.title = "Density against the top-ranked metric";
    sp.xlabel = m.features[top];
    sp.ylabel = "density (1/GHz/um^2)";
    sp.series = {{col(top), dens, "", "#9467bd", svg::Style::Markers}};
    st.write("top_feature.svg", svg::render(sp));
  }
}

inline void run_correlate(const PipelineConfig& cfg, const fs::path& out) {
  require(!cfg.densities.empty() || !cfg.morphology.empty(),
          cfg.origin + ": correlate needs `densities` and/or `morphology`");
  Stage st(out, "correlate", cfg);
  json summary;
  if (!cfg.densities.empty()) treatment_statistics(cfg, st, summary);
  if (!cfg.morphology.empty()) morphology_regression(cfg, st, summary);
  st.write("summary.json", summary.dump(2) + "\n");
  st.finish();
}

// ------------------------------------------------------------------- report

inline constexpr const char* kStageOrder[] = {"simulate", "detect", "infer", "correlate"};

inline void run_report(const PipelineConfig& cfg, const fs::path& out) {
  Stage st(out, "report", cfg);
  std::ostringstream md;
  md << "# Run report\n\nconfig hash `" << cfg.hash() << "`, version " << kVersion << "\n";
  json top;
  top["version"] = kVersion;
  top["config_hash"] = cfg.hash();
  top["seed"] = cfg.seed ? json(*cfg.seed) : json(nullptr);
  json stages = json::array();
  for (const char* name : kStageOrder) {
    if (!fs::exists(out / name / "manifest.json")) continue;
    const auto s = read_stage(out, name, &st);
    stages.push_back({{"stage", name},
                      {"manifest", std::string(name) + "/manifest.json"},
                      {"fnv1a64", io::fnv1a64(io::read_file(out / name / "manifest.json"))}});
    md << "\n## " << name << "\n\n" << s.files.size() << " output files.\n";
    if (std::string(name) == "detect") {
      const auto d = parse_json(s.get("detect/detection.json"), "detect/detection.json");
      md << "\n- events: " << d["n_detected"] << "\n- linewidth bins: " << d["bins"]
         << "\n- swept range: " << d["delta_f_GHz"] << " GHz\n- fp / fn: " << d["rates"]["fp"]
         << " / " << d["rates"]["fn"] << "\n";
    } else if (std::string(name) == "infer") {
      const auto e = parse_json(s.get("infer/estimate.json"), "infer/estimate.json");
      md << "\n- posterior mean count: " << e["mean_count"] << " (68% interval " << e["count_ci68"][0]
         << " to " << e["count_ci68"][1] << ")\n- density: " << e["rho"] << " per GHz per um^2 (68% interval "
         << e["ci68"][0] << " to " << e["ci68"][1] << ")\n";
    } else if (std::string(name) == "correlate") {
      const auto c = parse_json(s.get("correlate/summary.json"), "correlate/summary.json");
      if (c.contains("treatments")) {
        md << "\n| treatment | n | gamma mean | stderr | Shapiro-Wilk p |\n|---|---|---|---|---|\n";
        for (const auto& t : c["treatments"])
          md << "| " << t["treatment"].get<std::string>() << " | " << t["n"] << " | "
             << (t.contains("gamma") ? t["gamma"]["mean"].dump() : "-") << " | "
             << (t.contains("gamma") ? t["gamma"]["mean_stderr"].dump() : "-") << " | "
             << (t.contains("shapiro_wilk") ? t["shapiro_wilk"]["p"].dump() : "-") << " |\n";
      }
      if (c.contains("kruskal_wallis") && !c["kruskal_wallis"].empty()) {
        md << "\n| pair | H | p |\n|---|---|---|\n";
        for (const auto& k : c["kruskal_wallis"])
          md << "| " << k["group_a"].get<std::string>() << " vs " << k["group_b"].get<std::string>()
             << " | " << k["H"] << " | " << k["p"] << " |\n";
      }
      if (c.contains("top_feature") && !c["top_feature"].is_null())
        md << "\nMost important morphology metric: `" << c["top_feature"].get<std::string>() << "`\n";
    }
    const auto& notes = s.manifest["notices"];
    for (const auto& n : notes) md << "\n> " << n.get<std::string>() << "\n";
  }
  require(!stages.empty(), "report: no completed stage under " + out.string());
  st.write("report.md", md.str());
  st.finish();
  stages.push_back({{"stage", "report"},
                    {"manifest", "report/manifest.json"},
                    {"fnv1a64", io::fnv1a64(io::read_file(out / "report" / "manifest.json"))}});
  top["stages"] = stages;
  io::write_atomic(out / "manifest.json", top.dump(2) + "\n");
}

// ------------------------------------------------------------------- schema

inline std::string schema_text() {
  std::string s;
  s += "pipeline config (key = value, '#' comments; paths relative to the config file)\n"
       "  seed = <non-negative integer>                required for simulate, detect, correlate\n"
       "  scenario = <scenario file>                   simulate\n"
       "  bias_start, bias_stop = <mA>; bias_steps = <n >= 2>\n"
       "  f_start = <GHz>                              default: tuned frequency at bias_start\n"
       "  span = <GHz> | span_kappa = <linewidths>     default span_kappa = 10\n"
       "  n_points = <points per trace>                default 201\n"
       "  traces = <directory of trace CSVs>           detect recorded data instead of simulate output\n"
       "  calibration = <first step> <last step>       default 0 19\n"
       "  exclude = <first step> <last step>           repeatable, collision intervals\n"
       "  ensemble_size = <n >= 1000>                  default 5000\n"
       "  area = <um^2>                                required for infer\n"
       "  delta_f = <GHz>                              default: swept range from detect\n"
       "  detection = <detection JSON>                 infer from an external detection summary\n"
       "  treatment, resonator_id = <labels>           infer writes a densities row\n"
       "  densities = <CSV>; morphology = <CSV>        correlate\n"
       "  merge = <label> <treatment> <treatment> ...  repeatable, pools treatments\n"
       "  repeats = <permutation repeats>              default 100\n"
       "  ridge_alpha = <alpha > 0>                    default: chosen by LOOCV\n\n";
  s += kScenarioSchema;
  s += "\ntrace CSV (simulate/traces/step_NNNN.csv, one bias step per file)\n"
       "  current_mA,freq_GHz,re_s21,im_s21\n"
       "\nfit CSV (simulate/fits.csv, detect/fits.csv)\n"
       "  current_mA,f0_GHz,Ql,Qe,theta,residual_metric,converged\n"
       "\nexclusions CSV (detect/exclusions.csv)\n"
       "  first_step,last_step,reason        reason: collision | past-maximum | manual\n"
       "\nresidual series CSV (detect/residuals.csv)\n"
       "  shift_kappa,residual\n"
       "\nevents CSV (detect/events.csv)\n"
       "  shift_kappa,freq_GHz,peak_residual\n"
       "\ndetection JSON (detect/detection.json)\n"
       "  {\"n_detected\": int, \"bins\": int, \"delta_f_GHz\": num, \"kappa_GHz\": num,\n"
       "   \"rates\": {\"fp\": num, \"fn\": num, \"FP\": num, \"FN\": num}}\n"
       "\nposterior CSV (infer/posterior.csv)\n"
       "  n_t,prob\n"
       "\nestimate JSON (infer/estimate.json)\n"
       "  {\"rho\": num, \"ci68\": [lo, hi], \"lambda_star\": num, \"mean_count\": num,\n"
       "   \"count_ci68\": [lo, hi], \"n_detected\", \"bins\", \"rates\", \"delta_f_GHz\", \"area_um2\"}\n"
       "\ndensities CSV\n"
       "  treatment,resonator_id,rho,ci_lo,ci_hi\n"
       "\nmorphology CSV (one row per device, lengths in nm, density in 1/GHz/um^2)\n  ";
  for (std::size_t i = 0; i < io::kMorphologyHeader.size(); ++i)
    s += (i ? "," : "") + io::kMorphologyHeader[i];
  s += "\n\ncorrelate outputs\n"
       "  normality.csv      treatment,n,W,p\n"
       "  gamma_fits.csv     treatment,n,shape,scale,mean,mean_stderr\n"
       "  kruskal_wallis.csv group_a,group_b,H,p\n"
       "  pearson.csv        metric,r,p,p_permutation\n"
       "  importance.csv     rank,feature,mean_r2_drop,std\n"
       "  regression.json    clusters, threshold, ridge_alpha, loocv_r2, importances, linkage\n"
       "\nmanifest JSON (<stage>/manifest.json)\n"
       "  {\"stage\", \"version\", \"config_hash\", \"seed\", \"status\", \"inputs\": [{path, fnv1a64, bytes}],\n"
       "   \"outputs\": [{path, fnv1a64, bytes}], \"notices\": [...]}; wall times in <stage>/timings.json\n";
  return s;
}

}  // namespace jjtls::pipeline
