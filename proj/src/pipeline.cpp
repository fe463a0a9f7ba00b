#include "stochens/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>

#include "stochens/errors.hpp"
#include "stochens/store.hpp"

namespace stochens {

namespace {

using nlohmann::json;

// ------------------------------------------------------------ config parse

// Reads fields of one JSON object, recording type errors and unknown keys
// instead of stopping at the first problem.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string where, std::vector<std::string>& errors)
      : obj_(obj), where_(std::move(where)), errors_(errors) {
    if (!obj_.is_object()) errors_.push_back(label("") + "expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back(label(key) + "has the wrong type (" + obj_.at(key).dump() + ")");
    }
  }

  template <class T>
  void read(const char* key, std::optional<T>& out) {
    known_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key) || obj_.at(key).is_null()) return;
    T v{};
    read(key, v);
    out = v;
  }

  const json* child(const char* key) {
    known_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key) || obj_.at(key).is_null()) return nullptr;
    return &obj_.at(key);
  }

  bool has(const char* key) const { return obj_.is_object() && obj_.contains(key); }

  void finish() {
    if (!obj_.is_object()) return;
    for (const auto& item : obj_.items()) {
      if (!known_.count(item.key())) errors_.push_back(label(item.key()) + "unknown field");
    }
  }

  std::string label(const std::string& key) const {
    return (where_.empty() ? key : key.empty() ? where_ : where_ + "." + key) + ": ";
  }

 private:
  const json& obj_;
  std::string where_;
  std::vector<std::string>& errors_;
  std::set<std::string> known_;
};

template <class F>
void check(std::vector<std::string>& errors, const std::string& where, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    errors.push_back(where + ": " + e.what());
  }
}

StochasticSpec default_stochastic(const std::string& method) {
  StochasticSpec s;
  if (method == "se1") {
    s.kind = StochasticKind::Dropout;
    s.hidden_drop_rate = 0.1;
  } else if (method == "se2") {
    s.kind = StochasticKind::DropConnect;
    s.hidden_drop_rate = 0.1;
  } else if (method == "se3") {
    s.kind = StochasticKind::NPExchange;
  }
  return s;
}

const std::set<std::string> kMethods{"regular", "multiswa", "se1", "se2", "se3", "hmc"};

// ------------------------------------------------------------------ misc

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path output_root(const ExperimentConfig& c, const RunOptions& o) {
  return fs::path(o.output_dir.value_or(c.output_dir));
}

struct LoadedData {
  fs::path dir;
  Dataset train;
  Dataset test;
  Matrix grid_in;
  Matrix grid_out;
};

LoadedData load_data(const ExperimentConfig& c, const RunOptions& o) {
  LoadedData d;
  d.dir = c.dataset.path ? fs::path(*c.dataset.path) : output_root(c, o) / "data";
  if (!fs::exists(d.dir / "manifest.json")) {
    throw ParseError(d.dir.string() + ": no dataset manifest; run gen-data first or set dataset.path");
  }
  verify_manifest(d.dir);
  d.train = load_dataset_csv(d.dir / "train.csv");
  d.test = load_dataset_csv(d.dir / "test.csv");
  d.grid_in = load_points_csv(d.dir / "grid_in.csv");
  d.grid_out = load_points_csv(d.dir / "grid_out.csv");
  return d;
}

json manifest_ref(const fs::path& dir) {
  return {{"path", dir.string()}, {"manifest_sha256", sha256_file(dir / "manifest.json")}};
}

PredictOptions predict_options(const ExperimentConfig& c, const RunOptions& o) {
  PredictOptions p;
  p.inferences_per_member = c.eval.inferences_per_member;
  p.seed = derive_seed(c.seed, {stream::kPredict});
  p.jobs = o.jobs;
  return p;
}

std::string fixed(double v, int precision) {
  if (!std::isfinite(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- config

EnsembleKind ExperimentConfig::ensemble_kind() const {
  if (is_hmc()) throw ConfigError("method hmc is not an ensemble");
  return ensemble_kind_from_string(method);
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  FieldReader top(j, "", errors);

  int schema = -1;
  top.read("schema_version", schema);
  if (schema != kSchemaVersion) {
    errors.push_back("schema_version: expected " + std::to_string(kSchemaVersion) +
                     (top.has("schema_version") ? ", got " + std::to_string(schema) : ", field missing"));
  }
  top.read("seed", c.seed);
  top.read("method", c.method);
  if (!kMethods.count(c.method)) {
    errors.push_back("method: '" + c.method + "' is not one of regular, multiswa, se1, se2, se3, hmc");
  }
  top.read("output_dir", c.output_dir);
  top.read("K", c.K);
  top.read("reference", c.reference);

  if (const json* d = top.child("dataset")) {
    FieldReader r(*d, "dataset", errors);
    std::string variant;
    r.read("variant", variant);
    if (!variant.empty()) {
      if (variant.size() == 1) {
        c.dataset.toy.variant = variant[0];
      } else {
        errors.push_back("dataset.variant: expected a, b or c");
      }
    }
    check(errors, "dataset.variant", [&] { c.dataset.toy.mixing = ToySpec::preset_mixing(c.dataset.toy.variant); });
    r.read("mixing", c.dataset.toy.mixing);
    r.read("n_per_class", c.dataset.toy.n_per_class);
    r.read("n_test_per_class", c.dataset.n_test_per_class);
    std::optional<std::uint64_t> data_seed;
    r.read("seed", data_seed);
    c.dataset.toy.seed = data_seed.value_or(c.seed);
    r.read("path", c.dataset.path);
    r.finish();
  } else {
    c.dataset.toy.seed = c.seed;
  }
  check(errors, "dataset", [&] { c.dataset.toy.validate(); });
  if (c.dataset.n_test_per_class < 1) errors.push_back("dataset.n_test_per_class: must be >= 1");

  if (const json* p = top.child("prior")) {
    FieldReader r(*p, "prior", errors);
    r.read("lambda", c.prior.lambda);
    r.finish();
  }
  check(errors, "prior", [&] { c.prior.validate(); });

  if (const json* a = top.child("arch")) {
    std::vector<std::size_t> widths;
    try {
      widths = a->get<std::vector<std::size_t>>();
      c.arch = MLPArch{widths};
      check(errors, "arch", [&] { c.arch.validate(); });
      if (c.arch.input_width() != 2) errors.push_back("arch: toy inputs are 2-dimensional");
      if (c.arch.num_classes() != 2) errors.push_back("arch: toy tasks have 2 classes");
    } catch (const json::exception&) {
      errors.push_back("arch: expected a list of layer widths");
    }
  }
  if (c.K < 1) errors.push_back("K: must be >= 1");

  if (const json* t = top.child("train")) {
    FieldReader r(*t, "train", errors);
    std::string optimizer = to_string(c.train.optimizer), schedule = to_string(c.train.schedule);
    r.read("optimizer", optimizer);
    r.read("schedule", schedule);
    check(errors, "train.optimizer", [&] { c.train.optimizer = optimizer_kind_from_string(optimizer); });
    check(errors, "train.schedule", [&] { c.train.schedule = schedule_kind_from_string(schedule); });
    r.read("learning_rate", c.train.learning_rate);
    r.read("milestones", c.train.milestones);
    r.read("decay", c.train.decay);
    r.read("epochs", c.train.epochs);
    r.read("batch_size", c.train.batch_size);
    r.read("momentum", c.train.momentum);
    if (const json* s = r.child("swa")) {
      SwaConfig swa;
      swa.start_epoch = c.train.epochs / 2;
      FieldReader sr(*s, "train.swa", errors);
      sr.read("start_epoch", swa.start_epoch);
      sr.read("cycle_length", swa.cycle_length);
      sr.read("snapshot_interval", swa.snapshot_interval);
      sr.read("swa_lr", swa.swa_lr);
      sr.finish();
      c.train.swa = swa;
    }
    r.finish();
  }
  check(errors, "train", [&] { c.train.validate(); });

  c.stochastic = default_stochastic(c.method);
  if (const json* s = top.child("stochastic")) {
    FieldReader r(*s, "stochastic", errors);
    std::optional<std::string> kind;
    r.read("kind", kind);
    if (kind) {
      check(errors, "stochastic.kind", [&] {
        if (stochastic_kind_from_string(*kind) != c.stochastic.kind) {
          throw ConfigError("'" + *kind + "' does not match method " + c.method);
        }
      });
    }
    r.read("hidden_drop_rate", c.stochastic.hidden_drop_rate);
    r.read("output_drop_rate", c.stochastic.output_drop_rate);
    r.read("applies_to_output_layer", c.stochastic.applies_to_output_layer);
    r.finish();
  }
  check(errors, "stochastic", [&] { c.stochastic.validate(); });

  if (const json* m = top.child("multiswa")) {
    FieldReader r(*m, "multiswa", errors);
    r.read("swa_lrs", c.multiswa.swa_lrs);
    r.read("start_fractions", c.multiswa.start_fractions);
    r.finish();
  }
  if (c.multiswa.swa_lrs.empty() || c.multiswa.start_fractions.empty()) {
    errors.push_back("multiswa: grid lists must be nonempty");
  }
  for (double lr : c.multiswa.swa_lrs) {
    if (!(lr > 0.0)) errors.push_back("multiswa.swa_lrs: entries must be > 0");
  }
  for (double f : c.multiswa.start_fractions) {
    if (!(f >= 0.0 && f < 1.0)) errors.push_back("multiswa.start_fractions: entries must lie in [0, 1)");
  }

  if (const json* h = top.child("hmc")) {
    FieldReader r(*h, "hmc", errors);
    r.read("n_chains", c.hmc.n_chains);
    r.read("n_warmup", c.hmc.n_warmup);
    r.read("n_samples", c.hmc.n_samples);
    r.read("target_accept", c.hmc.target_accept);
    r.read("max_tree_depth", c.hmc.max_tree_depth);
    r.read("init_scale", c.hmc.init_scale);
    r.read("divergence_threshold", c.hmc.divergence_threshold);
    r.finish();
  }
  c.hmc.seed = c.seed;
  check(errors, "hmc", [&] { c.hmc.validate(); });

  if (const json* e = top.child("eval")) {
    FieldReader r(*e, "eval", errors);
    r.read("in_resolution", c.eval.in_resolution);
    r.read("out_resolution", c.eval.out_resolution);
    r.read("inferences_per_member", c.eval.inferences_per_member);
    r.read("ece_bins", c.eval.ece_bins);
    r.finish();
  }
  if (c.eval.in_resolution < 2) errors.push_back("eval.in_resolution: must be >= 2");
  if (c.eval.out_resolution < 2) errors.push_back("eval.out_resolution: must be >= 2");
  if (c.eval.inferences_per_member < 1) errors.push_back("eval.inferences_per_member: must be >= 1");
  if (c.eval.ece_bins < 1) errors.push_back("eval.ece_bins: must be >= 1");

  if (const json* cmp = top.child("compare")) {
    if (!cmp->is_array()) {
      errors.push_back("compare: expected a list of {label, path}");
    } else {
      for (std::size_t i = 0; i < cmp->size(); ++i) {
        FieldReader r((*cmp)[i], "compare[" + std::to_string(i) + "]", errors);
        CompareEntry e;
        r.read("label", e.label);
        r.read("path", e.path);
        r.finish();
        if (e.path.empty()) errors.push_back("compare[" + std::to_string(i) + "].path: required");
        c.compare.push_back(e);
      }
    }
  }
  top.finish();

  if (!errors.empty()) {
    std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return c;
}

json ExperimentConfig::to_json() const {
  json dataset = {{"variant", std::string(1, this->dataset.toy.variant)},
                  {"mixing", this->dataset.toy.mixing},
                  {"n_per_class", this->dataset.toy.n_per_class},
                  {"n_test_per_class", this->dataset.n_test_per_class},
                  {"seed", this->dataset.toy.seed}};
  if (this->dataset.path) dataset["path"] = *this->dataset.path;
  json train_j = {{"optimizer", to_string(train.optimizer)},
                  {"learning_rate", train.learning_rate},
                  {"schedule", to_string(train.schedule)},
                  {"milestones", train.milestones},
                  {"decay", train.decay},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"momentum", train.momentum}};
  if (train.swa) {
    train_j["swa"] = {{"start_epoch", train.swa->start_epoch},
                      {"cycle_length", train.swa->cycle_length},
                      {"snapshot_interval", train.swa->snapshot_interval},
                      {"swa_lr", train.swa->swa_lr}};
  }
  json j = {{"schema_version", kSchemaVersion},
            {"seed", seed},
            {"method", method},
            {"output_dir", output_dir},
            {"dataset", dataset},
            {"prior", {{"lambda", prior.lambda}}},
            {"arch", arch.widths},
            {"K", K},
            {"train", train_j},
            {"stochastic",
             {{"kind", to_string(stochastic.kind)},
              {"hidden_drop_rate", stochastic.hidden_drop_rate},
              {"output_drop_rate", stochastic.output_drop_rate},
              {"applies_to_output_layer", stochastic.applies_to_output_layer}}},
            {"multiswa", {{"swa_lrs", multiswa.swa_lrs}, {"start_fractions", multiswa.start_fractions}}},
            {"hmc",
             {{"n_chains", hmc.n_chains},
              {"n_warmup", hmc.n_warmup},
              {"n_samples", hmc.n_samples},
              {"target_accept", hmc.target_accept},
              {"max_tree_depth", hmc.max_tree_depth},
              {"init_scale", hmc.init_scale},
              {"divergence_threshold", hmc.divergence_threshold}}},
            {"eval",
             {{"in_resolution", eval.in_resolution},
              {"out_resolution", eval.out_resolution},
              {"inferences_per_member", eval.inferences_per_member},
              {"ece_bins", eval.ece_bins}}}};
  if (reference) j["reference"] = *reference;
  if (!compare.empty()) {
    json list = json::array();
    for (const auto& e : compare) list.push_back({{"label", e.label}, {"path", e.path}});
    j["compare"] = list;
  }
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  json j = read_json(path);
  if (const char* env = std::getenv("STOCHENS_SEED")) {
    std::uint64_t seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(env, &used);
      if (used != std::string(env).size() || std::string(env).front() == '-') throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("STOCHENS_SEED must be a non-negative integer, got '") + env + "'");
    }
    if (j.is_object()) j["seed"] = seed;
  }
  return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------- stores

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& config,
                    const std::vector<std::string>& artifacts, const json& timings, const json& inputs) {
  json hashes = json::object();
  for (const auto& name : artifacts) hashes[name] = sha256_file(dir / name);
  write_json(dir / "manifest.json", {{"tool", "stochens"},
                                     {"version", kToolVersion},
                                     {"command", command},
                                     {"config", config.to_json()},
                                     {"artifacts", hashes},
                                     {"inputs", inputs},
                                     {"timings_seconds", timings}});
}

json verify_manifest(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw ParseError(mpath.string() + ": missing manifest");
  const json m = read_json(mpath);
  if (!m.contains("artifacts") || !m.at("artifacts").is_object()) {
    throw ParseError(mpath.string() + ": manifest lacks an artifact table");
  }
  for (const auto& item : m.at("artifacts").items()) {
    const fs::path file = dir / item.key();
    if (!fs::exists(file)) throw ParseError(file.string() + ": listed in manifest but missing");
    if (sha256_file(file) != item.value().get<std::string>()) {
      throw ParseError(file.string() + ": SHA-256 does not match manifest (corrupt or modified artifact)");
    }
  }
  return m;
}

void save_predictions_csv(const fs::path& path, const PredictiveDistribution& pd) {
  if (pd.points.rows() != pd.probs.rows() || pd.points.cols() != 2 || pd.probs.cols() != 2) {
    throw ShapeError("prediction export expects 2D points and 2 classes");
  }
  const Vector h = predictive_entropy(pd);
  const Vector mi = pd.has_members() ? mutual_information(pd) : Vector::Zero(pd.probs.rows());
  std::string out = "x0,x1,p_class0,p_class1,entropy,mi\n";
  out.reserve(static_cast<std::size_t>(pd.probs.rows()) * 120);
  for (Eigen::Index i = 0; i < pd.probs.rows(); ++i) {
    out += format_double(pd.points(i, 0)) + "," + format_double(pd.points(i, 1)) + "," +
           format_double(pd.probs(i, 0)) + "," + format_double(pd.probs(i, 1)) + "," + format_double(h[i]) +
           "," + format_double(mi[i]) + "\n";
  }
  write_text(path, out);
}

PredictiveDistribution load_predictions_csv(const fs::path& path, std::size_t n_members) {
  const CsvTable t = read_numeric_csv(path, "x0,x1,p_class0,p_class1,entropy,mi");
  PredictiveDistribution pd;
  pd.points = t.values.leftCols(2);
  pd.probs = t.values.middleCols(2, 2);
  pd.n_members = n_members;
  if (n_members >= 2) pd.member_entropy_mean = predictive_entropy(pd.probs) - t.values.col(5);
  try {
    pd.validate();
  } catch (const std::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return pd;
}

PredictionSet load_prediction_set(const fs::path& dir) {
  verify_manifest(dir);
  const json meta = read_json(dir / "meta.json");
  const auto n = meta.at("n_members").get<std::size_t>();
  return {load_predictions_csv(dir / "test.csv", n), load_predictions_csv(dir / "grid_in.csv", n),
          load_predictions_csv(dir / "grid_out.csv", n)};
}

// -------------------------------------------------------------- commands

fs::path cmd_gen_data(const ExperimentConfig& c, const RunOptions& o) {
  if (c.dataset.path) throw ConfigError("gen-data: dataset.path is set; nothing to generate");
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = output_root(c, o) / "data";
  fs::create_directories(dir);
  ToySpec test_spec = c.dataset.toy;
  test_spec.n_per_class = c.dataset.n_test_per_class;
  save_dataset_csv(dir / "train.csv", generate_toy(c.dataset.toy, stream::kTrainData));
  save_dataset_csv(dir / "test.csv", generate_toy(test_spec, stream::kTestData));
  save_points_csv(dir / "grid_in.csv", eval_grid(kDomainIn, c.eval.in_resolution).points);
  save_points_csv(dir / "grid_out.csv", eval_grid(kDomainOut, c.eval.out_resolution).points);
  write_manifest(dir, "gen-data", c, {"train.csv", "test.csv", "grid_in.csv", "grid_out.csv"},
                 {{"total", seconds_since(t0)}});
  return dir;
}

fs::path cmd_train(const ExperimentConfig& c, const RunOptions& o) {
  if (c.is_hmc()) throw ConfigError("train: method hmc is sampled with the hmc command");
  const auto t0 = std::chrono::steady_clock::now();
  const LoadedData data = load_data(c, o);
  const fs::path dir = output_root(c, o) / "model";
  json inputs = {{"data", manifest_ref(data.dir)}};
  json extra = json::object();
  EnsembleModel model;
  const EnsembleKind kind = c.ensemble_kind();
  if (kind == EnsembleKind::MultiSWA && c.reference) {
    const fs::path ref_dir(*c.reference);
    const PredictionSet ref = load_prediction_set(ref_dir);
    inputs["reference"] = manifest_ref(ref_dir);
    MultiSwaSearch s = multiswa_search(data.train, c.K, c.train, c.prior, c.arch, c.seed, ref.grid_in.points,
                                       ref.grid_in, c.multiswa.swa_lrs, c.multiswa.start_fractions, o.jobs);
    json cands = json::array();
    for (const auto& cand : s.candidates) {
      cands.push_back({{"swa_lr", cand.swa_lr}, {"start_fraction", cand.start_fraction}, {"agreement", cand.agreement}});
    }
    extra = {{"multiswa_candidates", cands}, {"selected", s.best_index}};
    model = std::move(s.best);
  } else {
    if (kind == EnsembleKind::MultiSWA && !c.train.swa) {
      throw ConfigError("train: multiswa needs train.swa or a reference for the grid search");
    }
    model = train_ensemble(data.train, kind, c.stochastic, c.K, c.train, c.prior, c.arch, c.seed, o.jobs);
  }
  save_model(dir.string(), model);
  if (!extra.empty()) write_json(dir / "search.json", extra);
  std::vector<std::string> artifacts{"meta.json", "members.bin"};
  if (!extra.empty()) artifacts.push_back("search.json");
  write_manifest(dir, "train", c, artifacts, {{"total", seconds_since(t0)}}, inputs);
  return dir;
}

fs::path cmd_hmc(const ExperimentConfig& c, const RunOptions& o) {
  if (!c.is_hmc()) throw ConfigError("hmc: config method is '" + c.method + "', expected hmc");
  const auto t0 = std::chrono::steady_clock::now();
  const LoadedData data = load_data(c, o);
  const fs::path dir = output_root(c, o) / "posterior";
  const PosteriorSamples post = run_hmc(data.train, c.prior, c.arch, c.hmc, o.jobs);
  save_posterior(dir.string(), post);
  for (const auto& chain : post.chains) {
    if (chain.divergences > 0) {
      std::cerr << "warning: chain " << chain.chain_id << " had " << chain.divergences
                << " divergent transitions\n";
    }
  }
  write_manifest(dir, "hmc", c, {"meta.json", "samples.bin"}, {{"total", seconds_since(t0)}},
                 {{"data", manifest_ref(data.dir)}});
  return dir;
}

fs::path cmd_predict(const ExperimentConfig& c, const RunOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const LoadedData data = load_data(c, o);
  const fs::path root = output_root(c, o);
  const fs::path dir = root / "predictions";
  const PredictOptions po = predict_options(c, o);
  const fs::path source = root / (c.is_hmc() ? "posterior" : "model");
  verify_manifest(source);
  std::function<PredictiveDistribution(const Matrix&)> run;
  std::size_t n_members = 0;
  PosteriorSamples post;
  EnsembleModel model;
  if (c.is_hmc()) {
    post = load_posterior(source.string());
    n_members = post.samples.size();
    run = [&](const Matrix& pts) { return predict(post, pts, po); };
  } else {
    model = load_model(source.string());
    n_members = model.size() * static_cast<std::size_t>(po.inferences_per_member);
    run = [&](const Matrix& pts) { return predict(model, pts, po); };
  }
  json timings = json::object();
  for (const auto& [name, pts] : {std::pair<std::string, const Matrix*>{"test", &data.test.points},
                                  {"grid_in", &data.grid_in},
                                  {"grid_out", &data.grid_out}}) {
    const auto t = std::chrono::steady_clock::now();
    save_predictions_csv(dir / (name + ".csv"), run(*pts));
    timings[name] = seconds_since(t);
  }
  write_json(dir / "meta.json", {{"source", c.is_hmc() ? "posterior" : "model"},
                                 {"method", c.method},
                                 {"n_members", n_members},
                                 {"inferences_per_member", c.is_hmc() ? 1 : po.inferences_per_member},
                                 {"predict_seed", po.seed},
                                 {"entropy_units", "nats"}});
  timings["total"] = seconds_since(t0);
  write_manifest(dir, "predict", c, {"test.csv", "grid_in.csv", "grid_out.csv", "meta.json"}, timings,
                 {{"data", manifest_ref(data.dir)}, {"source", manifest_ref(source)}});
  return dir;
}

fs::path cmd_evaluate(const ExperimentConfig& c, const RunOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const LoadedData data = load_data(c, o);
  const fs::path root = output_root(c, o);
  const fs::path pred_dir = root / "predictions";
  const PredictionSet pred = load_prediction_set(pred_dir);
  json inputs = {{"data", manifest_ref(data.dir)}, {"predictions", manifest_ref(pred_dir)}};
  EvaluationInputs in;
  in.test = pred.test;
  in.test_labels = data.test.labels;
  in.grid_in = pred.grid_in;
  in.grid_out = pred.grid_out;
  in.ece_bins = c.eval.ece_bins;
  if (c.reference) {
    const fs::path ref_dir(*c.reference);
    PredictionSet ref = load_prediction_set(ref_dir);
    in.reference_test = std::move(ref.test);
    in.reference_in = std::move(ref.grid_in);
    in.reference_out = std::move(ref.grid_out);
    inputs["reference"] = manifest_ref(ref_dir);
  }
  const MetricsReport report = evaluate(in);
  const fs::path dir = root / "metrics";
  write_json(dir / "metrics.json", report.to_json());
  write_calibration_csv(dir / "calibration.csv", report.calibration_curve);
  write_manifest(dir, "evaluate", c, {"metrics.json", "calibration.csv"}, {{"total", seconds_since(t0)}}, inputs);
  return dir;
}

std::string compare_table_csv(const std::vector<CompareRow>& rows) {
  const auto num = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string out =
      "label,accuracy,loss,ece,odd_auroc,"
      "in_entropy_diff,in_mi_diff,in_agreement,in_variance,"
      "out_entropy_diff,out_mi_diff,out_agreement,out_variance\n";
  for (const auto& r : rows) {
    const auto& m = r.report;
    out += r.label + "," + format_double(m.accuracy) + "," + format_double(m.loss) + "," + format_double(m.ece) +
           "," + num(m.odd_auroc);
    for (const auto* cmp : {&m.in_domain, &m.out_of_domain}) {
      if (*cmp) {
        out += "," + format_double((*cmp)->mean_abs_entropy_diff) + "," + num((*cmp)->mean_abs_mi_diff) + "," +
               format_double((*cmp)->agreement) + "," + format_double((*cmp)->variance);
      } else {
        out += ",,,,";
      }
    }
    out += "\n";
  }
  return out;
}

std::string compare_table_text(const std::vector<CompareRow>& rows) {
  // Entropy and MI differences in 1e-3 nats, agreement in percent, variance in 1e-2.
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::ostringstream os;
  const auto pad = [](const std::string& s, std::size_t n) { return s + std::string(n > s.size() ? n - s.size() : 0, ' '); };
  const auto rpad = [](const std::string& s, std::size_t n) { return std::string(n > s.size() ? n - s.size() : 0, ' ') + s; };
  os << pad("", w) << " | " << pad("D_in", 36) << " | " << "D_out\n";
  os << pad("Method", w) << " | " << rpad("Entropy", 8) << rpad("MI", 9) << rpad("Agr", 9) << rpad("Var", 10)
     << " | " << rpad("Entropy", 8) << rpad("MI", 9) << rpad("Agr", 9) << rpad("Var", 10) << "\n";
  os << pad("", w) << " | " << rpad("(1e-3)", 8) << rpad("(1e-3)", 9) << rpad("(%)", 9) << rpad("(1e-2)", 10)
     << " | " << rpad("(1e-3)", 8) << rpad("(1e-3)", 9) << rpad("(%)", 9) << rpad("(1e-2)", 10) << "\n";
  os << std::string(w + 3 + 36 + 3 + 36, '-') << "\n";
  for (const auto& r : rows) {
    os << pad(r.label, w);
    for (const auto* cmp : {&r.report.in_domain, &r.report.out_of_domain}) {
      os << " | ";
      if (*cmp) {
        const ReferenceComparison& x = **cmp;
        os << rpad(fixed(1e3 * x.mean_abs_entropy_diff, 2), 8)
           << rpad(x.mean_abs_mi_diff ? fixed(1e3 * *x.mean_abs_mi_diff, 2) : "-", 9)
           << rpad(fixed(100.0 * x.agreement, 1), 9) << rpad(fixed(100.0 * x.variance, 2), 10);
      } else {
        os << rpad("-", 8) << rpad("-", 9) << rpad("-", 9) << rpad("-", 10);
      }
    }
    os << "\n";
  }
  return os.str();
}

fs::path cmd_compare(const ExperimentConfig& c, const RunOptions& o) {
  if (c.compare.empty()) throw ConfigError("compare: config lists no reports");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<CompareRow> rows;
  json inputs = json::object();
  for (const auto& e : c.compare) {
    fs::path p(e.path);
    if (fs::is_directory(p)) p = fs::exists(p / "metrics.json") ? p / "metrics.json" : p / "metrics" / "metrics.json";
    if (!fs::exists(p)) throw ParseError(p.string() + ": metrics report not found");
    if (fs::exists(p.parent_path() / "manifest.json")) verify_manifest(p.parent_path());
    rows.push_back({e.label.empty() ? p.parent_path().string() : e.label, MetricsReport::from_json(read_json(p))});
    inputs[rows.back().label] = {{"path", p.string()}, {"sha256", sha256_file(p)}};
  }
  const fs::path dir = output_root(c, o) / "compare";
  const std::string text = compare_table_text(rows);
  write_text(dir / "table.csv", compare_table_csv(rows));
  write_text(dir / "table.txt", text);
  write_manifest(dir, "compare", c, {"table.csv", "table.txt"}, {{"total", seconds_since(t0)}}, inputs);
  std::cout << text;
  return dir;
}

int run_command(const std::string& command, const fs::path& config_path, const RunOptions& opts) {
  try {
    if (opts.jobs < 1) throw ConfigError("--jobs must be >= 1");
    const ExperimentConfig c = load_config(config_path);
    fs::path out;
    if (command == "gen-data") {
      out = cmd_gen_data(c, opts);
    } else if (command == "train") {
      out = cmd_train(c, opts);
    } else if (command == "hmc") {
      out = cmd_hmc(c, opts);
    } else if (command == "predict") {
      out = cmd_predict(c, opts);
    } else if (command == "evaluate") {
      out = cmd_evaluate(c, opts);
    } else if (command == "compare") {
      out = cmd_compare(c, opts);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    std::cerr << command << ": wrote " << out.string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ComputeError& e) {
    std::cerr << "compute failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace stochens
