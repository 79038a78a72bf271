#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdcell/analysis.hpp"
#include "mdcell/data.hpp"
#include "mdcell/error.hpp"
#include "mdcell/lattice.hpp"
#include "mdcell/network.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mdcell;

namespace {

enum Exit { kOk = 0, kContract = 1, kUnexpected = 2, kAllDiverged = 3 };

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

Coord parse_coord(const std::string& s) {
  const auto parts = split(s, ',');
  require(!parts.empty() && static_cast<int>(parts.size()) <= kMaxDims, "bad coordinate '" + s + "'");
  Coord c(static_cast<int>(parts.size()));
  for (std::size_t d = 0; d < parts.size(); ++d) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(parts[d], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == parts[d].size(), "bad coordinate '" + s + "'");
    c[static_cast<int>(d)] = v;
  }
  return c;
}

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), path + ": cannot open config");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ContractViolation(path + ": " + e.what());
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- data options shared by train, eval and gen-data ----

struct DataFlags {
  std::string corpus;
  std::string val_corpus;
  std::uint64_t seed = 1;
  int alphabet = 3;
  int train = 300;
  int validation = 100;
  double noise = 0.0;
  int height = 24;
  int width = 60;
  int glyph = 10;
  int min_length = 1;
  int max_length = 4;
};

void add_data_flags(CLI::App* app, DataFlags& f) {
  app->add_option("--corpus", f.corpus, "Corpus directory (index.tsv + P5 images); synthetic data when absent");
  app->add_option("--val-corpus", f.val_corpus, "Separate validation corpus directory");
  app->add_option("--data-seed", f.seed, "Synthetic generator seed");
  app->add_option("--alphabet", f.alphabet, "Label alphabet size A");
  app->add_option("--train-count", f.train, "Training samples (first N of the data)");
  app->add_option("--val-count", f.validation, "Validation samples (following the training samples)");
  app->add_option("--noise", f.noise, "Synthetic additive noise level");
  app->add_option("--height", f.height, "Synthetic image height");
  app->add_option("--width", f.width, "Synthetic image width");
  app->add_option("--glyph", f.glyph, "Synthetic glyph size");
  app->add_option("--min-length", f.min_length, "Shortest synthetic label sequence");
  app->add_option("--max-length", f.max_length, "Longest synthetic label sequence");
}

json data_json(const DataFlags& f) {
  json j = {{"alphabet", f.alphabet}, {"train", f.train}, {"validation", f.validation}};
  if (!f.corpus.empty()) {
    j["source"] = "corpus";
    j["corpus"] = f.corpus;
    if (!f.val_corpus.empty()) j["validation_corpus"] = f.val_corpus;
  } else {
    j["source"] = "synthetic";
    j["synthetic"] = {{"seed", f.seed},       {"noise", f.noise},         {"height", f.height},
                      {"width", f.width},     {"glyph", f.glyph},         {"min_length", f.min_length},
                      {"max_length", f.max_length}};
  }
  return j;
}

void data_from_json(const json& j, DataFlags& f) {
  f.alphabet = j.value("alphabet", f.alphabet);
  f.train = j.value("train", f.train);
  f.validation = j.value("validation", f.validation);
  f.corpus = j.value("corpus", f.corpus);
  f.val_corpus = j.value("validation_corpus", f.val_corpus);
  if (j.contains("synthetic")) {
    const json& s = j["synthetic"];
    f.seed = s.value("seed", f.seed);
    f.noise = s.value("noise", f.noise);
    f.height = s.value("height", f.height);
    f.width = s.value("width", f.width);
    f.glyph = s.value("glyph", f.glyph);
    f.min_length = s.value("min_length", f.min_length);
    f.max_length = s.value("max_length", f.max_length);
  }
}

SyntheticParams synthetic_params(const DataFlags& f, int count) {
  SyntheticParams p;
  p.seed = f.seed;
  p.count = count;
  p.alphabet = f.alphabet;
  p.noise = f.noise;
  p.height = f.height;
  p.width = f.width;
  p.glyph = f.glyph;
  p.min_length = f.min_length;
  p.max_length = f.max_length;
  return p;
}

struct Split {
  std::vector<Example> train;
  std::vector<Example> validation;
};

Split load_split(const DataFlags& f) {
  require(f.train >= 0 && f.validation >= 0, "sample counts must be >= 0");
  std::vector<Example> all;
  if (f.corpus.empty()) {
    all = gen_synthetic(synthetic_params(f, f.train + f.validation));
  } else {
    all = load_corpus(f.corpus, f.alphabet);
  }
  Split s;
  if (!f.val_corpus.empty()) {
    s.validation = load_corpus(f.val_corpus, f.alphabet);
    s.train = std::move(all);
    if (static_cast<int>(s.train.size()) > f.train) s.train.resize(static_cast<std::size_t>(f.train));
    return s;
  }
  require(static_cast<int>(all.size()) >= f.train + f.validation,
          "data has " + std::to_string(all.size()) + " samples, need " + std::to_string(f.train + f.validation));
  s.train.assign(all.begin(), all.begin() + f.train);
  s.validation.assign(all.begin() + f.train, all.begin() + f.train + f.validation);
  return s;
}

// ---- train ----

struct TrainFlags {
  std::string config;
  std::string out;
  std::string arch = "demo";
  std::string cells;
  std::string seeds = "1";
  double learning_rate = 5e-4;
  int epochs = 30;
  double init_scale = -1.0;
  double recurrent_scale = -1.0;
  double forget_bias = 0.0;
  DataFlags data;
};

struct TrainConfig {
  NetworkSpec spec;
  std::string arch;
  std::vector<CellKind> cells;
  std::vector<std::uint64_t> seeds;
  double learning_rate = 5e-4;
  int epochs = 30;
  DataFlags data;
  std::string out;
};

json config_json(const TrainConfig& c) {
  json cells = json::array();
  for (CellKind k : c.cells) cells.push_back(std::string(to_string(k)));
  return {{"arch", c.arch},   {"cells", cells},           {"network", to_json(c.spec)},
          {"seeds", c.seeds}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"data", data_json(c.data)}, {"output", c.out}};
}

std::vector<CellKind> md_cells(const NetworkSpec& spec) {
  std::vector<CellKind> out;
  for (const LayerSpec& l : spec.layers)
    if (l.type == LayerType::MdRecurrent) out.push_back(l.cell);
  return out;
}

TrainConfig resolve_train(const TrainFlags& f, const CLI::App& app) {
  json base = f.config.empty() ? json::object() : read_json(f.config);
  auto given = [&](const char* flag) { return app.count(flag) > 0; };
  TrainConfig c;
  c.arch = given("--arch") ? f.arch : base.value("arch", f.arch);
  c.learning_rate = given("--lr") ? f.learning_rate : base.value("learning_rate", f.learning_rate);
  c.epochs = given("--epochs") ? f.epochs : base.value("epochs", f.epochs);
  c.data = f.data;
  if (base.contains("data")) {
    data_from_json(base["data"], c.data);
    // flags still win over the file
    DataFlags d = c.data;
    const DataFlags& fl = f.data;
    if (given("--corpus")) d.corpus = fl.corpus;
    if (given("--val-corpus")) d.val_corpus = fl.val_corpus;
    if (given("--data-seed")) d.seed = fl.seed;
    if (given("--alphabet")) d.alphabet = fl.alphabet;
    if (given("--train-count")) d.train = fl.train;
    if (given("--val-count")) d.validation = fl.validation;
    if (given("--noise")) d.noise = fl.noise;
    if (given("--height")) d.height = fl.height;
    if (given("--width")) d.width = fl.width;
    if (given("--glyph")) d.glyph = fl.glyph;
    if (given("--min-length")) d.min_length = fl.min_length;
    if (given("--max-length")) d.max_length = fl.max_length;
    c.data = d;
  }
  require(c.data.alphabet >= 1, "alphabet must be >= 1");
  const int labels = c.data.alphabet + 1;

  if (given("--seeds") || !base.contains("seeds")) {
    for (const auto& s : split(f.seeds, ',')) c.seeds.push_back(std::stoull(s));
  } else {
    c.seeds = base["seeds"].get<std::vector<std::uint64_t>>();
  }
  require(!c.seeds.empty(), "seeds list must not be empty");

  if (c.arch == "custom") {
    require(base.contains("network"), "arch 'custom' needs a \"network\" object in the config file");
    c.spec = spec_from_json(base["network"]);
  } else if (c.arch == "demo") {
    c.spec = NetworkSpec::demo(labels);
  } else if (c.arch == "hierarchical3") {
    c.spec = NetworkSpec::hierarchical3(labels, {CellKind::Lstm, CellKind::Lstm, CellKind::Lstm});
  } else {
    throw ContractViolation("unknown arch '" + c.arch + "' (demo, hierarchical3, custom)");
  }
  if (c.arch != "custom" && base.contains("network")) {
    const json& n = base["network"];
    c.spec.init_scale = n.value("init_scale", c.spec.init_scale);
    c.spec.recurrent_scale = n.value("recurrent_scale", c.spec.recurrent_scale);
    c.spec.forget_bias = n.value("forget_bias", c.spec.forget_bias);
  }
  if (f.init_scale >= 0.0) c.spec.init_scale = f.init_scale;
  if (f.recurrent_scale >= 0.0) c.spec.recurrent_scale = f.recurrent_scale;
  if (given("--forget-bias")) c.spec.forget_bias = f.forget_bias;

  std::vector<CellKind> cells;
  if (given("--cells")) {
    for (const auto& k : split(f.cells, ',')) cells.push_back(parse_cell_kind(k));
  } else if (base.contains("cells")) {
    for (const auto& k : base["cells"]) cells.push_back(parse_cell_kind(k.get<std::string>()));
  }
  if (!cells.empty()) {
    std::size_t i = 0;
    for (LayerSpec& l : c.spec.layers) {
      if (l.type != LayerType::MdRecurrent) continue;
      require(i < cells.size(), "--cells names fewer kinds than the network has MD layers");
      l.cell = cells[i++];
    }
    require(i == cells.size(), "--cells names more kinds than the network has MD layers");
  }
  c.cells = md_cells(c.spec);
  for (const LayerSpec& l : c.spec.layers)
    if (l.type == LayerType::Output)
      require(l.labels == labels, "output layer has " + std::to_string(l.labels) + " labels, alphabet needs " +
                                      std::to_string(labels));
  validate(c.spec);
  c.out = given("--out") || !base.contains("output") ? f.out : base["output"].get<std::string>();
  require(!c.out.empty(), "an output directory is required (--out)");
  return c;
}

int cmd_train(const TrainFlags& f, const CLI::App& app) {
  const TrainConfig c = resolve_train(f, app);
  const Split data = load_split(c.data);
  const fs::path out(c.out);
  fs::create_directories(out);
  write_text(out / "config.json", config_json(c).dump(2) + "\n");
  json meta = {{"started", timestamp()}, {"runs", json::array()}};

  std::cout << "cells:";
  for (CellKind k : c.cells) std::cout << ' ' << to_string(k);
  std::cout << "  lr " << c.learning_rate << "  epochs " << c.epochs << "  train " << data.train.size()
            << "  validation " << data.validation.size() << "\n";

  json runs = json::array();
  std::ostringstream csv;
  csv << std::setprecision(17) << "seed,status,best_epoch,best_ler\n";
  std::vector<double> best;
  std::size_t diverged = 0;
  for (std::uint64_t seed : c.seeds) {
    NetworkSpec spec = c.spec;
    spec.seed = seed;
    Model model = build(spec);
    Model best_model = model;
    TrainOptions opts;
    opts.learning_rate = c.learning_rate;
    opts.epochs = c.epochs;
    opts.shuffle_seed = seed;
    opts.on_epoch = [&](const EpochRecord& r) {
      std::cout << "seed " << seed << " epoch " << r.epoch << " loss " << r.train_loss << " ler " << r.val_ler
                << "\n"
                << std::flush;
    };
    const auto t0 = std::chrono::steady_clock::now();
    const TrainLog log = train_sgd(model, data.train, data.validation, opts, &best_model);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const fs::path dir = out / ("seed-" + std::to_string(seed));
    fs::create_directories(dir);
    write_text(dir / "train_log.csv", train_log_csv(log));
    save_model(best_model, (dir / "model.bin").string());
    const std::string status = log.diverged ? "diverged" : "ok";
    json run = {{"seed", seed},
                {"status", status},
                {"best_epoch", log.best_epoch},
                {"best_ler", log.best_ler},
                {"epochs_run", static_cast<int>(log.epochs.size()) - 1}};
    if (log.diverged) run["divergence"] = log.divergence;
    write_text(dir / "result.json", run.dump(2) + "\n");
    runs.push_back(run);
    meta["runs"].push_back({{"seed", seed}, {"seconds", secs}});
    csv << seed << ',' << status << ',' << log.best_epoch << ',' << log.best_ler << '\n';
    if (log.diverged) ++diverged;
    best.push_back(log.best_ler);
  }

  json summary = {{"cells", config_json(c)["cells"]},
                  {"learning_rate", c.learning_rate},
                  {"epochs", c.epochs},
                  {"runs", runs},
                  {"diverged", diverged}};
  const bool all_diverged = diverged == c.seeds.size();
  if (!all_diverged) {
    const double lo = *std::min_element(best.begin(), best.end());
    const double hi = *std::max_element(best.begin(), best.end());
    const double med = median(best);
    summary["best_ler"] = {{"min", lo}, {"max", hi}, {"median", med}};
    csv << "min,,," << lo << "\nmax,,," << hi << "\nmedian,,," << med << '\n';
    std::cout << "best LER  min " << lo << "  max " << hi << "  median " << med << "\n";
  }
  summary["status"] = all_diverged ? "all seeds diverged" : "ok";
  write_text(out / "summary.json", summary.dump(2) + "\n");
  write_text(out / "summary.csv", csv.str());
  meta["finished"] = timestamp();
  write_text(out / "metadata.json", meta.dump(2) + "\n");
  return all_diverged ? kAllDiverged : kOk;
}

// ---- eval ----

int cmd_eval(const std::string& model_path, const DataFlags& f, bool show) {
  const Model model = load_model(model_path);
  const std::vector<Example> samples =
      f.val_corpus.empty() ? load_split(f).validation : load_corpus(f.val_corpus, f.alphabet);
  const CorpusLer ler = evaluate(model, samples);
  if (show) {
    for (const Example& e : samples) {
      const LabelSeq hyp = best_path_decode(forward(model, e.image));
      std::cout << e.id << '\t';
      for (std::size_t k = 0; k < hyp.size(); ++k) std::cout << (k ? "," : "") << hyp[k];
      std::cout << '\n';
    }
  }
  const json j = {{"samples", samples.size()},
                  {"ler", ler.micro},
                  {"ler_macro", ler.macro},
                  {"distance", ler.distance},
                  {"reference_length", ler.ref_length}};
  std::cout << j.dump(2) << "\n";
  return kOk;
}

// ---- propcheck ----

struct PropFlags {
  std::string kind;
  int dims = 2;
  std::string property;
  int trials = 1000;
  int max_extent = 6;
  std::uint64_t seed = 1;
  bool expect_violation = false;
  std::string p_in;
  std::string p_out;
  double delta = 0.1;
  int drive = 50;
  bool json_only = false;
};

int cmd_propcheck(const PropFlags& f) {
  const CellKind kind = parse_cell_kind(f.kind);
  const Property prop = parse_property(f.property);
  PropertyReport r;
  switch (prop) {
    case Property::NEG: r = neg_probe(kind, f.dims, f.trials, f.max_extent, f.seed); break;
    case Property::NVG: {
      Coord p_in(f.dims), p_out(f.dims);
      for (int d = 0; d < f.dims; ++d) p_in[d] = 1, p_out[d] = 3;
      if (!f.p_in.empty()) p_in = parse_coord(f.p_in);
      if (!f.p_out.empty()) p_out = parse_coord(f.p_out);
      require(p_in.dims() == f.dims && p_out.dims() == f.dims, "--p-in/--p-out must have --dim components");
      r = nvg_probe(kind, f.dims, p_in, p_out, f.delta);
      break;
    }
    case Property::COD:
      require(f.dims == 1, "COD is checked on a single cell; use --dim 1");
      r = cod_probe(kind, f.drive);
      break;
  }
  if (!f.json_only) std::cout << to_text(r);
  std::cout << to_json(r).dump() << "\n";
  if (r.holds == !f.expect_violation) return kOk;
  return kUnexpected;
}

// ---- freqresp ----

struct FreqFlags {
  double phi = 0.0;
  bool butterworth = false;
  std::string cell;
  double alpha0 = 1.0, alpha1 = 0.0, b0 = 1.0, b1 = 0.0;
  double output = 1.0, output0 = 0.5, output1 = 0.5, gamma2 = 0.5, gamma3 = 0.5, gamma4 = 1.0;
  std::size_t n = 4096;
  std::string csv;
};

int cmd_freqresp(const FreqFlags& f, const CLI::App& app) {
  TransferFunction tf;
  std::string source;
  if (f.butterworth) {
    tf = butterworth(f.phi);
    source = "butterworth";
  } else if (!f.cell.empty()) {
    const CellKind kind = parse_cell_kind(f.cell);
    GateActivations g;
    g.forget = f.phi;
    g.output = f.output;
    g.output0 = f.output0;
    g.output1 = f.output1;
    g.gamma2 = f.gamma2;
    g.gamma3 = f.gamma3;
    g.gamma4 = f.gamma4;
    tf = transfer_for_cell(kind, g);
    source = std::string(to_string(kind));
  } else {
    tf = {f.alpha0, f.alpha1, f.b0, f.b1};
    if (app.count("--phi") && !app.count("--alpha1")) tf = {1.0 - f.phi, f.phi, f.b0, f.b1};
    source = "coefficients";
  }
  const auto rows = spectrum(tf, f.n);
  std::ostringstream csv;
  csv << std::setprecision(17) << "f,h1,h2,h,empirical\n";
  double max_err = 0.0;
  for (const SpectrumRow& r : rows) {
    csv << r.f << ',' << r.closed.h1 << ',' << r.closed.h2 << ',' << r.closed.h << ',' << r.empirical << '\n';
    max_err = std::max(max_err, std::abs(r.closed.h - r.empirical));
  }
  if (f.csv.empty() || f.csv == "-") {
    std::cout << csv.str();
  } else {
    write_text(f.csv, csv.str());
  }
  json report = {{"source", source},
                 {"alpha0", tf.alpha0},
                 {"alpha1", tf.alpha1},
                 {"b0", tf.b0},
                 {"b1", tf.b1},
                 {"rows", rows.size()},
                 {"gain_bound", satisfies_gain_bound(tf)},
                 {"max_abs_error", max_err}};
  if (f.butterworth) {
    const double fc = cutoff_frequency(tf.alpha1);
    report["f_cutoff"] = fc;
    report["half_power_ratio"] = magnitude(tf, 2.0 * M_PI * fc).h / magnitude(tf, 0.0).h;
  }
  (f.csv.empty() || f.csv == "-" ? std::cerr : std::cout) << report.dump() << "\n";
  return kOk;
}

// ---- gradcheck ----

LatticeShape check_shape(int dims) {
  switch (dims) {
    case 1: return LatticeShape{5};
    case 2: return LatticeShape{5, 5};
    case 3: return LatticeShape{5, 5, 4};
    default: throw ContractViolation("gradcheck: --dim must be 1, 2 or 3");
  }
}

int cmd_gradcheck(const std::string& cells, int dims, std::uint64_t seed, double tolerance) {
  std::vector<CellKind> kinds;
  if (cells.empty() || cells == "all") {
    kinds.assign(std::begin(kAllCellKinds), std::end(kAllCellKinds));
  } else {
    for (const auto& k : split(cells, ',')) kinds.push_back(parse_cell_kind(k));
  }
  bool ok = true;
  for (CellKind k : kinds) {
    if (!kind_supports_dims(k, dims)) {
      std::cout << to_string(k) << " D=" << dims << ": not defined for this dimension\n";
      continue;
    }
    const GradCheckResult r = gradient_check(k, check_shape(dims), seed);
    const double worst = std::max(r.params.max_rel_error, r.input.max_rel_error);
    const bool pass = worst <= tolerance;
    ok = ok && pass;
    std::cout << to_string(k) << " D=" << dims << ": params " << r.parameter_count << " max rel err "
              << r.params.max_rel_error << " (inputs " << r.input.max_rel_error << ") "
              << (pass ? "ok" : "FAIL") << "\n";
  }
  return ok ? kOk : kUnexpected;
}

// ---- explosion / pathcount ----

int cmd_explosion(int dims, double phi, int k_max) {
  const auto series = explosion_series(dims, phi, k_max);
  std::cout << std::setprecision(17) << "k,truncated,closed_form\n";
  for (const SeriesPoint& p : series)
    std::cout << p.k << ',' << p.value << ',' << explosion_closed_form(dims, phi, p.k) << '\n';
  std::cerr << (series_diverges(series) ? "diverges" : "converges") << "\n";
  return kOk;
}

int cmd_pathcount(const std::string& p, const std::string& q) {
  const Coord a = parse_coord(p), b = parse_coord(q);
  require(a.dims() == b.dims(), "pathcount: p and q need the same number of components");
  std::cout << count_paths(a, b) << "\n";
  return kOk;
}

int cmd_gen_data(const DataFlags& f, int count, const std::string& out) {
  const auto samples = gen_synthetic(synthetic_params(f, count));
  write_corpus(out, samples);
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multidimensional recurrent cells: training, property checks and filter analysis"};
  app.require_subcommand(1);
  int code = kOk;

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train one network per seed and summarise the best validation LER");
  train->add_option("--config", tf.config, "JSON config file; flags override its fields");
  train->add_option("--out", tf.out, "Run directory");
  train->add_option("--arch", tf.arch, "demo, hierarchical3 or custom (network from the config)");
  train->add_option("--cells", tf.cells, "Cell kind per MD layer, bottom up, comma separated");
  train->add_option("--seeds", tf.seeds, "Comma separated weight-initialisation seeds");
  train->add_option("--lr", tf.learning_rate, "Learning rate");
  train->add_option("--epochs", tf.epochs, "Epochs");
  train->add_option("--init-scale", tf.init_scale, "Feed-forward weight initialisation scale");
  train->add_option("--recurrent-scale", tf.recurrent_scale, "Recurrent weight initialisation scale");
  train->add_option("--forget-bias", tf.forget_bias, "Initial bias of forget-gate units");
  add_data_flags(train, tf.data);

  std::string model_path;
  bool show = false;
  DataFlags ef;
  auto* eval = app.add_subcommand("eval", "Evaluate a saved model on the validation split or a corpus");
  eval->add_option("--model", model_path, "Model file written by train")->required();
  eval->add_flag("--show", show, "Print the decoded label sequence of every sample");
  add_data_flags(eval, ef);

  PropFlags pf;
  auto* prop = app.add_subcommand("propcheck", "Check NVG, NEG or COD for a cell kind");
  prop->add_option("--kind", pf.kind, "Cell kind")->required();
  prop->add_option("--dim", pf.dims, "Lattice dimension D");
  prop->add_option("--prop", pf.property, "nvg, neg or cod")->required();
  prop->add_option("--trials", pf.trials, "Random gate fields (NEG)");
  prop->add_option("--max-extent", pf.max_extent, "Largest lattice extent per dimension (NEG)");
  prop->add_option("--seed", pf.seed, "Probe seed");
  prop->add_option("--p-in", pf.p_in, "Window start (NVG), e.g. 1,1");
  prop->add_option("--p-out", pf.p_out, "Window end (NVG), e.g. 3,4");
  prop->add_option("--delta", pf.delta, "NVG tolerance delta");
  prop->add_option("--drive", pf.drive, "Drive length of the unbounded-state COD test");
  prop->add_flag("--expect-violation", pf.expect_violation, "Exit 0 when the property is violated");
  prop->add_flag("--json", pf.json_only, "Print only the JSON report");

  FreqFlags ff;
  auto* freq = app.add_subcommand("freqresp", "Closed-form and impulse-response magnitude of a first-order cell");
  freq->add_option("--phi", ff.phi, "Forget/leak gate value (alpha1)");
  freq->add_flag("--butterworth", ff.butterworth, "alpha0 = 1 - phi, b0 = b1 = 1/2");
  freq->add_option("--cell", ff.cell, "Derive coefficients from a cell kind and gate values");
  freq->add_option("--alpha0", ff.alpha0);
  freq->add_option("--alpha1", ff.alpha1);
  freq->add_option("--b0", ff.b0);
  freq->add_option("--b1", ff.b1);
  freq->add_option("--omega", ff.output, "Output gate (Leaky)");
  freq->add_option("--omega0", ff.output0, "Output gate on s (LeakyLP)");
  freq->add_option("--omega1", ff.output1, "Output gate on the mixed predecessor (LeakyLP)");
  freq->add_option("--gamma2", ff.gamma2);
  freq->add_option("--gamma3", ff.gamma3);
  freq->add_option("--gamma4", ff.gamma4);
  freq->add_option("--N", ff.n, "Impulse response length (power of two)");
  freq->add_option("--csv", ff.csv, "Spectrum CSV path (stdout when absent; the report then goes to stderr)");

  std::string gc_cells;
  int gc_dims = 2;
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-6;
  auto* grad = app.add_subcommand("gradcheck", "Full BPTT gradient against central finite differences");
  grad->add_option("--cells", gc_cells, "Comma separated cell kinds, or all");
  grad->add_option("--dim", gc_dims, "Lattice dimension D (1..3)");
  grad->add_option("--seed", gc_seed, "Network and input seed");
  grad->add_option("--tolerance", gc_tol, "Largest accepted relative error");

  int ex_dims = 2, ex_kmax = 20;
  double ex_phi = 0.9;
  auto* expl = app.add_subcommand("explosion", "Truncated MD LSTM Jacobian along the lattice diagonal");
  expl->add_option("--dim", ex_dims, "Lattice dimension D");
  expl->add_option("--phi", ex_phi, "Uniform forget gate value");
  expl->add_option("--kmax", ex_kmax, "Largest diagonal offset");

  std::string pc_p, pc_q;
  auto* paths = app.add_subcommand("pathcount", "Number of monotone lattice paths from p to q");
  paths->add_option("p", pc_p, "Start, e.g. 0,0")->required();
  paths->add_option("q", pc_q, "End, e.g. 5,5")->required();

  DataFlags gf;
  int gen_count = 400;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus (P5 images + index.tsv)");
  add_data_flags(gen, gf);
  gen->add_option("--count", gen_count, "Number of samples");
  gen->add_option("--out", gen_out, "Corpus directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kContract;
  }
  try {
    if (*train) code = cmd_train(tf, *train);
    if (*eval) code = cmd_eval(model_path, ef, show);
    if (*prop) code = cmd_propcheck(pf);
    if (*freq) code = cmd_freqresp(ff, *freq);
    if (*grad) code = cmd_gradcheck(gc_cells, gc_dims, gc_seed, gc_tol);
    if (*expl) code = cmd_explosion(ex_dims, ex_phi, ex_kmax);
    if (*paths) code = cmd_pathcount(pc_p, pc_q);
    if (*gen) code = cmd_gen_data(gf, gen_count, gen_out);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kContract;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kContract;
  }
  return code;
}
