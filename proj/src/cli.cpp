#include "hs/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "hs/errors.hpp"
#include "hs/estimators.hpp"

#ifndef HS_GIT_DESCRIBE
#define HS_GIT_DESCRIBE "unknown"
#endif

namespace hs {

namespace {

using Json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<double> split_reals(const std::string& text, const std::string& key) {
  std::string cleaned = text;
  for (char& c : cleaned)
    if (c == ',' || c == ';') c = ' ';
  std::istringstream in(cleaned);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw ConfigError("'" + key + "': cannot parse '" + tok + "' as a number");
    out.push_back(v);
  }
  return out;
}

Json estimate_json(const Estimate& e) {
  Json j;
  j["value"] = e.value;
  j["stderr"] = e.std_error;
  j["n_samples"] = e.n_samples;
  j["n_rejected"] = e.n_rejected;
  j["envelope_violations"] = e.envelope_violations;
  j["seed"] = e.seed;
  j["norm_rel_error"] = e.norm_rel_error;
  if (!e.breakdown.empty()) {
    Json rows = Json::array();
    for (const auto& b : e.breakdown)
      rows.push_back({{"label", b.label},
                      {"value", b.value},
                      {"stderr", b.std_error},
                      {"n_samples", b.n_samples},
                      {"n_rejected", b.n_rejected}});
    j["breakdown"] = rows;
  }
  return j;
}

Json configuration_json(const Configuration& z) {
  Json a = Json::array();
  for (const auto& s : z) a.push_back({{"q", {s.q.x, s.q.y, s.q.z}}, {"p", {s.p.x, s.p.y, s.p.z}}});
  return a;
}

std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Everything a subcommand needs, built from the config.
struct Context {
  RunConfig config;
  std::string out_dir;
  BoxSpec box;
  std::shared_ptr<InitialMeasure> measure;
  ExperimentSpec spec;
  int point_redraws = 0;
};

std::shared_ptr<InitialMeasure> make_measure(const RunConfig& cfg, const BoxSpec& box) {
  auto m = std::make_shared<InitialMeasure>(cfg.measure(), box);
  m->calibrate(cfg.count("norm_samples"), cfg.count("seed"), cfg.integer("threads"));
  return m;
}

Configuration evaluation_point(const RunConfig& cfg, const BoxSpec& box, int attempt) {
  if (auto z = cfg.point()) return *z;
  Rng rng = block_rng(cfg.count("seed"), stream_id("evaluation-point"), static_cast<std::uint64_t>(attempt));
  const double clearance = cfg.real("point_clearance");
  const auto grid = cfg.reals("t_grid");
  const double horizon = std::max(cfg.real("t"), grid.empty() ? 0.0 : grid.back());
  const Tolerances tol = cfg.tolerances().value_or(Tolerances::defaults(std::max(horizon, 1e-300), 1.0 / std::sqrt(cfg.real("beta"))));
  for (int draw = 0; draw < 100000; ++draw) {
    Configuration z = sample_evaluation_point(box, cfg.integer("n"), cfg.real("beta"), cfg.real("point_margin"), rng);
    if (clearance <= 0.0 || trajectory_clearance(box, z, horizon, tol) >= clearance) return z;
  }
  throw ConfigError("no evaluation point keeps the requested wall clearance");
}

ExperimentSpec make_spec(const RunConfig& cfg, const BoxSpec& box, std::shared_ptr<const InitialMeasure> m,
                         const Configuration& z) {
  ExperimentSpec s;
  s.box = box;
  s.measure = std::move(m);
  s.z = z;
  s.t = cfg.real("t");
  s.samples = cfg.count("samples");
  s.seed = cfg.count("seed");
  s.threads = cfg.integer("threads");
  s.chunks = cfg.count("chunks");
  s.tolerances = cfg.tolerances();
  return s;
}

void write_file(const std::string& dir, const std::string& name, const std::string& text) {
  std::filesystem::create_directories(dir);
  std::ofstream f(std::filesystem::path(dir) / name);
  if (!f) throw ConfigError("cannot write to " + dir);
  f << text;
}

struct Outcome {
  Json result;
  bool pass = true;
  std::string failure;
  std::string csv_name;
  std::string csv;
};

Outcome cmd_simulate(Context& c) {
  const Configuration& z = c.spec.z;
  const FlowResult fr = advance(c.box, z, c.spec.t, c.spec.tol());
  Outcome o;
  o.result["singular"] = std::string(to_string(fr.singular));
  o.result["n_events"] = fr.log.size();
  o.result["initial"] = configuration_json(z);
  o.result["final"] = configuration_json(fr.state);
  const double e0 = kinetic_energy(z);
  o.result["energy_rel_drift"] = e0 > 0.0 ? (kinetic_energy(fr.state) - e0) / e0 : 0.0;
  std::ostringstream csv;
  write_event_log_csv(csv, fr.log);
  o.csv_name = "events.csv";
  o.csv = csv.str();
  return o;
}

Outcome cmd_estimate(Context& c, const std::string& which) {
  Outcome o;
  Estimate e;
  if (which == "rho-direct") {
    e = rho_direct(c.spec);
  } else if (which == "rho-tree") {
    const Tree tree = parse_tree(c.config.get("tree"));
    o.result["tree"] = format_tree(tree);
    e = tree_value(tree, c.spec);
  } else {
    e = rho_series(c.spec);
  }
  o.result["estimate"] = estimate_json(e);
  return o;
}

Outcome cmd_verify_step(Context& c) {
  const Tree source = parse_tree(c.config.get("tree"));
  const StepCheck s = verify_integration_step(source, c.spec);
  const double sigmas = c.config.real("sigmas");
  Outcome o;
  o.result["tree"] = format_tree(source);
  o.result["lhs"] = estimate_json(s.lhs);
  o.result["rhs"] = estimate_json(s.rhs);
  Json terms = Json::array();
  for (const auto& t : s.terms) terms.push_back({{"label", t.label}, {"value", t.value}, {"stderr", t.std_error}});
  o.result["terms"] = terms;
  o.result["z"] = s.z();
  o.pass = s.z() <= sigmas;
  o.result["pass"] = o.pass;
  if (!o.pass)
    o.failure = "integration step: lhs " + format_real(s.lhs.value) + " vs rhs " + format_real(s.rhs.value) +
                ", z = " + format_real(s.z());
  return o;
}

Outcome cmd_verify_cancel(Context& c) {
  const Tree tree = parse_tree(c.config.get("tree"));
  const int k = c.config.integer("k");
  const CancellationReport r = verify_cancellation(tree, k, c.spec, c.config.count("pair_samples"));
  const double sigmas = c.config.real("sigmas");
  Outcome o;
  o.result["tree"] = format_tree(tree);
  o.result["k"] = k;
  o.result["minus_part"] = estimate_json(r.minus_part);
  o.result["plus_part"] = estimate_json(r.plus_part);
  o.result["sum"] = estimate_json(r.sum);
  o.result["draws"] = r.draws;
  o.result["r_minus"] = r.r_minus;
  o.result["tolerance_rejections"] = r.tolerance_rejections;
  o.result["antisymmetry_ok"] = r.antisymmetry_ok;
  o.result["round_trip_ok"] = r.round_trip_ok;
  o.result["shared_final_ok"] = r.shared_final_ok;
  o.result["partner_in_r_plus"] = r.partner_in_r_plus;
  o.result["max_relative_violation"] = r.max_relative_violation;
  o.result["log"] = r.log;
  const bool pairs_ok = r.r_minus > 0 && static_cast<double>(r.antisymmetry_ok) >= 0.999 * static_cast<double>(r.r_minus);
  const bool sum_ok = std::abs(r.sum.value) <= sigmas * r.sum.std_error;
  o.pass = pairs_ok && sum_ok;
  o.result["pass"] = o.pass;
  if (!pairs_ok)
    o.failure = "antisymmetry held on " + std::to_string(r.antisymmetry_ok) + " of " + std::to_string(r.r_minus) +
                " R- samples";
  else if (!sum_ok)
    o.failure = "restricted sum " + format_real(r.sum.value) + " exceeds " + format_real(sigmas) + " x " +
                format_real(r.sum.std_error);
  return o;
}

Outcome cmd_verify_bbgky(Context& c) {
  const std::vector<double> grid = c.config.reals("t_grid");
  const BbgkyReport rep = bbgky_residual(c.spec, grid, c.config.real("sigmas"));
  Outcome o;
  Json pts = Json::array();
  std::ostringstream csv;
  csv << std::setprecision(17) << "t,lhs,lhs_stderr,rhs,rhs_stderr,residual,sigma,quadrature_bound,pass\n";
  for (const auto& p : rep.points) {
    pts.push_back({{"t", p.t},
                   {"lhs", estimate_json(p.lhs)},
                   {"rhs", estimate_json(p.rhs)},
                   {"residual", p.residual},
                   {"sigma", p.sigma},
                   {"quadrature_bound", p.quadrature_bound},
                   {"pass", p.pass}});
    csv << p.t << ',' << p.lhs.value << ',' << p.lhs.std_error << ',' << p.rhs.value << ',' << p.rhs.std_error << ','
        << p.residual << ',' << p.sigma << ',' << p.quadrature_bound << ',' << (p.pass ? 1 : 0) << '\n';
    if (!p.pass && o.failure.empty())
      o.failure = "bbgky residual " + format_real(p.residual) + " at t = " + format_real(p.t) + " exceeds " +
                  format_real(c.config.real("sigmas")) + " x (" + format_real(p.sigma) + " + " +
                  format_real(p.quadrature_bound) + ")";
  }
  o.result["points"] = pts;
  o.pass = rep.pass();
  o.result["pass"] = o.pass;
  o.csv_name = "bbgky.csv";
  o.csv = csv.str();
  return o;
}

Outcome cmd_sweep(Context& c) {
  const std::string param = c.config.get("sweep_param");
  if (param != "t" && param != "lambda") throw ConfigError("sweep_param must be 't' or 'lambda'");
  const std::string estimator = c.config.get("sweep_estimator");
  if (estimator != "rho-direct" && estimator != "rho-series" && estimator != "both")
    throw ConfigError("sweep_estimator must be rho-direct, rho-series or both");
  Outcome o;
  Json rows = Json::array();
  std::ostringstream csv;
  csv << std::setprecision(17) << param << ",estimator,value,stderr,n_samples,n_rejected\n";
  for (double v : c.config.reals("sweep_values")) {
    RunConfig cfg = c.config;
    cfg.set(param, format_real(v));
    std::shared_ptr<const InitialMeasure> m = param == "lambda" ? make_measure(cfg, c.box) : c.measure;
    const ExperimentSpec spec = make_spec(cfg, c.box, m, c.spec.z);
    auto emit = [&](const std::string& name, const Estimate& e) {
      rows.push_back({{param, v}, {"estimator", name}, {"estimate", estimate_json(e)}});
      csv << v << ',' << name << ',' << e.value << ',' << e.std_error << ',' << e.n_samples << ',' << e.n_rejected
          << '\n';
    };
    if (estimator != "rho-series") emit("rho-direct", rho_direct(spec));
    if (estimator != "rho-direct") emit("rho-series", rho_series(spec));
  }
  o.result["rows"] = rows;
  o.csv_name = "sweep.csv";
  o.csv = csv.str();
  return o;
}

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> samples;
  std::string out_dir;
  std::optional<int> threads;
  std::vector<std::string> assignments;
  std::optional<int> tree_n;
  std::optional<int> tree_m;
};

RunConfig build_config(const GlobalOptions& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig() : RunConfig::load(g.config_path);
  for (const auto& a : g.assignments) cfg.set_assignment(a);
  if (g.seed) cfg.set("seed", std::to_string(*g.seed));
  if (g.samples) cfg.set("samples", std::to_string(*g.samples));
  if (g.threads) cfg.set("threads", std::to_string(*g.threads));
  if (!g.out_dir.empty()) cfg.set("out", g.out_dir);
  return cfg;
}

int run_command(const std::string& name, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  Context c;
  c.config = build_config(g);
  c.out_dir = c.config.get("out");

  Json doc;
  doc["version"] = version_string();
  doc["command"] = name;
  doc["seed"] = c.config.count("seed");

  if (name == "count-trees") {
    const int n = g.tree_n.value_or(c.config.integer("n"));
    const int m = g.tree_m.value_or(c.config.integer("m"));
    if (n < 1 || m < 0) throw ConfigError("count-trees needs n >= 1 and m >= 0");
    c.config.set("n", std::to_string(n));
    c.config.set("m", std::to_string(m));
    const std::uint64_t count = count_trees(n, m);
    out << count << '\n';
    doc["config"] = c.config.to_json();
    doc["result"] = {{"n", n}, {"m", m}, {"count", count}};
    if (!c.out_dir.empty()) write_file(c.out_dir, "count-trees.json", doc.dump(2) + "\n");
    return 0;
  }

  c.box = c.config.box();
  if (name != "simulate") c.measure = make_measure(c.config, c.box);

  Outcome o;
  const int max_attempts = c.config.point() ? 1 : 20;
  for (int attempt = 0;; ++attempt) {
    const Configuration z = evaluation_point(c.config, c.box, attempt);
    c.spec = make_spec(c.config, c.box, c.measure, z);
    try {
      if (name == "simulate") {
        if (!is_admissible(c.box, z)) throw ConfigError("initial configuration is not admissible");
        o = cmd_simulate(c);
      } else if (name == "rho-direct" || name == "rho-tree" || name == "rho-series") {
        o = cmd_estimate(c, name);
      } else if (name == "verify-step") {
        o = cmd_verify_step(c);
      } else if (name == "verify-cancel") {
        o = cmd_verify_cancel(c);
      } else if (name == "verify-bbgky") {
        o = cmd_verify_bbgky(c);
      } else {
        o = cmd_sweep(c);
      }
      break;
    } catch (const SingularSample& ex) {
      if (attempt + 1 >= max_attempts) throw;
      err << "note: evaluation point " << attempt << " is singular (" << ex.what() << "), drawing another\n";
      ++c.point_redraws;
    }
  }

  doc["config"] = c.config.to_json();
  doc["point"] = configuration_json(c.spec.z);
  doc["point_redraws"] = c.point_redraws;
  doc["result"] = o.result;
  const std::string text = doc.dump(2) + "\n";
  out << text;
  if (!c.out_dir.empty()) {
    write_file(c.out_dir, name + ".json", text);
    if (!o.csv_name.empty()) write_file(c.out_dir, o.csv_name, o.csv);
  }
  if (!o.pass) {
    err << "FAILED: " << o.failure << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      {"L", "1 1 1"},
      {"a", "0.1"},
      {"measure", "perturbed"},
      {"beta", "1"},
      {"lambda", "0.3"},
      {"profile", "smooth"},
      {"wavevector", "1 0 0"},
      {"N", "2"},
      {"activity", "1"},
      {"N_max", "3"},
      {"n", "1"},
      {"m", "0"},
      {"point", "sample-generic"},
      {"point_margin", "0"},
      {"point_clearance", "0"},
      {"t", "1"},
      {"t_grid", "0 0.25 0.5 0.75 1"},
      {"samples", "100000"},
      {"norm_samples", "1000000"},
      {"pair_samples", "10000"},
      {"seed", "1"},
      {"threads", "1"},
      {"chunks", "0"},
      {"eps_graze", "auto"},
      {"eps_time", "auto"},
      {"max_events", "10000"},
      {"sigmas", "3"},
      {"tree", "1:[]"},
      {"k", "1"},
      {"sweep_param", "t"},
      {"sweep_values", "0.5 1"},
      {"sweep_estimator", "both"},
      {"out", ""},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::parse(std::istream& in) {
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  return parse(f);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const auto v = split_reals(get(key), key);
  if (v.size() != 1) throw ConfigError("'" + key + "' must be a single number");
  return v[0];
}

int RunConfig::integer(const std::string& key) const {
  const double v = real(key);
  if (v != std::floor(v) || std::abs(v) > 1e9) throw ConfigError("'" + key + "' must be an integer");
  return static_cast<int>(v);
}

std::uint64_t RunConfig::count(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || s[0] == '-') {
    // Accept forms like 1e6.
    const double d = real(key);
    if (d < 0 || d != std::floor(d) || d > 1.8e19) throw ConfigError("'" + key + "' must be a non-negative integer");
    return static_cast<std::uint64_t>(d);
  }
  return v;
}

std::vector<double> RunConfig::reals(const std::string& key) const { return split_reals(get(key), key); }

BoxSpec RunConfig::box() const {
  const auto l = reals("L");
  BoxSpec b;
  if (l.size() == 1) b.lengths = {l[0], l[0], l[0]};
  else if (l.size() == 3) b.lengths = {l[0], l[1], l[2]};
  else throw ConfigError("'L' needs one or three lengths");
  b.diameter = real("a");
  b.validate();
  return b;
}

MeasureSpec RunConfig::measure() const {
  MeasureSpec m;
  m.kind = parse_measure_kind(get("measure"));
  m.beta = real("beta");
  m.lambda = real("lambda");
  m.profile = parse_spatial_profile(get("profile"));
  const auto w = reals("wavevector");
  if (w.size() != 3) throw ConfigError("'wavevector' needs three integers");
  for (int d = 0; d < 3; ++d) {
    if (w[d] != std::floor(w[d])) throw ConfigError("'wavevector' needs integer components");
    m.wavevector[d] = static_cast<int>(w[d]);
  }
  m.N = integer("N");
  m.activity = real("activity");
  m.N_max = integer("N_max");
  return m;
}

std::optional<Tolerances> RunConfig::tolerances() const {
  const bool auto_graze = get("eps_graze") == "auto";
  const bool auto_time = get("eps_time") == "auto";
  if (auto_graze && auto_time && get("max_events") == "10000") return std::nullopt;
  Tolerances t = Tolerances::defaults(std::max(real("t"), 1e-300), 1.0 / std::sqrt(real("beta")));
  if (!auto_graze) t.eps_graze = real("eps_graze");
  if (!auto_time) t.eps_time = real("eps_time");
  t.max_events = count("max_events");
  t.validate();
  return t;
}

std::optional<Configuration> RunConfig::point() const {
  const std::string& s = get("point");
  if (s == "sample-generic") return std::nullopt;
  const auto v = split_reals(s, "point");
  if (v.empty() || v.size() % 6 != 0) throw ConfigError("'point' needs six numbers per particle");
  Configuration z;
  for (std::size_t i = 0; i < v.size(); i += 6)
    z.push_back({{v[i], v[i + 1], v[i + 2]}, {v[i + 3], v[i + 4], v[i + 5]}});
  return z;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

nlohmann::ordered_json RunConfig::to_json() const {
  Json j = Json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

std::string version_string() { return HS_GIT_DESCRIBE; }

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hard-sphere correlation function experiments"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "key = value configuration file");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--samples", g.samples, "samples per estimator");
  app.add_option("--out", g.out_dir, "directory for JSON and CSV results");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--set", g.assignments, "override a config key, key=value");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "advance the evaluation point and write the event log"},
      {"rho-direct", "correlation function by direct marginalization"},
      {"rho-tree", "value of a single tree"},
      {"rho-series", "correlation function as the sum of all tree values"},
      {"verify-step", "integration-step identity for a source tree"},
      {"verify-cancel", "cancellation of recollision histories"},
      {"verify-bbgky", "integrated hierarchy residual on a time grid"},
      {"count-trees", "number of trees with n roots and m nodes"},
      {"sweep", "estimates over a grid of t or lambda"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    if (name == "count-trees") {
      sub->add_option("--n", g.tree_n, "root count");
      sub->add_option("--m", g.tree_m, "node count");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return run_command(name, g, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace hs
