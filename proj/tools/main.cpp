// symcocycle: generate cocycles, compute spectra and domination horizons, classify segments,
// and run the kick, walk and cascade simulations. Reports are JSON; series go to CSV.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "symcocycle/classify.hpp"
#include "symcocycle/io.hpp"
#include "symcocycle/walk.hpp"

namespace {

using namespace symc;
using Json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";
constexpr int kExitValidation = 2, kExitNumeric = 3, kExitUsage = 64;
const std::vector<std::string> kCommands = {"gen", "exponents", "dominate", "classify", "kickflow", "walk", "cascade"};

const char* kUsage =
    "usage: symcocycle <command> [options]\n"
    "commands:\n"
    "  gen        generate a cocycle file (cat_map, coupled_standard_map, constant, segment families)\n"
    "  exponents  finite-time Lyapunov spectrum\n"
    "  dominate   smallest m for which a splitting is m-dominated\n"
    "  classify   type I-IV classification of a non-dominated segment with witnesses\n"
    "  kickflow   kick Hamiltonian, its step law and optional flow of a point\n"
    "  walk       absorbing random walk on R/piZ and the horizon m1\n"
    "  cascade    itinerary simulation of the kick cascade\n"
    "run 'symcocycle <command> --help' for the options of a command\n";

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) fail(ErrorKind::Numeric, "SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += hex[md[i] >> 4], out += hex[md[i] & 15];
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Format, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Json to_json(const Mat& A) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < A.cols(); ++c) row.push_back(A(r, c));
    rows.push_back(row);
  }
  return rows;
}

template <class T>
Json opt_json(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

std::vector<double> parse_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size() && tok.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(ErrorKind::Parameter, flag + ": cannot parse '" + tok + "' as a number");
    }
  }
  if (out.empty()) fail(ErrorKind::Parameter, flag + " is empty");
  return out;
}

/// Common state of one invocation.
struct Run {
  std::string command;
  std::optional<std::uint64_t> seed;
  std::string out_path, csv_path;
  std::vector<std::string> digest_parts;  // canonical argv plus input file contents

  std::uint64_t need_seed() const {
    if (!seed) fail(ErrorKind::Parameter, "--seed is required for " + command);
    return *seed;
  }
  void add_input_file(const std::string& path) { digest_parts.push_back("file:" + path + "\n" + read_file(path)); }

  std::string digest() const {
    std::string all;
    for (const auto& p : digest_parts) all += p + '\0';
    return sha256_hex(all);
  }
};

void write_csv(const std::string& path, const std::string& header, const std::vector<std::vector<double>>& rows) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Format, "cannot write " + path);
  out << header << '\n';
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << fmt(row[k]);
    out << '\n';
  }
}

// ---------------------------------------------------------------- sources

struct SourceArgs {
  std::string source = "cat_map";
  std::string file;
  std::string params;
  std::string matrix;
  int n = 100;
  CLI::Option* n_option = nullptr;

  void add(CLI::App* app) {
    app->add_option("--source", source, "cat_map | coupled_standard_map | constant | file")
        ->check(CLI::IsMember({"cat_map", "coupled_standard_map", "constant", "file"}));
    app->add_option("--file", file, "cocycle JSON file (implies --source file)");
    app->add_option("--params", params, "coupled_standard_map parameters K1,K2,b");
    app->add_option("--matrix", matrix, "constant matrix, row-major comma list");
    n_option = app->add_option("--n", n, "orbit length")->check(CLI::PositiveNumber);
  }

  std::vector<Mat> matrices(Run& run) {
    OrbitSource src;
    if (!file.empty()) source = "file";
    if (source == "cat_map") {
      src.kind = SourceKind::CatMap;
    } else if (source == "coupled_standard_map") {
      src.kind = SourceKind::CoupledStandardMap;
      src.seed = run.need_seed();
      if (!params.empty()) src.params = parse_list(params, "--params");
    } else if (source == "constant") {
      src.kind = SourceKind::ConstantMatrix;
      const std::vector<double> v = parse_list(matrix, "--matrix");
      const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(v.size()))));
      if (d * d != static_cast<int>(v.size()) || d % 2) fail(ErrorKind::Format, "--matrix must hold (2N)^2 entries");
      src.matrix = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), d, d);
    } else {
      if (file.empty()) fail(ErrorKind::Parameter, "--source file needs --file");
      src.kind = SourceKind::File;
      src.path = file;
      run.add_input_file(file);
      if (!n_option || n_option->count() == 0) n = static_cast<int>(load_cocycle(file).matrices.size());
    }
    return generate_cocycle(src, n);
  }
};

Segment family_segment(const std::string& name, int n, int m0, bool conjugate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Thresholds th = family::thresholds();
  Segment s;
  if (name == "angle_pinch") s = family::angle_pinch(rng, n, th.alpha);
  else if (name == "rate_swap") s = family::rate_swap(rng, n);
  else if (name == "identity_plane") s = family::identity_plane(rng, n, m0);
  else if (name == "conformal") s = family::conformal(rng, n, m0);
  else fail(ErrorKind::Parameter, "unknown family " + name);
  if (conjugate) s = conjugate_segment(s, random_bounded_symplectic(2, rng, 2.0));
  return s;
}

Segment segment_from_file(const CocycleFile& f, int index) {
  if (f.splittings.count("Eu")) {
    Segment s;
    s.mats = f.matrices;
    s.Eu = f.splittings.at("Eu");
    s.Ec = f.splittings.at("Ec");
    s.Es = f.splittings.at("Es");
    s.p = s.Eu.at(0).dim();
    return s;
  }
  return oseledets_splitting(f.matrices, index);
}

// --------------------------------------------------------------- commands

Json cmd_gen(Run& run, SourceArgs& src, const std::string& family, int m0, bool conjugate, const std::string& save) {
  CocycleFile f;
  Json res;
  if (!family.empty()) {
    const Segment s = family_segment(family, src.n, m0, conjugate, run.need_seed());
    f.matrices = s.mats;
    f.splittings = {{"Eu", s.Eu}, {"Ec", s.Ec}, {"Es", s.Es}};
    f.metadata["family"] = family;
    res["source"] = family;
  } else {
    f.matrices = src.matrices(run);
    res["source"] = src.source;
  }
  f.dim = static_cast<int>(f.matrices.at(0).rows());
  if (run.seed) f.metadata["seed"] = std::to_string(*run.seed);
  double defect = 0.0;
  for (const auto& A : f.matrices) defect = std::max(defect, symplectic_defect(A));
  save_cocycle(save, f);
  // Reload to certify the round trip.
  const CocycleFile back = load_cocycle(save);
  bool same = back.matrices.size() == f.matrices.size();
  for (std::size_t i = 0; same && i < f.matrices.size(); ++i) same = back.matrices[i] == f.matrices[i];
  if (!same) fail(ErrorKind::Numeric, "cocycle file round trip is not lossless");
  res["dim"] = f.dim;
  res["n"] = f.matrices.size();
  res["max_symplectic_defect"] = defect;
  res["splittings"] = f.splittings.empty() ? Json::array() : Json::array({"Eu", "Ec", "Es"});
  res["file"] = save;
  res["round_trip_lossless"] = same;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < f.matrices.size(); ++i) rows.push_back({double(i), symplectic_defect(f.matrices[i])});
  write_csv(run.csv_path, "step,symplectic_defect", rows);
  return res;
}

Json cmd_exponents(Run& run, SourceArgs& src, const std::string& method) {
  const std::vector<Mat> mats = src.matrices(run);
  const SpectrumMethod m = method == "qr" ? SpectrumMethod::QR : method == "svd" ? SpectrumMethod::SVD : SpectrumMethod::ExactEigen;
  const LyapSpectrum spec = finite_lyapunov_spectrum(mats, m);
  Json res;
  res["source"] = src.source;
  res["method"] = method;
  res["n"] = spec.horizon;
  res["exponents"] = spec.exponents;
  res["symmetry_defect"] = spec.symmetry_defect;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < spec.exponents.size(); ++i) rows.push_back({double(i + 1), spec.exponents[i]});
  write_csv(run.csv_path, "index,exponent", rows);
  return res;
}

Json cmd_dominate(Run& run, SourceArgs& src, int index, int m_max) {
  SplitSeq seq;
  std::optional<Segment> seg;
  std::string origin;
  if (!src.file.empty()) {
    run.add_input_file(src.file);
    const CocycleFile f = load_cocycle(src.file);
    if (f.splittings.count("E1")) {
      seq = {f.matrices, f.splittings.at("E1"), f.splittings.at("E2"), f.splittings.at("E1").at(0).dim()};
      origin = "file E1/E2";
    } else {
      seg = segment_from_file(f, index);
      origin = f.splittings.count("Eu") ? "file Eu/Ec/Es" : "oseledets";
    }
  } else {
    seg = oseledets_splitting(src.matrices(run), index);
    origin = "oseledets";
  }
  if (seg) {
    if (seg->p == index) seq = split_u_cs(*seg);
    else if (seg->p + seg->Ec.at(0).dim() == index) seq = split_uc_s(*seg);
    else fail(ErrorKind::InvalidDimension, "--index does not match a bundle boundary of the file splitting");
  }
  const int cap = std::min<int>(m_max, static_cast<int>(seq.mats.size()));
  std::vector<std::vector<double>> rows;
  std::optional<int> horizon;
  for (int m = 1; m <= cap; ++m) {
    const DominationReport r = is_m_dominated(seq, m);
    rows.push_back({double(m), r.passed ? 1.0 : 0.0, r.worst_ratio, double(r.worst_step)});
    if (r.passed && !horizon) horizon = m;
  }
  if (horizon != domination_horizon(seq, m_max)) fail(ErrorKind::Numeric, "domination horizon scan is inconsistent");
  Json res;
  res["splitting"] = origin;
  res["index"] = index;
  res["m_max"] = m_max;
  res["horizon"] = opt_json(horizon);
  if (horizon) {
    const DominationReport r = is_m_dominated(seq, *horizon);
    res["worst_ratio"] = r.worst_ratio;
    res["worst_step"] = r.worst_step;
  }
  if (seg && horizon && seg->Es.at(0).dim() == seg->p) {
    const DsPhReport ph = verify_ds_implies_ph(*seg, *horizon, std::min(64, seg->length()));
    res["ph_horizon"] = opt_json(ph.ph_horizon);
    if (ph.ph) {
      res["ph_min_unstable_conorm"] = ph.ph->min_unstable_conorm;
      res["ph_max_stable_norm"] = ph.ph->max_stable_norm;
    }
  }
  write_csv(run.csv_path, "m,passed,worst_ratio,worst_step", rows);
  return res;
}

Json cmd_classify(Run& run, SourceArgs& src, const std::string& family, bool conjugate, int index, Thresholds th, int m) {
  Segment s;
  if (!family.empty()) {
    s = family_segment(family, src.n, th.m0, conjugate, run.need_seed());
  } else if (!src.file.empty()) {
    run.add_input_file(src.file);
    s = segment_from_file(load_cocycle(src.file), index);
  } else {
    s = oseledets_splitting(src.matrices(run), index);
  }
  if (m <= 0) m = s.length();
  const SegmentClass cls = classify_segment(s, th, m);
  const WitnessReport w = verify_type_witness(cls, s);
  Json res;
  res["type"] = type_name(cls.tag);
  res["location"] = cls.location;
  res["m"] = m;
  Json constants = Json::object();
  for (const auto& [k, v] : cls.constants) constants[k] = v;
  res["constants"] = constants;
  if (!cls.rates.empty()) {
    res["rates"] = cls.rates;
    res["raw_rates"] = cls.raw_rates;
    res["shifts"] = cls.shifts;
  }
  res["witness_charts"] = cls.witnesses.size();
  res["witness_residual"] = {{"max", w.max},
                             {"worst_step", w.worst_step},
                             {"norm_excess", w.norm_excess},
                             {"symplectic", w.symplectic},
                             {"placement", w.placement},
                             {"normal_form", w.normal_form},
                             {"complement", w.complement},
                             {"clause", w.clause}};
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < w.per_step.size(); ++i) rows.push_back({double(i), w.per_step[i]});
  write_csv(run.csv_path, "chart,residual", rows);
  return res;
}

Json cmd_kickflow(Run& run, KickSpec spec, const std::string& point, double time) {
  spec.seed = run.need_seed();
  const KickHamiltonian k = make_kick_hamiltonian(spec);
  Json res;
  res["scale"] = k.scale;
  res["sigma"] = k.sigma;
  res["support_center"] = std::vector<double>(k.H.support_center.data(), k.H.support_center.data() + 4);
  res["support_radius"] = k.H.support_radius;
  res["hessian_bound"] = k.H.hessian_bound;
  res["gradient_bound"] = k.H.gradient_bound;
  std::size_t nonzero = 0;
  for (double x : k.nu.samples) nonzero += x != 0.0;
  res["step_law"] = {{"samples", k.nu.samples.size()},
                     {"mean", k.nu.mean},
                     {"variance", k.nu.variance},
                     {"support_radius", k.nu.support_radius},
                     {"support_limit", spec.alpha / 20},
                     {"nonzero_fraction", double(nonzero) / k.nu.samples.size()}};
  if (!point.empty()) {
    const std::vector<double> p = parse_list(point, "--point");
    if (p.size() != 4) fail(ErrorKind::InvalidDimension, "--point needs 4 coordinates");
    const FlowResult f = flow(k.H, time, Eigen::Map<const Vec>(p.data(), 4));
    res["flow"] = {{"time", time},
                   {"endpoint", std::vector<double>(f.endpoint.data(), f.endpoint.data() + 4)},
                   {"tangent", to_json(f.tangent)},
                   {"steps", f.steps},
                   {"symplectic_defect", f.symp_defect},
                   {"displacement", f.displacement},
                   {"displacement_bound", f.displacement_bound},
                   {"tangent_deviation", f.tangent_deviation},
                   {"tangent_bound", f.tangent_bound},
                   {"angle", centered_mod_pi(direction_angle(f.tangent.col(0)))}};
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < k.nu.samples.size(); ++i) rows.push_back({double(i), k.nu.samples[i]});
  write_csv(run.csv_path, "sample,angle", rows);
  return res;
}

Json cmd_walk(Run& run, const std::string& dist, double theta0, double radius, WalkConfig cfg) {
  cfg.seed = run.need_seed();
  cfg.steps = dist == "point" ? StepSource::point_mass(theta0) : StepSource::uniform(radius);
  const WalkResult r = find_m1(cfg);
  Json res;
  res["dist"] = dist;
  res["alpha"] = cfg.alpha;
  res["kappa"] = cfg.kappa;
  res["paths"] = r.paths;
  res["m_max"] = r.m_max;
  res["m1"] = opt_json(r.m1);
  res["target"] = cfg.kappa / 20;
  if (r.m1) {
    res["failure_prob_at_m1"] = r.failure_prob[*r.m1];
    res["ci95_halfwidth_at_m1"] = r.ci_halfwidth(*r.m1);
  }
  long censored = 0;
  for (long t : r.absorption) censored += t < 0;
  res["censored_paths"] = censored;
  res["final_failure_prob"] = r.failure_prob.back();
  res["diagnostic"] = r.diagnostic;
  std::vector<std::vector<double>> rows;
  for (long m = 0; m <= r.m_max; ++m) rows.push_back({double(m), r.failure_prob[m], r.std_error[m]});
  write_csv(run.csv_path, "m,failure_prob,std_error", rows);
  return res;
}

Json cmd_cascade(Run& run, CascadeConfig cfg, const std::string& rates, const std::string& trace_csv, bool verify) {
  cfg.seed = run.need_seed();
  cfg.rates = parse_list(rates, "--rates");
  const CascadeResult r = cascade_run(cfg);
  const CascadeSetup& s = r.setup;
  Json res;
  Json setup;
  setup["depth"] = s.depth;
  setup["depth_source"] = cfg.depth ? "given" : "estimated m1";
  if (s.walk) setup["walk"] = {{"paths", s.walk->paths}, {"m_max", s.walk->m_max}, {"m1", opt_json(s.walk->m1)}};
  setup["eta"] = s.eta;
  setup["kick_scale"] = s.kick_scale;
  setup["step_law"] = {{"samples", s.nu_box.samples.size()}, {"mean", s.nu_box.mean}, {"variance", s.nu_box.variance}, {"support_radius", s.nu_box.support_radius}};
  const CascadeConstants& c = s.constants;
  setup["constants"] = {{"K", c.K},
                        {"K_theta", c.K_theta},
                        {"K_map", c.K_map},
                        {"dh_lipschitz", c.dh_lipschitz},
                        {"kick_deviation", c.kick_deviation},
                        {"eps_prime", c.eps_prime},
                        {"tau", c.tau},
                        {"kick_steps", c.kick_steps},
                        {"kick_calibration", c.kick_calibration}};
  res["setup"] = setup;
  res["itineraries"] = cfg.itineraries;
  res["arrived_fraction"] = r.arrived_fraction;
  res["not_arrived"] = r.not_arrived;
  res["measure_loss"] = r.measure_loss;
  res["theta_histogram"] = r.theta_histogram;
  double max_offset = 0.0, min_margin = 1.0;
  long arrived = 0;
  for (const auto& it : r.itineraries) {
    min_margin = std::min(min_margin, it.min_cone_margin);
    if (!it.arrived) continue;
    ++arrived;
    max_offset = std::max(max_offset, circle_distance(it.final_theta, kPi / 2));
  }
  res["arrived_itineraries"] = arrived;
  res["max_final_offset"] = max_offset;
  res["min_cone_margin"] = min_margin;
  const NormDrop& d = r.wedge_drop;
  res["wedge_drop"] = {{"empty", d.empty},
                       {"horizon", d.horizon},
                       {"unstable_rate", d.unstable_rate},
                       {"unperturbed_rate", d.unperturbed_rate},
                       {"perturbed_rate", d.perturbed_rate},
                       {"gap", d.gap},
                       {"unperturbed_orbit_rate", d.unperturbed_orbit_rate},
                       {"perturbed_orbit_rate", d.perturbed_orbit_rate},
                       {"component_mass", d.component_mass},
                       {"component_rates", d.component_rates}};
  if (verify) {
    const CascadeVerification v = cascade_verify(r);
    res["verification"] = {{"max_residual", v.max_residual},
                           {"residual_bound", v.residual_bound},
                           {"max_arrived_increment", v.max_arrived_increment},
                           {"arrived_bound", v.arrived_bound},
                           {"max_measure_residual", v.max_measure_residual},
                           {"total_loss", v.total_loss},
                           {"loss_bound", v.loss_bound},
                           {"conservation", v.conservation},
                           {"trace_angle_error", v.trace_angle_error},
                           {"max_kick_deviation", v.max_kick_deviation},
                           {"eps_prime", v.eps_prime},
                           {"reruns", v.reruns},
                           {"deterministic", v.deterministic},
                           {"passed", v.passed}};
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t n = 0; n < r.arrived_by_level.size(); ++n)
    if (r.arrived_by_level[n] != 0.0 || r.loss_by_level[n] != 0.0) rows.push_back({double(n), r.arrived_by_level[n], r.loss_by_level[n]});
  write_csv(run.csv_path, "level,arrived,loss", rows);
  rows.clear();
  for (const auto& t : r.trace)
    rows.push_back({double(t.itinerary), double(t.level), t.u[0], t.u[1], t.u[2], t.u[3], t.theta, t.step_angle, t.increment, t.residual,
                    double(t.k_block), double(t.k_box), t.fringe, t.weight, t.arrived ? 1.0 : 0.0});
  write_csv(trace_csv, "itinerary,level,u1,u2,u3,u4,theta,step_angle,increment,residual,k_block,k_box,fringe,weight,arrived", rows);
  return res;
}

int run_main(int argc, char** argv) {
  if (argc < 2 || std::find(kCommands.begin(), kCommands.end(), argv[1]) == kCommands.end()) {
    if (argc >= 2 && (std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h")) {
      std::cout << kUsage;
      return 0;
    }
    if (argc >= 2 && std::string(argv[1]) == "--version") {
      std::cout << kVersion << '\n';
      return 0;
    }
    std::cerr << (argc < 2 ? "missing command\n" : "unknown command '" + std::string(argv[1]) + "'\n") << kUsage;
    return kExitUsage;
  }

  Run run;
  run.command = argv[1];
  CLI::App app{"symcocycle " + run.command, "symcocycle " + run.command};
  app.add_option("--out", run.out_path, "JSON report path (default: stdout)");
  app.add_option("--csv", run.csv_path, "CSV series path");
  app.add_option("--seed", run.seed, "RNG seed (required for randomized commands)");

  SourceArgs src;
  std::string family, method = "qr", save, point, rates = "2", trace_csv, dist = "uniform";
  bool conjugate = false, no_verify = false, no_grow = false;
  int index = 1, m_max = 64, m = 0;
  double time = 1.0, theta0 = 0.0, radius = 0.01;
  Thresholds th = family::thresholds();
  KickSpec kick;
  WalkConfig walk;
  walk.paths = 100000;
  CascadeConfig cascade;

  const std::string& cmd = run.command;
  if (cmd == "gen" || cmd == "exponents" || cmd == "dominate" || cmd == "classify") {
    src.add(&app);
    if (cmd == "classify" || cmd == "dominate") src.n = 40;
  }
  if (cmd == "gen" || cmd == "classify") {
    app.add_option("--family", family, "segment family: angle_pinch | rate_swap | identity_plane | conformal")
        ->check(CLI::IsMember({"angle_pinch", "rate_swap", "identity_plane", "conformal"}));
    app.add_flag("--conjugate", conjugate, "conjugate the family by a random bounded symplectic matrix");
    app.add_option("--m0", th.m0, "type-III window")->check(CLI::PositiveNumber);
  }
  if (cmd == "gen") app.add_option("--save", save, "output cocycle file")->required();
  if (cmd == "exponents")
    app.add_option("--method", method, "qr | svd | exact")->check(CLI::IsMember({"qr", "svd", "exact"}));
  if (cmd == "dominate" || cmd == "classify") app.add_option("--index", index, "index p of the splitting")->check(CLI::PositiveNumber);
  if (cmd == "dominate") app.add_option("--m-max", m_max, "largest m tried")->check(CLI::PositiveNumber);
  if (cmd == "classify") {
    app.add_option("--alpha", th.alpha, "angle threshold");
    app.add_option("--K2", th.K2, "type-II constant");
    app.add_option("--tau", th.tau, "floor for corrected type-IV rates");
    app.add_option("--m", m, "segment length examined (default: all)");
  }
  if (cmd == "kickflow") {
    app.add_option("--delta", kick.delta, "Hessian budget");
    app.add_option("--alpha", kick.alpha, "step-law support is alpha/20");
    app.add_option("--sigma", kick.sigma, "inner radius of the bump");
    app.add_option("--samples", kick.samples, "step-law samples")->check(CLI::PositiveNumber);
    app.add_option("--point", point, "flow this point x1,x2,x3,x4");
    app.add_option("--time", time, "flow time");
  }
  if (cmd == "walk") {
    app.add_option("--dist", dist, "point | uniform")->check(CLI::IsMember({"point", "uniform"}));
    app.add_option("--theta0", theta0, "point-mass step");
    app.add_option("--radius", radius, "uniform steps on (-radius, radius)");
    app.add_option("--alpha", walk.alpha, "absorbing window is alpha/20 around pi/2");
    app.add_option("--kappa", walk.kappa, "m1 target is kappa/20");
    app.add_option("--paths", walk.paths, "Monte Carlo paths")->check(CLI::PositiveNumber);
    app.add_option("--m-max", walk.m_max, "initial horizon")->check(CLI::PositiveNumber);
    app.add_option("--m-cap", walk.m_cap, "largest horizon of the doubling search")->check(CLI::PositiveNumber);
    app.add_flag("--no-grow", no_grow, "do not double m_max when m1 is absent");
  }
  if (cmd == "cascade") {
    app.add_option("--rates", rates, "rates c_i, comma list cycled over levels");
    app.add_option("--delta", cascade.delta, "Hessian budget of the kick (0 disables it)");
    app.add_option("--alpha", cascade.alpha, "alpha");
    app.add_option("--kappa", cascade.kappa, "kappa");
    app.add_option("--depth", cascade.depth, "levels m (default: estimated m1)");
    app.add_option("--grid", cascade.grid, "cells per axis per subdivision");
    app.add_option("--eta", cascade.eta, "per-level loss budget (default: the largest admissible)");
    app.add_option("--itineraries", cascade.itineraries, "sampled itineraries")->check(CLI::PositiveNumber);
    app.add_option("--traced", cascade.traced, "itineraries with per-level records");
    app.add_option("--trace-levels", cascade.trace_levels, "record cap per traced itinerary");
    app.add_option("--trace-csv", trace_csv, "CSV of per-level records of traced itineraries");
    app.add_option("--nu-samples", cascade.nu_samples, "step-law samples behind the m1 estimate");
    app.add_option("--walk-paths", cascade.walk_paths, "paths of the m1 estimate");
    app.add_option("--unstable-rate", cascade.unstable_rate, "c_u of the post-arrival map");
    app.add_option("--post-steps", cascade.post_steps, "post-arrival steps of the norm-drop report");
    app.add_option("--kick-seed", cascade.kick_seed, "seed of the kick construction");
    app.add_option("--hist-bins", cascade.hist_bins, "bins of the final-Theta histogram");
    app.add_flag("--no-verify", no_verify, "skip cascade_verify");
  }

  try {
    app.parse(argc - 1, argv + 1);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }
  walk.grow = !no_grow;

  // Canonical argv: the command and every option but the output paths, in order.
  run.digest_parts.push_back(std::string("version:") + kVersion);
  run.digest_parts.push_back("command:" + cmd);
  for (int i = 2; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" || a == "--csv" || a == "--trace-csv") {
      ++i;
      continue;
    }
    if (a.rfind("--out=", 0) == 0 || a.rfind("--csv=", 0) == 0 || a.rfind("--trace-csv=", 0) == 0) continue;
    run.digest_parts.push_back("arg:" + a);
  }

  Json results;
  if (cmd == "gen") results = cmd_gen(run, src, family, th.m0, conjugate, save);
  else if (cmd == "exponents") results = cmd_exponents(run, src, method);
  else if (cmd == "dominate") results = cmd_dominate(run, src, index, m_max);
  else if (cmd == "classify") results = cmd_classify(run, src, family, conjugate, index, th, m);
  else if (cmd == "kickflow") results = cmd_kickflow(run, kick, point, time);
  else if (cmd == "walk") results = cmd_walk(run, dist, theta0, radius, walk);
  else results = cmd_cascade(run, cascade, rates, trace_csv, !no_verify);

  Json report;
  report["command"] = cmd;
  report["inputs_digest"] = run.digest();
  report["results"] = results;
  report["version"] = kVersion;
  const std::string text = report.dump(2) + "\n";
  if (run.out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(run.out_path);
    if (!out) fail(ErrorKind::Format, "cannot write " + run.out_path);
    out << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const symc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_validation() ? kExitValidation : kExitNumeric;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
}
