// hqh command-line tool: fit sign-quantized projection hashes, encode
// datasets to packed binary codes, run retrieval evaluations, generate
// synthetic clustered data, and check the analytic guarantees by Monte
// Carlo.
//
// Exit codes: 0 on success (and on passing verification runs), 1 when a
// verification run fails its bound checks, 2 on usage or I/O errors.

#include <hqh/core.hpp>
#include <hqh/data.hpp>
#include <hqh/eval.hpp>
#include <hqh/hashing.hpp>
#include <hqh/rotation.hpp>
#include <hqh/subspace.hpp>
#include <hqh/theory.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

// Insertion-ordered JSON keeps config echoes byte-stable across runs.
using json = nlohmann::ordered_json;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string resolve_format(const std::string& path, const std::string& format) {
  if (format != "auto") return format;
  if (ends_with(path, ".fvecs")) return "fvecs";
  if (ends_with(path, ".csv") || ends_with(path, ".txt")) return "csv";
  throw std::runtime_error("cannot infer data format of '" + path +
                           "'; pass --format fvecs|csv");
}

hqh::DataMatrix load_dataset(const std::string& path, const std::string& format,
                             bool has_header) {
  std::string fmt = resolve_format(path, format);
  if (fmt == "fvecs") return hqh::load_fvecs(path);
  if (fmt == "csv") return hqh::load_csv(path, has_header);
  throw std::runtime_error("unknown data format '" + fmt + "'");
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

void emit(const json& report, const std::string& out_path) {
  std::string text = report.dump(2);
  text.push_back('\n');
  std::cout << text;
  if (!out_path.empty()) write_text_file(out_path, text);
}

std::vector<hqh::RotationMethod> parse_methods(
    const std::vector<std::string>& names) {
  std::vector<hqh::RotationMethod> methods;
  methods.reserve(names.size());
  for (const auto& name : names)
    methods.push_back(hqh::rotation_method_from_string(name));
  return methods;
}

int effective_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

json covariance_diag_summary(const hqh::Matrix& sigma, double tau) {
  hqh::Vector diag = sigma.diagonal();
  double max_dev = (diag.array() - tau).abs().maxCoeff();
  return json{{"tau", tau},
              {"diag_min", diag.minCoeff()},
              {"diag_max", diag.maxCoeff()},
              {"max_abs_dev_from_tau", max_dev},
              {"max_rel_dev_from_tau", tau > 0.0 ? max_dev / tau : 0.0}};
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs {
  std::string input;
  std::string format = "auto";
  bool has_header = false;
  std::string method = "unifdiag";
  hqh::Index c = 16;
  std::uint64_t seed = 0;
  int itq_iters = 50;
  double isohash_step = 1e-3;
  int isohash_iters = 2000;
  double isohash_tol = 1e-6;
  std::string out;
  std::string givens_csv;
};

int run_fit(const FitArgs& a) {
  hqh::DataMatrix X = load_dataset(a.input, a.format, a.has_header);

  hqh::BatchPipelineConfig cfg;
  cfg.c = a.c;
  cfg.rotation_method = hqh::rotation_method_from_string(a.method);
  cfg.itq_iters = a.itq_iters;
  cfg.isohash.step_size = a.isohash_step;
  cfg.isohash.max_iters = a.isohash_iters;
  cfg.isohash.tol = a.isohash_tol;
  cfg.seed = a.seed;

  hqh::HashModel model = hqh::fit_batch(X, cfg);
  hqh::save_model(model, a.out);

  if (!a.givens_csv.empty()) {
    // Re-derive the uniformization schedule for diagnostics; the fit is
    // deterministic, so this matches the rotation stored in the model.
    hqh::UnifDiagResult ud = hqh::unifdiag_fit(model.covariance);
    std::ostringstream csv;
    csv << "step,i,j,theta,max_abs_dev_after\n";
    char buf[64];
    for (std::size_t r = 0; r < ud.steps.size(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", ud.steps[r].theta);
      csv << r << ',' << ud.steps[r].i << ',' << ud.steps[r].j << ',' << buf;
      std::snprintf(buf, sizeof buf, "%.17g", ud.diag_residuals[r]);
      csv << ',' << buf << '\n';
    }
    write_text_file(a.givens_csv, csv.str());
  }

  json config{{"command", "fit"},
              {"input", a.input},
              {"format", resolve_format(a.input, a.format)},
              {"has_header", a.has_header},
              {"method", hqh::to_string(cfg.rotation_method)},
              {"c", cfg.c},
              {"seed", cfg.seed},
              {"itq_iters", cfg.itq_iters},
              {"isohash_step", cfg.isohash.step_size},
              {"isohash_iters", cfg.isohash.max_iters},
              {"isohash_tol", cfg.isohash.tol},
              {"out", a.out}};

  const hqh::Matrix rotated = model.transform.R * model.covariance.sigma *
                              model.transform.R.transpose();
  json report{
      {"config", config},
      {"data", json{{"n", X.n()}, {"d", X.d()}}},
      {"model",
       json{{"path", a.out},
            {"c", model.basis.c()},
            {"d", model.basis.d()},
            {"method", hqh::to_string(model.transform.provenance)},
            {"basis_orthonormality_error", model.basis.orthonormality_error()}}},
      {"projected_covariance",
       covariance_diag_summary(model.covariance.sigma, model.covariance.tau)},
      {"rotated_covariance",
       covariance_diag_summary(rotated, model.covariance.tau)}};
  emit(report, "");
  return 0;
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

struct EncodeArgs {
  std::string model;
  std::string input;
  std::string format = "auto";
  bool has_header = false;
  int threads = 0;
  std::string out;
};

int run_encode(const EncodeArgs& a) {
  hqh::HashModel model = hqh::load_model(a.model);
  hqh::DataMatrix X = load_dataset(a.input, a.format, a.has_header);
  std::vector<hqh::BinaryCode> codes =
      hqh::encode_all(model, X, effective_threads(a.threads));
  hqh::save_codes(codes, a.out);

  json config{{"command", "encode"}, {"model", a.model},
              {"input", a.input},    {"format", resolve_format(a.input, a.format)},
              {"has_header", a.has_header},
              {"threads", effective_threads(a.threads)},
              {"out", a.out}};
  json report{{"config", config},
              {"n", codes.size()},
              {"c", model.basis.c()},
              {"out", a.out}};
  emit(report, "");
  return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  int clusters = 6;
  int per_cluster = 1000;
  int d = 960;
  double centroid_scale = 10.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string labels_out;
  std::string format = "auto";
};

int run_synth(const SynthArgs& a) {
  hqh::ClusterSpec spec;
  spec.n_clusters = a.clusters;
  spec.points_per_cluster = a.per_cluster;
  spec.d = a.d;
  spec.centroid_scale = a.centroid_scale;
  spec.noise_sigma = a.noise_sigma;
  spec.seed = a.seed;
  hqh::LabeledDataset dataset = hqh::generate_clusters(spec);

  std::string fmt = resolve_format(a.out, a.format);
  if (fmt == "fvecs")
    hqh::save_fvecs(dataset.data, a.out);
  else
    hqh::save_csv(dataset.data, a.out);

  if (!a.labels_out.empty()) {
    std::ostringstream labels;
    for (int label : dataset.labels) labels << label << '\n';
    write_text_file(a.labels_out, labels.str());
  }

  json config{{"command", "synth"},
              {"clusters", a.clusters},
              {"per_cluster", a.per_cluster},
              {"d", a.d},
              {"centroid_scale", a.centroid_scale},
              {"noise_sigma", a.noise_sigma},
              {"seed", a.seed},
              {"out", a.out},
              {"labels_out", a.labels_out},
              {"format", fmt}};
  json report{{"config", config},
              {"n", dataset.data.n()},
              {"d", dataset.data.d()},
              {"out", a.out}};
  emit(report, "");
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string input;
  std::string format = "auto";
  bool has_header = false;
  std::string mode = "batch";
  std::vector<std::string> methods{"none", "random", "itq", "isohash",
                                   "unifdiag"};
  std::vector<hqh::Index> c_list{8, 16, 32, 64};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  hqh::Index queries = 1000;
  double frac = 0.01;
  hqh::Index k = 2000;
  int threads = 0;
  bool threshold_over_queries = false;
  hqh::Index checkpoint = 5;
  hqh::Index max_samples = 0;
  double beta = 0.99;
  int refit_every = 5;
  int itq_iters = 50;
  std::string timing = "zero";
  std::string out;
};

int run_eval(const EvalArgs& a) {
  hqh::DataMatrix data = load_dataset(a.input, a.format, a.has_header);
  std::vector<hqh::RotationMethod> methods = parse_methods(a.methods);

  hqh::EvalProtocol protocol;
  protocol.n_queries = a.queries;
  protocol.frac = a.frac;
  protocol.k = a.k;
  protocol.threads = effective_threads(a.threads);
  protocol.threshold_over_queries = a.threshold_over_queries;
  protocol.measure_wall = (a.timing == "real");

  json config{{"command", "eval"},
              {"input", a.input},
              {"format", resolve_format(a.input, a.format)},
              {"has_header", a.has_header},
              {"mode", a.mode},
              {"methods", a.methods},
              {"c_list", a.c_list},
              {"seeds", a.seeds},
              {"queries", a.queries},
              {"frac", a.frac},
              {"k", a.k},
              {"threads", protocol.threads},
              {"threshold_over_queries", a.threshold_over_queries},
              {"checkpoint", a.checkpoint},
              {"max_samples", a.max_samples},
              {"beta", a.beta},
              {"refit_every", a.refit_every},
              {"itq_iters", a.itq_iters},
              {"timing", a.timing},
              {"seed_derivation", "per-seed labeled expansion of each root"},
              {"out", a.out}};

  hqh::ExperimentReport report;
  if (a.mode == "batch") {
    hqh::BatchPipelineConfig base;
    base.itq_iters = a.itq_iters;
    report = hqh::run_batch_experiment(data, methods, a.c_list, a.seeds,
                                       protocol, base);
  } else if (a.mode == "online") {
    hqh::StreamPipelineConfig base;
    base.beta = a.beta;
    base.refit_every = a.refit_every;
    report.mode = "online";
    report.protocol = protocol;
    for (hqh::Index c : a.c_list) {
      hqh::ExperimentReport part =
          hqh::run_online_experiment(data, methods, c, a.seeds, a.checkpoint,
                                     a.max_samples, protocol, base);
      report.rows.insert(report.rows.end(), part.rows.begin(), part.rows.end());
    }
  } else {
    throw std::runtime_error("eval: mode must be batch or online, got '" +
                             a.mode + "'");
  }

  std::ostringstream csv;
  hqh::write_report_csv(report, csv, config.dump());
  write_text_file(a.out, csv.str());

  // Aggregate per (method, c): mean MAP across seeds, final checkpoint only
  // for online runs (plus the first-checkpoint mean for trend reading).
  std::map<std::pair<std::string, hqh::Index>,
           std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const auto& row : report.rows) {
    auto& group = groups[{row.method, row.c}];
    group.first.push_back(row.map);  // provisional; reduced below
    (void)group.second;
  }
  if (a.mode == "online") {
    groups.clear();
    // first/last checkpoint per (method, c, seed)
    std::map<std::tuple<std::string, hqh::Index, std::uint64_t>,
             std::pair<const hqh::ReportRow*, const hqh::ReportRow*>>
        ends;
    for (const auto& row : report.rows) {
      auto& slot = ends[{row.method, row.c, row.seed}];
      if (!slot.first || row.checkpoint < slot.first->checkpoint)
        slot.first = &row;
      if (!slot.second || row.checkpoint > slot.second->checkpoint)
        slot.second = &row;
    }
    for (const auto& [key, slot] : ends) {
      auto& group = groups[{std::get<0>(key), std::get<1>(key)}];
      group.first.push_back(slot.second->map);
      group.second.push_back(slot.first->map);
    }
  }
  json summary = json::array();
  for (const auto& [key, group] : groups) {
    double final_mean = 0.0;
    for (double v : group.first) final_mean += v;
    final_mean /= static_cast<double>(group.first.size());
    json entry{{"method", key.first},
               {"c", key.second},
               {"mean_map", final_mean},
               {"runs", group.first.size()}};
    if (!group.second.empty()) {
      double first_mean = 0.0;
      for (double v : group.second) first_mean += v;
      first_mean /= static_cast<double>(group.second.size());
      entry["mean_map_first_checkpoint"] = first_mean;
    }
    summary.push_back(std::move(entry));
  }

  json out{{"config", config},
           {"rows", report.rows.size()},
           {"out", a.out},
           {"summary", summary}};
  emit(out, "");
  return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string theorem;
  std::vector<double> sigma_diag;
  double sigma_scale = 1.0;
  hqh::Index c = 16;
  double epsilon = 0.05;
  std::int64_t trials = 100000;
  int rotations = 1000;
  std::uint64_t seed = 0;
  // th3 parameters
  double l = 1.0;
  double delta = 0.01;
  double eps_pca = 0.02;
  double rho = 0.1;
  double eta = 0.1;
  hqh::Index kept_dims = 8;
  std::string out;
};

hqh::Matrix build_sigma(const VerifyArgs& a) {
  if (!a.sigma_diag.empty()) {
    hqh::Index c = static_cast<hqh::Index>(a.sigma_diag.size());
    hqh::Matrix sigma = hqh::Matrix::Zero(c, c);
    for (hqh::Index i = 0; i < c; ++i) sigma(i, i) = a.sigma_diag[i];
    return sigma;
  }
  return hqh::Matrix::Identity(a.c, a.c) * a.sigma_scale;
}

json orthant_to_json(const hqh::OrthantBoundReport& r) {
  return json{
      {"epsilon", r.epsilon},
      {"n_mc", r.n_mc},
      {"gamma", std::vector<double>(r.gamma.begin(), r.gamma.end())},
      {"empirical_p",
       std::vector<double>(r.empirical_p.begin(), r.empirical_p.end())},
      {"analytic_bound",
       std::vector<double>(r.analytic_bound.begin(), r.analytic_bound.end())},
      {"std_err", std::vector<double>(r.std_err.begin(), r.std_err.end())},
      {"sum_inverse_gamma", r.sum_inverse_gamma},
      {"regime_ok", r.regime_ok},
      {"pass", r.pass}};
}

int run_verify(const VerifyArgs& a) {
  json config{{"command", "verify"},
              {"theorem", a.theorem},
              {"seed", a.seed},
              {"trials", a.trials}};

  json report;
  bool pass = false;
  if (a.theorem == "th1") {
    hqh::GaussianDataSpec spec{build_sigma(a), a.seed};
    config["sigma_diag"] =
        std::vector<double>(spec.sigma_th.diagonal().begin(),
                            spec.sigma_th.diagonal().end());
    config["epsilon"] = a.epsilon;
    config["rotations"] = a.rotations;

    hqh::UnifDiagResult ud =
        hqh::unifdiag_fit(hqh::CovarianceState(spec.sigma_th, true));
    hqh::OrthantBoundReport identity = hqh::verify_orthant_bound(
        spec, hqh::OrthogonalTransform::identity(spec.c()), a.epsilon,
        a.trials);
    hqh::OrthantBoundReport uniformized =
        hqh::verify_orthant_bound(spec, ud.transform, a.epsilon, a.trials);
    hqh::UniformizationOptimalityReport opt =
        hqh::check_uniformization_optimality(spec, a.rotations, a.seed);

    pass = identity.pass && uniformized.pass && opt.pass;
    report = json{{"config", config},
                  {"orthant_identity", orthant_to_json(identity)},
                  {"orthant_uniformized", orthant_to_json(uniformized)},
                  {"optimality",
                   json{{"uniform_sum", opt.uniform_sum},
                        {"closed_form", opt.closed_form},
                        {"best_random_sum", opt.best_random_sum},
                        {"worst_margin", opt.worst_margin},
                        {"n_rotations", opt.n_rotations},
                        {"pass", opt.pass}}},
                  {"pass", pass}};
  } else if (a.theorem == "th2") {
    hqh::GaussianDataSpec spec{build_sigma(a), a.seed};
    config["sigma_diag"] =
        std::vector<double>(spec.sigma_th.diagonal().begin(),
                            spec.sigma_th.diagonal().end());
    config["epsilon"] = a.epsilon;
    config["pair_sampler"] =
        "v1 from the population, v2 = v1 + epsilon * w * u, u uniform on the "
        "sphere, w uniform in [0,1]";

    hqh::UnifDiagResult ud =
        hqh::unifdiag_fit(hqh::CovarianceState(spec.sigma_th, true));
    hqh::Th2Report th2 =
        hqh::verify_th2(spec, ud.transform, a.epsilon, a.trials);
    pass = th2.pass;
    report = json{{"config", config},
                  {"empirical", th2.empirical},
                  {"bound", th2.bound},
                  {"std_err", th2.std_err},
                  {"vacuous", th2.vacuous},
                  {"pass", pass}};
  } else if (a.theorem == "th3") {
    hqh::Th3Params params;
    params.l = a.l;
    params.delta = a.delta;
    params.eps_pca = a.eps_pca;
    params.rho = a.rho;
    params.eta = a.eta;
    params.c = a.c;
    config["l"] = a.l;
    config["delta"] = a.delta;
    config["eps_pca"] = a.eps_pca;
    config["rho"] = a.rho;
    config["eta"] = a.eta;
    config["c"] = a.c;
    config["kept_dims"] = a.kept_dims;

    hqh::Th3Report th3 =
        hqh::verify_th3(params, a.trials, a.seed, a.kept_dims);
    pass = th3.pass;
    report = json{{"config", config},
                  {"A", th3.A},
                  {"A_raw", th3.A_raw},
                  {"theta_max", th3.theta_max},
                  {"p", th3.p},
                  {"q", th3.q},
                  {"azuma_bound", th3.azuma_bound},
                  {"vacuous", th3.vacuous},
                  {"empirical_tail", th3.empirical_tail},
                  {"tail_std_err", th3.tail_std_err},
                  {"agreement_gap", th3.agreement_gap},
                  {"agreement_se", th3.agreement_se},
                  {"max_angle_seen", th3.max_angle_seen},
                  {"angles_ok", th3.angles_ok},
                  {"pass", pass}};
  } else {
    throw std::runtime_error("verify: theorem must be th1, th2 or th3, got '" +
                             a.theorem + "'");
  }

  emit(report, a.out);
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// nearzero
// ---------------------------------------------------------------------------

struct NearZeroArgs {
  std::string model;
  std::string input;
  std::string format = "auto";
  bool has_header = false;
  std::vector<double> eps_grid{0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35};
  std::string out;
};

int run_nearzero(const NearZeroArgs& a) {
  hqh::HashModel model = hqh::load_model(a.model);
  hqh::DataMatrix X = load_dataset(a.input, a.format, a.has_header);
  if (X.d() != model.basis.d())
    throw std::runtime_error("nearzero: data dimension " +
                             std::to_string(X.d()) + " does not match model " +
                             std::to_string(model.basis.d()));

  hqh::Matrix Y = model.effective_projection() *
                  (X.values.colwise() - model.centering.mean());
  hqh::NearZeroCdf cdf = hqh::near_zero_cdf(Y, a.eps_grid);

  json config{{"command", "nearzero"},
              {"model", a.model},
              {"input", a.input},
              {"format", resolve_format(a.input, a.format)},
              {"has_header", a.has_header},
              {"eps_grid", a.eps_grid},
              {"out", a.out}};

  std::ostringstream csv;
  csv << "# " << config.dump() << '\n' << "epsilon,fraction\n";
  char buf[64];
  for (std::size_t g = 0; g < cdf.epsilon.size(); ++g) {
    std::snprintf(buf, sizeof buf, "%.17g", cdf.epsilon[g]);
    csv << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", cdf.fraction[g]);
    csv << buf << '\n';
  }
  write_text_file(a.out, csv.str());

  json report{{"config", config},
              {"entries", cdf.entries},
              {"epsilon", cdf.epsilon},
              {"fraction", cdf.fraction},
              {"out", a.out}};
  emit(report, "");
  return 0;
}

// ---------------------------------------------------------------------------
// info
// ---------------------------------------------------------------------------

int run_info(const std::string& path) {
  std::vector<std::uint8_t> bytes = hqh::detail::read_file_bytes(path);
  if (bytes.size() >= 4 && bytes[0] == 'H' && bytes[1] == 'Q' &&
      bytes[2] == 'H' && bytes[3] == '1') {
    hqh::HashModel model = hqh::deserialize_model(bytes.data(), bytes.size());
    const hqh::Matrix rotated = model.transform.R * model.covariance.sigma *
                                model.transform.R.transpose();
    json report{
        {"config", json{{"command", "info"}, {"path", path}}},
        {"kind", "model"},
        {"d", model.basis.d()},
        {"c", model.basis.c()},
        {"method", hqh::to_string(model.transform.provenance)},
        {"centering_count", model.centering.count()},
        {"basis_orthonormality_error", model.basis.orthonormality_error()},
        {"covariance_normalized", model.covariance.normalized},
        {"projected_covariance",
         covariance_diag_summary(model.covariance.sigma, model.covariance.tau)},
        {"rotated_covariance",
         covariance_diag_summary(rotated, model.covariance.tau)}};
    emit(report, "");
    return 0;
  }
  if (bytes.size() >= 4 && bytes[0] == 'H' && bytes[1] == 'Q' &&
      bytes[2] == 'C' && bytes[3] == '1') {
    std::vector<hqh::BinaryCode> codes =
        hqh::deserialize_codes(bytes.data(), bytes.size());
    json report{{"config", json{{"command", "info"}, {"path", path}}},
                {"kind", "codes"},
                {"n", codes.size()},
                {"c", codes.empty() ? 0u : codes.front().size()}};
    emit(report, "");
    return 0;
  }
  throw std::runtime_error("'" + path +
                           "' is neither a model nor a codes file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Sign-quantized projection hashing: PCA or streamed subspace, learned "
      "rotation, packed binary codes, retrieval evaluation and bound "
      "verification."};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Config file (INI) merged at lower precedence than flags");
  app.failure_message(CLI::FailureMessage::help);

  FitArgs fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit a hash model on a dataset");
  fit_cmd->add_option("--input", fit.input, "Dataset path (fvecs or csv)")
      ->required();
  fit_cmd->add_option("--format", fit.format, "Input format: auto|fvecs|csv")
      ->check(CLI::IsMember({"auto", "fvecs", "csv"}));
  fit_cmd->add_flag("--has-header", fit.has_header, "CSV input has a header row");
  fit_cmd
      ->add_option("--method", fit.method,
                   "Rotation: none|random|itq|isohash|unifdiag")
      ->check(CLI::IsMember({"none", "pca", "identity", "random", "itq",
                             "isohash", "unifdiag"}));
  fit_cmd->add_option("-c,--code-bits", fit.c, "Code length in bits");
  fit_cmd->add_option("--seed", fit.seed, "Root seed");
  fit_cmd->add_option("--itq-iters", fit.itq_iters, "ITQ alternations");
  fit_cmd->add_option("--isohash-step", fit.isohash_step,
                      "Initial descent step for the isotropic rotation");
  fit_cmd->add_option("--isohash-iters", fit.isohash_iters,
                      "Descent iteration budget");
  fit_cmd->add_option("--isohash-tol", fit.isohash_tol,
                      "Relative residual target");
  fit_cmd->add_option("--out", fit.out, "Output model path")->required();
  fit_cmd->add_option("--givens-csv", fit.givens_csv,
                      "Write the uniformization schedule to this CSV");

  EncodeArgs encode;
  CLI::App* encode_cmd =
      app.add_subcommand("encode", "Encode a dataset with a fitted model");
  encode_cmd->add_option("--model", encode.model, "Model path")->required();
  encode_cmd->add_option("--input", encode.input, "Dataset path")->required();
  encode_cmd->add_option("--format", encode.format, "Input format: auto|fvecs|csv")
      ->check(CLI::IsMember({"auto", "fvecs", "csv"}));
  encode_cmd->add_flag("--has-header", encode.has_header,
                       "CSV input has a header row");
  encode_cmd->add_option("--threads", encode.threads,
                         "Worker threads (0 = all cores)");
  encode_cmd->add_option("--out", encode.out, "Output codes path")->required();

  SynthArgs synth;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic clustered dataset");
  synth_cmd->add_option("--clusters", synth.clusters, "Number of clusters");
  synth_cmd->add_option("--per-cluster", synth.per_cluster,
                        "Points per cluster");
  synth_cmd->add_option("-d,--dim", synth.d, "Ambient dimension");
  synth_cmd->add_option("--centroid-scale", synth.centroid_scale,
                        "Centroid coordinates drawn uniform in [-s, s]");
  synth_cmd->add_option("--noise-sigma", synth.noise_sigma,
                        "Within-cluster noise deviation");
  synth_cmd->add_option("--seed", synth.seed, "Root seed");
  synth_cmd->add_option("--out", synth.out, "Output dataset path")->required();
  synth_cmd->add_option("--labels-out", synth.labels_out,
                        "Optional labels path, one cluster index per line");
  synth_cmd->add_option("--format", synth.format, "Output format: auto|fvecs|csv")
      ->check(CLI::IsMember({"auto", "fvecs", "csv"}));

  EvalArgs eval;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Retrieval evaluation sweep (CSV report)");
  eval_cmd->add_option("--input", eval.input, "Dataset path")->required();
  eval_cmd->add_option("--format", eval.format, "Input format: auto|fvecs|csv")
      ->check(CLI::IsMember({"auto", "fvecs", "csv"}));
  eval_cmd->add_flag("--has-header", eval.has_header,
                     "CSV input has a header row");
  eval_cmd->add_option("--mode", eval.mode, "batch|online")
      ->check(CLI::IsMember({"batch", "online"}));
  eval_cmd
      ->add_option("--methods", eval.methods,
                   "Comma-separated rotation methods")
      ->delimiter(',');
  eval_cmd->add_option("--c-list", eval.c_list, "Comma-separated code lengths")
      ->delimiter(',');
  eval_cmd->add_option("--seeds", eval.seeds, "Comma-separated root seeds")
      ->delimiter(',');
  eval_cmd->add_option("--queries", eval.queries, "Held-out query count");
  eval_cmd->add_option("--frac", eval.frac,
                       "Neighborhood size as a fraction of the training set");
  eval_cmd->add_option("-k,--top-k", eval.k, "MAP cutoff");
  eval_cmd->add_option("--threads", eval.threads,
                       "Worker threads (0 = all cores)");
  eval_cmd->add_flag("--threshold-over-queries", eval.threshold_over_queries,
                     "Average the k-th neighbor distance over queries instead "
                     "of training points");
  eval_cmd->add_option("--checkpoint", eval.checkpoint,
                       "Online: evaluate every this many samples");
  eval_cmd->add_option("--max-samples", eval.max_samples,
                       "Online: stop after this many samples (0 = all)");
  eval_cmd->add_option("--beta", eval.beta, "Online: forgetting factor");
  eval_cmd->add_option("--refit-every", eval.refit_every,
                       "Online: rotation refit cadence");
  eval_cmd->add_option("--itq-iters", eval.itq_iters, "ITQ alternations");
  eval_cmd->add_option("--timing", eval.timing,
                       "real wall-clock in reports, or zero for byte-stable "
                       "output")
      ->check(CLI::IsMember({"real", "zero"}));
  eval_cmd->add_option("--out", eval.out, "Output CSV path")->required();

  VerifyArgs verify;
  CLI::App* verify_cmd = app.add_subcommand(
      "verify", "Monte-Carlo check of an analytic guarantee (JSON report)");
  verify_cmd->add_option("theorem", verify.theorem, "th1|th2|th3")->required();
  verify_cmd
      ->add_option("--sigma-diag", verify.sigma_diag,
                   "Covariance diagonal entries (overrides --sigma-scale/-c)")
      ->delimiter(',');
  verify_cmd->add_option("--sigma-scale", verify.sigma_scale,
                         "Covariance = scale * identity");
  verify_cmd->add_option("-c,--code-bits", verify.c, "Dimension / code length");
  verify_cmd->add_option("--epsilon", verify.epsilon,
                         "Margin (th1) or pair distance cap (th2)");
  verify_cmd->add_option("--trials", verify.trials, "Monte-Carlo trials");
  verify_cmd->add_option("--rotations", verify.rotations,
                         "th1: random rotations for the optimality check");
  verify_cmd->add_option("--seed", verify.seed, "Root seed");
  verify_cmd->add_option("--l", verify.l, "th3: nominal norm");
  verify_cmd->add_option("--delta", verify.delta, "th3: norm spread");
  verify_cmd->add_option("--eps-pca", verify.eps_pca,
                         "th3: discarded energy fraction");
  verify_cmd->add_option("--rho", verify.rho, "th3: pair distance");
  verify_cmd->add_option("--eta", verify.eta, "th3: agreement slack");
  verify_cmd->add_option("--kept-dims", verify.kept_dims,
                         "th3: kept subspace dimension of the generator");
  verify_cmd->add_option("--out", verify.out, "Also write the JSON here");

  NearZeroArgs nearzero;
  CLI::App* nearzero_cmd = app.add_subcommand(
      "nearzero", "Near-zero CDF of projected coefficients (CSV)");
  nearzero_cmd->add_option("--model", nearzero.model, "Model path")->required();
  nearzero_cmd->add_option("--input", nearzero.input, "Dataset path")
      ->required();
  nearzero_cmd
      ->add_option("--format", nearzero.format, "Input format: auto|fvecs|csv")
      ->check(CLI::IsMember({"auto", "fvecs", "csv"}));
  nearzero_cmd->add_flag("--has-header", nearzero.has_header,
                         "CSV input has a header row");
  nearzero_cmd
      ->add_option("--eps-grid", nearzero.eps_grid,
                   "Ascending thresholds for the CDF")
      ->delimiter(',');
  nearzero_cmd->add_option("--out", nearzero.out, "Output CSV path")
      ->required();

  std::string info_path;
  CLI::App* info_cmd =
      app.add_subcommand("info", "Describe a model or codes file");
  info_cmd->add_option("path", info_path, "Model or codes file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends: exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (fit_cmd->parsed()) return run_fit(fit);
    if (encode_cmd->parsed()) return run_encode(encode);
    if (synth_cmd->parsed()) return run_synth(synth);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (verify_cmd->parsed()) return run_verify(verify);
    if (nearzero_cmd->parsed()) return run_nearzero(nearzero);
    if (info_cmd->parsed()) return run_info(info_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
