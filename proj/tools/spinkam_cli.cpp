// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command line driver. Subcommands: `flow run`, `flow resume`, `verify
// suite`, `verify one`, `markov run`. Every run reads a JSON config, writes
// its artifacts under the output directory, and exits 0 only when the flow
// converged and every emitted check passed. Identical config and seed give
// byte-identical output files.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "spinkam/config.hpp"

namespace {

using namespace spinkam;
using Eigen::VectorXcd;
namespace fs = std::filesystem;

// Command line layer; set flags win over the config file and the document.
struct Flags {
  std::string config_path;
  std::string check_name;  // verify one only
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> vtol;
  std::optional<int> nmax;
};

void apply_flags(FlowConfig& cfg, const Flags& f) {
  if (f.mode) {
    if (*f.mode == "dense") cfg.mode = FlowMode::Dense;
    else if (*f.mode == "series") cfg.mode = FlowMode::Series;
    else throw SchemaError("mode", "must be 'dense' or 'series'");
  }
  if (f.vtol) cfg.v_tol = *f.vtol;
  if (f.nmax) cfg.n_max = *f.nmax;
  cfg.validate();
}

fs::path prepare_out_dir(const RunConfig& cfg, const Flags& f) {
  fs::path dir = f.out ? fs::path(*f.out) : fs::path(cfg.out_dir);
  fs::create_directories(dir);
  return dir;
}

// 17 significant digits reproduce any double exactly on re-parse.
std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
}

void write_json_file(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string diagnostics_csv(const std::vector<IterationStats>& rows) {
  std::string s = "n,kappa_2n,e_n,f_n,v_n,a_n,d_re,d_im,drop_budget\n";
  for (const IterationStats& r : rows) {
    s += std::to_string(r.n);
    for (double x : {r.kappa_2n, r.e, r.f, r.v, r.a, r.d.real(), r.d.imag(), r.drop_budget}) {
      s += ',';
      s += fmt17(x);
    }
    s += '\n';
  }
  return s;
}

std::string checks_jsonl(const std::vector<CheckReport>& reports) {
  std::string s;
  for (const CheckReport& r : reports) {
    s += to_json(r).dump();
    s += '\n';
  }
  return s;
}

int count_failures(const std::vector<CheckReport>& reports) {
  int n = 0;
  for (const CheckReport& r : reports)
    if (!r.pass) ++n;
  return n;
}

// Post-convergence cross-checks on the dense product space: spectrum match,
// frustration-free residuals of F, isolation of the shift, and for
// self-adjoint flows the dressed ground state.
std::vector<CheckReport> flow_checks(const SpinProblem& p, const FlowResult& res) {
  std::vector<CheckReport> out;
  const auto& sys = p.system;
  const MatrixXcd h = sys->h0_dense() + assemble(p.h_prime, BlockBasis::Adapted);
  const LocalOperator h_f = res.h_f(h0_operator(sys));

  out.push_back(check_spectrum_preserved(h, assemble(h_f, BlockBasis::Adapted)));

  const MatrixXcd f_dense = assemble(res.state.f, BlockBasis::Adapted);
  VectorXcd omega = VectorXcd::Zero(f_dense.rows());
  omega(0) = 1;
  const double ff = std::max((f_dense * omega).norm(), (omega.adjoint() * f_dense).norm());
  out.push_back(CheckReport::make("frustration_free", ff, 1e-10, 0.0, json::object()));

  out.push_back(check_shift_isolated(h_f, res.state.d, sys->gap()));
  if (res.u.self_adjoint) out.push_back(check_dressing_ground_state(res.u, h));
  return out;
}

int run_flow_command(const Flags& flags, bool resume) {
  RunConfig cfg = parse_config(flags.config_path);
  if (cfg.kind != RunKind::Flow) throw SchemaError("kind", "this config is not a flow run");
  SpinProblem p = spin_problem_from_json(cfg.problem);
  apply_flow_overrides(p.flow, cfg.overrides);
  apply_flags(p.flow, flags);

  const fs::path out_dir = prepare_out_dir(cfg, flags);
  const fs::path state_path = out_dir / "flow_state.json";
  const LocalOperator h0 = h0_operator(p.system);

  FlowResult res;
  if (resume) {
    const json snapshot = load_json_file(state_path.string());
    const FlowConfig stored = flow_config_from_json(snapshot.at("config"));
    // Fresh tolerances and budget come from the document and flags; the decay
    // schedule must stay what the snapshot was produced with.
    if (stored.kappa != p.flow.kappa || stored.kappa_prime != p.flow.kappa_prime)
      throw SchemaError("flow.kappa", "resume must keep the original decay schedule");
    res = flow_result_from_json(snapshot.at("result"), p.system);
    // The trailing row of an exhausted run is re-evaluated on resume; drop it
    // so the continued diagnostics match an uninterrupted run byte for byte.
    if (!res.converged && !res.diagnostics.empty()) res.diagnostics.pop_back();
    res = continue_flow(h0, std::move(res), p.flow);
  } else {
    res = run_flow_partial(p.h_prime, h0, p.flow);
  }

  std::vector<CheckReport> reports;
  if (res.converged) reports = flow_checks(p, res);

  json summary{{"kind", "flow"},
               {"converged", res.converged},
               {"iterations", res.state.n},
               {"epsilon_value", res.epsilon_value},
               {"epsilon_admissible", res.epsilon_admissible},
               {"sum_a_kappa", res.sum_a_kappa},
               {"d", to_json(res.state.d)},
               {"self_adjoint", res.u.self_adjoint},
               {"checks_failed", count_failures(reports)}};
  for (const CheckReport& r : reports) {
    if (r.check == "spectrum_preserved") summary["spectrum_residual"] = r.measured;
    if (r.check == "dressing_ground_state")
      summary["unitarity_residual"] = r.instance.at("unitarity_residual");
  }

  write_text(out_dir / "diagnostics.csv", diagnostics_csv(res.diagnostics));
  write_text(out_dir / "checks.jsonl", checks_jsonl(reports));
  write_json_file(out_dir / "summary.json", summary);
  write_json_file(state_path, json{{"config", to_json(p.flow)}, {"result", to_json(res)}});

  if (!res.converged) {
    std::cerr << "flow: iteration budget exhausted before v_tol\n";
    return 1;
  }
  return count_failures(reports) == 0 ? 0 : 1;
}

int run_verify_suite(const Flags& flags) {
  VerifyPlan plan;
  std::uint64_t seed = flags.seed.value_or(1);
  fs::path out_dir = "out";
  if (!flags.config_path.empty()) {
    RunConfig cfg = parse_config(flags.config_path);
    if (cfg.kind != RunKind::Verify) throw SchemaError("kind", "this config is not a verify run");
    plan = verify_plan_from_json(cfg.problem);
    if (!flags.seed) seed = cfg.seed;
    out_dir = prepare_out_dir(cfg, flags);
  } else {
    plan.checks = suite_check_names();
    out_dir = flags.out ? fs::path(*flags.out) : out_dir;
    fs::create_directories(out_dir);
  }

  SuiteOptions opt;
  opt.count = plan.count;
  opt.seed = seed;
  opt.inject_failure = plan.inject_failure;

  // One worker per named suite; reports are joined in plan order, so the
  // output is independent of scheduling.
  std::vector<std::vector<CheckReport>> per_suite(plan.checks.size());
  std::vector<std::exception_ptr> errors(plan.checks.size());
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < plan.checks.size(); ++i) {
    workers.emplace_back([&, i] {
      try {
        per_suite[i] = run_check_suite(plan.checks[i], opt);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (std::thread& w : workers) w.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<CheckReport> reports;
  for (std::vector<CheckReport>& batch : per_suite)
    for (CheckReport& r : batch) reports.push_back(std::move(r));

  const int failures = count_failures(reports);
  json summary{{"kind", "verify"},
               {"checks", plan.checks},
               {"count", plan.count},
               {"seed", seed},
               {"total", reports.size()},
               {"failures", failures}};

  write_text(out_dir / "checks.jsonl", checks_jsonl(reports));
  write_json_file(out_dir / "summary.json", summary);

  if (failures > 0) {
    for (const CheckReport& r : reports)
      if (!r.pass)
        std::cerr << "FAIL " << r.check << " measured=" << fmt17(r.measured)
                  << " bound=" << fmt17(r.bound) << "\n";
    return 1;
  }
  return 0;
}

int run_verify_one(const Flags& flags) {
  const CheckReport report = run_random_check(flags.check_name, flags.seed.value_or(1));
  std::cout << to_json(report).dump(2) << "\n";
  if (flags.out) {
    fs::create_directories(*flags.out);
    write_text(fs::path(*flags.out) / "checks.jsonl", checks_jsonl({report}));
  }
  return report.pass ? 0 : 1;
}

int run_markov_command(const Flags& flags) {
  RunConfig cfg = parse_config(flags.config_path);
  if (cfg.kind != RunKind::Markov) throw SchemaError("kind", "this config is not a markov run");
  MarkovFlowProblem p = markov_problem_from_json(cfg.problem);
  apply_flow_overrides(p.flow, cfg.overrides);
  apply_flags(p.flow, flags);

  const fs::path out_dir = prepare_out_dir(cfg, flags);
  EmbeddedProblem emb = embed_weighted(p);
  FlowResult flow = run_flow_partial(emb.h_prime, h0_operator(emb.system), emb.config);
  write_text(out_dir / "diagnostics.csv", diagnostics_csv(flow.diagnostics));

  if (!flow.converged) {
    write_json_file(out_dir / "summary.json",
                    json{{"kind", "markov"}, {"converged", false}, {"iterations", flow.state.n}});
    std::cerr << "markov: flow did not converge within the iteration budget\n";
    return 1;
  }

  MarkovResult r = extract_stationary(p, std::move(emb), std::move(flow));

  json stationary = stationary_report(r);
  if (r.classical) {
    const RnDerivative rn = rn_derivative(p, r.embedded, r.flow);
    json values = json::array();
    for (int i = 0; i < rn.values.size(); ++i) values.push_back(to_json(rn.values(i)));
    stationary["rn_derivative"] = std::move(values);
    stationary["rn_positive"] = rn.positive;
    stationary["rn_normalization_error"] = rn.normalization_error;
  }

  std::vector<CheckReport> reports;
  reports.push_back(CheckReport::make("stationary_shift_vanishes", r.d_abs, 1e-10, 0.0,
                                      json{{"lambda", to_json(r.lambda)}}));
  reports.push_back(CheckReport::make("dressed_identity", r.identity_residual, 1e-9, 0.0,
                                      json{{"lambda", to_json(r.lambda)}}));

  json summary{{"kind", "markov"},
               {"converged", true},
               {"iterations", r.flow.state.n},
               {"lambda", to_json(r.lambda)},
               {"d_abs", r.d_abs},
               {"identity_residual", r.identity_residual},
               {"epsilon_value", r.flow.epsilon_value},
               {"sum_a_kappa", r.flow.sum_a_kappa},
               {"checks_failed", count_failures(reports)}};

  write_text(out_dir / "checks.jsonl", checks_jsonl(reports));
  write_json_file(out_dir / "stationary.json", stationary);
  write_json_file(out_dir / "summary.json", summary);
  return count_failures(reports) == 0 ? 0 : 1;
}

void add_common_flags(CLI::App* cmd, Flags& flags, bool with_config = true) {
  if (with_config)
    cmd->add_option("--config", flags.config_path, "run config JSON")->required();
  cmd->add_option("--out", flags.out, "output directory (overrides the config)");
  cmd->add_option("--seed", flags.seed, "seed (overrides the config)");
  cmd->add_option("--mode", flags.mode, "dense|series")
      ->check(CLI::IsMember({"dense", "series"}));
  cmd->add_option("--vtol", flags.vtol, "convergence tolerance on v_n");
  cmd->add_option("--nmax", flags.nmax, "iteration budget");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectral flow for weakly perturbed spin lattices"};
  app.require_subcommand(1);
  Flags flags;

  CLI::App* flow = app.add_subcommand("flow", "run or resume a conjugating flow");
  flow->require_subcommand(1);
  CLI::App* flow_run = flow->add_subcommand("run", "fresh flow from a problem document");
  CLI::App* flow_resume = flow->add_subcommand("resume", "continue from flow_state.json");
  add_common_flags(flow_run, flags);
  add_common_flags(flow_resume, flags);

  CLI::App* verify = app.add_subcommand("verify", "randomized bound suites");
  verify->require_subcommand(1);
  CLI::App* verify_suite = verify->add_subcommand("suite", "run the named suites");
  CLI::App* verify_one = verify->add_subcommand("one", "one check on one seed");
  add_common_flags(verify_suite, flags);
  verify_suite->get_option("--config")->required(false);
  verify_one->add_option("check", flags.check_name, "check name")->required();
  add_common_flags(verify_one, flags, false);

  CLI::App* markov = app.add_subcommand("markov", "stationary states of local generators");
  CLI::App* markov_run = markov->add_subcommand("run", "embed and flow a Markov problem");
  markov->require_subcommand(1);
  add_common_flags(markov_run, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (flow_run->parsed()) return run_flow_command(flags, false);
    if (flow_resume->parsed()) return run_flow_command(flags, true);
    if (verify_suite->parsed()) return run_verify_suite(flags);
    if (verify_one->parsed()) return run_verify_one(flags);
    if (markov_run->parsed()) return run_markov_command(flags);
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
