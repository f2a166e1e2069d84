// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration for the command line driver. A config names an experiment
// kind, points at a problem document, and carries overrides that layer onto
// the document's own flow parameters. Spin problem documents are parsed here;
// Markov documents are handled by markov_problem_from_json.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spinkam/checks.hpp"
#include "spinkam/flow.hpp"
#include "spinkam/markov.hpp"
#include "spinkam/serialize.hpp"

namespace spinkam {

enum class RunKind { Flow, Verify, Markov };

inline const char* to_string(RunKind k) {
  switch (k) {
    case RunKind::Flow: return "flow";
    case RunKind::Verify: return "verify";
    case RunKind::Markov: return "markov";
  }
  return "?";
}

struct RunConfig {
  RunKind kind = RunKind::Flow;
  std::string problem_path;  // resolved relative to the config file
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  json overrides = json::object();
  json problem = json::object();  // the loaded problem document
};

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& err) {
    throw SchemaError("json", path + ": " + err.what());
  }
}

// ============================================================================
// Spin problem documents
// ============================================================================

// A spin problem is the unperturbed product Hamiltonian (one local term per
// site), a perturbation given as dense matrices on small supports in the
// computational basis, and the flow parameters.
struct SpinProblem {
  std::shared_ptr<const System> system;
  LocalOperator h_prime;
  FlowConfig flow;
};

namespace detail {

inline SiteSpace site_from_json(const json& j) {
  if (!j.is_object() || !j.contains("h"))
    throw SchemaError("sites", "each entry needs an 'h' matrix");
  return SiteSpace::from_local_term(matrix_from_json(j.at("h")), j.value("gap", -1.0));
}

}  // namespace detail

inline SpinProblem spin_problem_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("problem", "must be a JSON object");
  if (!j.contains("volume")) throw SchemaError("volume", "missing");
  const Volume vol = volume_from_json(j.at("volume"));

  if (!j.contains("sites")) throw SchemaError("sites", "missing");
  const json& js = j.at("sites");
  std::vector<SiteSpace> sites;
  if (js.is_object()) {
    sites.assign(vol.size(), detail::site_from_json(js));
  } else if (js.is_array() && js.size() == 1) {
    sites.assign(vol.size(), detail::site_from_json(js[0]));
  } else if (js.is_array() && static_cast<int>(js.size()) == vol.size()) {
    for (const json& entry : js) sites.push_back(detail::site_from_json(entry));
  } else {
    throw SchemaError("sites", "need one entry per site, or a single entry for all");
  }

  SpinProblem p;
  p.flow = flow_config_from_json(j.value("flow", json::object()));
  p.system = System::make(vol, std::move(sites));

  p.h_prime = LocalOperator::zero(p.system);
  for (const json& term : j.value("perturbation", json::array())) {
    if (!term.is_object() || !term.contains("sites") || !term.contains("matrix"))
      throw SchemaError("perturbation", "each term needs 'sites' and 'matrix'");
    SiteSet support = term.at("sites").get<std::vector<int>>();
    std::sort(support.begin(), support.end());
    if (support.empty()) throw SchemaError("perturbation.sites", "must be non-empty");
    if (std::adjacent_find(support.begin(), support.end()) != support.end())
      throw SchemaError("perturbation.sites", "repeated site index");
    if (support.front() < 0 || support.back() >= vol.size())
      throw SchemaError("perturbation.sites", "site index out of the volume");
    const MatrixXcd m = matrix_from_json(term.at("matrix"));
    if (m.rows() != p.system->dense_dim(support))
      throw SchemaError("perturbation.matrix", "dimension does not match the support");
    p.h_prime = p.h_prime + decompose(p.system, m, support, BlockBasis::Computational);
  }
  return p;
}

// ============================================================================
// Verify suite documents
// ============================================================================

struct VerifyPlan {
  std::vector<std::string> checks;  // defaults to every suite
  int count = 100;
  bool inject_failure = false;
};

inline VerifyPlan verify_plan_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("problem", "must be a JSON object");
  VerifyPlan plan;
  if (j.contains("checks")) {
    for (const json& name : j.at("checks")) {
      const std::string s = name.get<std::string>();
      const auto& known = suite_check_names();
      if (std::find(known.begin(), known.end(), s) == known.end())
        throw SchemaError("checks", "unknown check name: " + s);
      plan.checks.push_back(s);
    }
  } else {
    plan.checks = suite_check_names();
  }
  plan.count = j.value("count", plan.count);
  if (plan.count < 1) throw SchemaError("count", "must be at least 1");
  plan.inject_failure = j.value("inject_failure", plan.inject_failure);
  return plan;
}

// ============================================================================
// Run configs
// ============================================================================

// Override keys accepted in the config file; command line flags use the same
// names and win over both the document and these.
inline void apply_flow_overrides(FlowConfig& cfg, const json& o) {
  if (!o.is_object()) throw SchemaError("overrides", "must be a JSON object");
  for (auto it = o.begin(); it != o.end(); ++it) {
    const std::string& key = it.key();
    if (key == "vtol") {
      cfg.v_tol = it->get<double>();
    } else if (key == "nmax") {
      cfg.n_max = it->get<int>();
    } else if (key == "mode") {
      const std::string m = it->get<std::string>();
      if (m == "dense") cfg.mode = FlowMode::Dense;
      else if (m == "series") cfg.mode = FlowMode::Series;
      else throw SchemaError("overrides.mode", "must be 'dense' or 'series'");
    } else if (key == "drop_threshold") {
      cfg.drop_threshold = it->get<double>();
    } else if (key == "epsilon_threshold") {
      cfg.epsilon_threshold = it->get<double>();
    } else {
      throw SchemaError("overrides." + key, "unknown override");
    }
  }
  cfg.validate();
}

inline RunConfig parse_config(const std::string& path) {
  const json j = load_json_file(path);
  if (!j.is_object()) throw SchemaError("config", "must be a JSON object");

  RunConfig cfg;
  const std::string kind = j.value("kind", "flow");
  if (kind == "flow") cfg.kind = RunKind::Flow;
  else if (kind == "verify") cfg.kind = RunKind::Verify;
  else if (kind == "markov") cfg.kind = RunKind::Markov;
  else throw SchemaError("kind", "must be one of flow, verify, markov");

  cfg.out_dir = j.value("out", cfg.out_dir);
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned())
      throw SchemaError("seed", "must be a non-negative integer");
    cfg.seed = j.at("seed").get<std::uint64_t>();
  }
  cfg.overrides = j.value("overrides", json::object());

  if (j.contains("problem")) {
    if (j.at("problem").is_string()) {
      const std::filesystem::path rel(j.at("problem").get<std::string>());
      const std::filesystem::path base = std::filesystem::path(path).parent_path();
      cfg.problem_path = (rel.is_absolute() ? rel : base / rel).string();
      cfg.problem = load_json_file(cfg.problem_path);
    } else if (j.at("problem").is_object()) {
      cfg.problem = j.at("problem");  // inline document
    } else {
      throw SchemaError("problem", "must be a path or an inline object");
    }
  } else if (cfg.kind != RunKind::Verify) {
    throw SchemaError("problem", "missing");
  }

  // Validate the document and the overrides now, so errors carry the field
  // rather than surfacing mid-run.
  switch (cfg.kind) {
    case RunKind::Flow: {
      SpinProblem p = spin_problem_from_json(cfg.problem);
      apply_flow_overrides(p.flow, cfg.overrides);
      break;
    }
    case RunKind::Markov: {
      MarkovFlowProblem p = markov_problem_from_json(cfg.problem);
      apply_flow_overrides(p.flow, cfg.overrides);
      break;
    }
    case RunKind::Verify:
      verify_plan_from_json(cfg.problem);
      if (!cfg.overrides.is_object() || !cfg.overrides.empty())
        throw SchemaError("overrides", "verify runs take no overrides");
      break;
  }
  return cfg;
}

}  // namespace spinkam
