// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON round trip for volumes and sector operators. Doubles are emitted with
// shortest-round-trip encoding, so parse(serialize(op)) reproduces every
// coefficient bit for bit. Blocks are stored row-major in the per-site
// adapted frames, exactly as held in memory.

#pragma once

#include <json.hpp>

#include "spinkam/local_operator.hpp"

namespace spinkam {

using json = nlohmann::json;

inline json to_json(const Complex& c) { return json::array({c.real(), c.imag()}); }

inline Complex complex_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw SchemaError("complex", "expected [re, im]");
  return Complex(j[0].get<double>(), j[1].get<double>());
}

inline json to_json(const MatrixXcd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(to_json(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline MatrixXcd matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw SchemaError("matrix", "expected a non-empty array of rows");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  MatrixXcd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols) throw SchemaError("matrix", "ragged rows");
    for (int c = 0; c < cols; ++c) m(r, c) = complex_from_json(j[r][c]);
  }
  return m;
}

inline json to_json(const Volume& vol) {
  return json{{"dimension", vol.dimension()},
              {"extents", vol.extents()},
              {"steiner_limit", vol.steiner_limit()}};
}

inline Volume volume_from_json(const json& j) {
  if (!j.contains("extents")) throw SchemaError("volume.extents", "missing");
  Volume vol(j.at("extents").get<std::vector<int>>(),
             j.value("steiner_limit", 10));
  if (j.contains("dimension") && j.at("dimension").get<int>() != vol.dimension())
    throw SchemaError("volume.dimension", "inconsistent with extents");
  return vol;
}

inline json to_json(const LocalOperator& op) {
  json sectors = json::array();
  for (const auto& [key, blk] : op.sectors()) {
    json entries = json::array();
    for (int r = 0; r < blk.mat.rows(); ++r)
      for (int c = 0; c < blk.mat.cols(); ++c) entries.push_back(to_json(blk.mat(r, c)));
    sectors.push_back(json{{"plus", key.plus},
                           {"minus", key.minus},
                           {"neutral", key.neutral},
                           {"dim", blk.mat.rows()},
                           {"block", std::move(entries)}});
  }
  return json{{"volume", to_json(op.system()->volume())},
              {"scalar", to_json(op.scalar())},
              {"dropped_norm", op.dropped_norm()},
              {"sectors", std::move(sectors)}};
}

inline LocalOperator local_operator_from_json(const json& j,
                                              const std::shared_ptr<const System>& sys) {
  if (j.contains("volume")) {
    Volume vol = volume_from_json(j.at("volume"));
    if (!(vol == sys->volume())) throw SchemaError("volume", "does not match the system");
  }
  LocalOperator op(sys);
  op.scalar() = complex_from_json(j.at("scalar"));
  op.add_dropped(j.value("dropped_norm", 0.0));
  for (const auto& js : j.at("sectors")) {
    SectorIndex key{js.at("plus").get<SiteSet>(), js.at("minus").get<SiteSet>(),
                    js.at("neutral").get<SiteSet>()};
    if (!key.valid()) throw SchemaError("sectors", "sector site sets must be disjoint, not all empty");
    const long dim = js.at("dim").get<long>();
    if (dim != sys->dense_dim(key.support()))
      throw SchemaError("sectors.dim", "does not match the support dimension");
    const auto& entries = js.at("block");
    if (static_cast<long>(entries.size()) != dim * dim)
      throw SchemaError("sectors.block", "wrong number of entries");
    MatrixXcd mat(dim, dim);
    long i = 0;
    for (long r = 0; r < dim; ++r)
      for (long c = 0; c < dim; ++c) mat(r, c) = complex_from_json(entries[i++]);
    op.sectors().emplace(key, SectorBlock{mat, detail::sector_block_norm(*sys, key, mat)});
  }
  return op;
}

}  // namespace spinkam
