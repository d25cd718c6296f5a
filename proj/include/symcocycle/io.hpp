#pragma once

// JSON cocycle files:
//   {"dim": 2N, "matrices": [[row-major 2N*2N floats], ...],
//    "splittings": {"E1": [...], "E2": [...]} or {"Eu": ..., "Ec": ..., "Es": ...},
//    "metadata": {"key": "value"}}
// A splitting entry is one list of basis vectors per step 0..n.

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "symplin.hpp"

namespace symc {

struct CocycleFile {
  int dim = 0;
  std::vector<Mat> matrices;
  std::map<std::string, std::vector<Subspace>> splittings;
  std::map<std::string, std::string> metadata;
};

namespace detail {

inline int line_of_offset(const std::string& text, std::size_t offset) {
  int line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

inline nlohmann::ordered_json matrix_to_json(const Mat& A) {
  nlohmann::ordered_json row = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
  return row;
}

inline Mat json_to_matrix(const nlohmann::json& j, int dim, const std::string& where) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(dim) * dim)
    fail(ErrorKind::Format, "schema: " + where + " must hold " + std::to_string(dim * dim) + " numbers");
  Mat A(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int k = 0; k < dim; ++k) {
      const auto& x = j[static_cast<std::size_t>(i) * dim + k];
      if (!x.is_number()) fail(ErrorKind::Format, "schema: non-numeric entry in " + where);
      A(i, k) = x.get<double>();
    }
  return A;
}

}  // namespace detail

/// Largest span distance between A_i E_i and E_{i+1}, with the failing step.
inline std::pair<double, int> transport_residual(const std::vector<Mat>& mats, const std::vector<Subspace>& E) {
  double worst = 0.0;
  int at = -1;
  for (std::size_t i = 0; i + 1 < E.size() && i < mats.size(); ++i) {
    const double r = E[i].dim() == 0 ? 0.0 : span_distance(image(mats[i], E[i]), E[i + 1]);
    if (r > worst) worst = r, at = static_cast<int>(i);
  }
  return {worst, at};
}

inline CocycleFile parse_cocycle_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Format, "parse error at line " + std::to_string(detail::line_of_offset(text, e.byte)) + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("dim") || !j["dim"].is_number_integer())
    fail(ErrorKind::Format, "schema: missing integer field \"dim\"");
  CocycleFile f;
  f.dim = j["dim"].get<int>();
  if (f.dim < 2 || f.dim % 2) fail(ErrorKind::Format, "schema: dim must be even and >= 2");
  if (!j.contains("matrices") || !j["matrices"].is_array() || j["matrices"].empty())
    fail(ErrorKind::Format, "schema: \"matrices\" must be a nonempty array");
  for (std::size_t k = 0; k < j["matrices"].size(); ++k) {
    Mat A = detail::json_to_matrix(j["matrices"][k], f.dim, "matrix " + std::to_string(k));
    const double d = symplectic_defect(A);
    if (!(d <= 1e-8)) fail(ErrorKind::Format, "matrix " + std::to_string(k) + " is not symplectic (defect " + std::to_string(d) + ")");
    f.matrices.push_back(std::move(A));
  }
  if (j.contains("splittings")) {
    const auto& s = j["splittings"];
    if (!s.is_object()) fail(ErrorKind::Format, "schema: \"splittings\" must be an object");
    const bool two = s.contains("E1") || s.contains("E2");
    const std::vector<std::string> keys = two ? std::vector<std::string>{"E1", "E2"} : std::vector<std::string>{"Eu", "Ec", "Es"};
    for (const auto& key : keys) {
      if (!s.contains(key) || !s[key].is_array()) fail(ErrorKind::Format, "schema: splitting \"" + key + "\" missing");
      const auto& steps = s[key];
      if (steps.size() != f.matrices.size() + 1) fail(ErrorKind::Format, "schema: splitting \"" + key + "\" needs n+1 steps");
      std::vector<Subspace> E;
      for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& vecs = steps[i];
        if (!vecs.is_array()) fail(ErrorKind::Format, "schema: splitting step must be a list of vectors");
        Mat B(f.dim, static_cast<Eigen::Index>(vecs.size()));
        for (std::size_t c = 0; c < vecs.size(); ++c) {
          if (!vecs[c].is_array() || vecs[c].size() != static_cast<std::size_t>(f.dim))
            fail(ErrorKind::Format, "schema: splitting vector has wrong length");
          for (int r = 0; r < f.dim; ++r) B(r, static_cast<Eigen::Index>(c)) = vecs[c][r].get<double>();
        }
        // Orthonormal bases (everything save_cocycle writes) are kept bit for bit.
        const bool orthonormal = B.cols() > 0 && (B.transpose() * B - Mat::Identity(B.cols(), B.cols())).cwiseAbs().maxCoeff() <= 1e-12;
        E.push_back(orthonormal ? Subspace{B} : make_subspace(B));
      }
      const auto [res, at] = transport_residual(f.matrices, E);
      if (res > 1e-8) fail(ErrorKind::Format, "splitting \"" + key + "\" is not invariant at step " + std::to_string(at));
      f.splittings[key] = std::move(E);
    }
  }
  if (j.contains("metadata")) {
    if (!j["metadata"].is_object()) fail(ErrorKind::Format, "schema: \"metadata\" must be an object");
    for (const auto& [k, v] : j["metadata"].items()) f.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return f;
}

/// Doubles are written in shortest round-trip form, so save then load is lossless.
inline std::string serialize_cocycle(const CocycleFile& f) {
  nlohmann::ordered_json j;
  j["dim"] = f.dim;
  j["matrices"] = nlohmann::ordered_json::array();
  for (const auto& A : f.matrices) j["matrices"].push_back(detail::matrix_to_json(A));
  if (!f.splittings.empty()) {
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [key, E] : f.splittings) {
      nlohmann::ordered_json steps = nlohmann::ordered_json::array();
      for (const auto& sub : E) {
        nlohmann::ordered_json vecs = nlohmann::ordered_json::array();
        for (int c = 0; c < sub.dim(); ++c) {
          nlohmann::ordered_json v = nlohmann::ordered_json::array();
          for (int r = 0; r < sub.ambient(); ++r) v.push_back(sub.basis(r, c));
          vecs.push_back(v);
        }
        steps.push_back(vecs);
      }
      s[key] = steps;
    }
    j["splittings"] = s;
  }
  if (!f.metadata.empty()) j["metadata"] = f.metadata;
  return j.dump(1) + "\n";
}

inline CocycleFile load_cocycle(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Format, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_cocycle_json(ss.str());
}

inline void save_cocycle(const std::string& path, const CocycleFile& f) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Format, "cannot write " + path);
  out << serialize_cocycle(f);
}

}  // namespace symc
