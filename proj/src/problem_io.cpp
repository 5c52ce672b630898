#include "rmpc/problem_io.hpp"

#include "rmpc/errors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace rmpc {

namespace {

using nlohmann::json;

const json& member(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw InputError(where + " must be an object");
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw InputError("missing field " + (where.empty() ? std::string(key) : where + "." + key));
  }
  return *it;
}

std::string join(const std::string& where, const char* key) {
  return where.empty() ? std::string(key) : where + "." + key;
}

int read_int(const json& j, const std::string& field) {
  if (!j.is_number_integer()) throw InputError(field + " must be an integer");
  return j.get<int>();
}

double read_double(const json& j, const std::string& field) {
  if (!j.is_number()) throw InputError(field + " must be a number");
  return j.get<double>();
}

VectorXd read_vector(const json& j, const std::string& field) {
  if (!j.is_array()) throw InputError(field + " must be an array of numbers");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = read_double(j[i], field + "[" + std::to_string(i) + "]");
  }
  return v;
}

MatrixXd read_matrix(const json& j, const std::string& field) {
  if (!j.is_array()) throw InputError(field + " must be a nested array (rows)");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = 0;
  if (rows > 0) {
    if (!j[0].is_array()) throw InputError(field + "[0] must be an array");
    cols = static_cast<Eigen::Index>(j[0].size());
  }
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::string row_field = field + "[" + std::to_string(r) + "]";
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw InputError("dimension mismatch in " + field + ": row " + std::to_string(r) +
                       " does not have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = read_double(row[static_cast<std::size_t>(c)],
                            row_field + "[" + std::to_string(c) + "]");
    }
  }
  return m;
}

std::string position(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

json write_matrix(const MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

json write_vector(const VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

}  // namespace

UncertainSystem parse_problem_text(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(source + ": syntax error at " + position(text, e.byte > 0 ? e.byte - 1 : 0) +
                     ": " + e.what());
  }
  UncertainSystem sys;
  try {
    sys.horizon = read_int(member(doc, "horizon", ""), "horizon");
    sys.robust_horizon = read_int(member(doc, "robust_horizon", ""), "robust_horizon");
    sys.nx = read_int(member(doc, "nx", ""), "nx");
    sys.nu = read_int(member(doc, "nu", ""), "nu");
    sys.x0 = read_vector(member(doc, "x0", ""), "x0");

    const json& cost = member(doc, "cost", "");
    sys.Q = read_matrix(member(cost, "Q", "cost"), "cost.Q");
    sys.S = read_matrix(member(cost, "S", "cost"), "cost.S");

    const json& cons = member(doc, "constraints", "");
    sys.C = read_matrix(member(cons, "C", "constraints"), "constraints.C");
    sys.D = read_matrix(member(cons, "D", "constraints"), "constraints.D");
    // An empty constraint set still fixes the column counts.
    if (sys.C.rows() == 0) sys.C.resize(0, sys.nx);
    if (sys.D.rows() == 0) sys.D.resize(0, sys.nu);
    const json& e = member(cons, "e", "constraints");
    if (!e.is_array()) throw InputError("constraints.e must be an array of vectors");
    for (std::size_t k = 0; k < e.size(); ++k) {
      sys.e.push_back(read_vector(e[k], "constraints.e[" + std::to_string(k) + "]"));
    }

    const json& real = member(doc, "realizations", "");
    if (!real.is_array()) throw InputError("realizations must be an array of stages");
    for (std::size_t k = 0; k < real.size(); ++k) {
      const std::string where = "realizations[" + std::to_string(k) + "]";
      if (!real[k].is_array()) throw InputError(where + " must be an array");
      std::vector<Realization> stage;
      for (std::size_t i = 0; i < real[k].size(); ++i) {
        const std::string item = where + "[" + std::to_string(i) + "]";
        const json& r = real[k][i];
        Realization rz;
        rz.A = read_matrix(member(r, "A", item), join(item, "A"));
        rz.B = read_matrix(member(r, "B", item), join(item, "B"));
        rz.v = read_vector(member(r, "v", item), join(item, "v"));
        stage.push_back(std::move(rz));
      }
      sys.realizations.push_back(std::move(stage));
    }
  } catch (const json::exception& ex) {
    throw InputError(source + ": " + ex.what());
  } catch (const InputError& ex) {
    throw InputError(source + ": " + ex.what());
  }
  try {
    validate(sys);
  } catch (const InputError& ex) {
    throw InputError(source + ": " + ex.what());
  }
  return sys;
}

UncertainSystem parse_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_problem_text(buf.str(), path);
}

std::string serialize_problem(const UncertainSystem& sys) {
  json doc;
  doc["horizon"] = sys.horizon;
  doc["robust_horizon"] = sys.robust_horizon;
  doc["nx"] = sys.nx;
  doc["nu"] = sys.nu;
  doc["x0"] = write_vector(sys.x0);
  doc["cost"] = {{"Q", write_matrix(sys.Q)}, {"S", write_matrix(sys.S)}};
  json e = json::array();
  for (const auto& ek : sys.e) e.push_back(write_vector(ek));
  doc["constraints"] = {{"C", write_matrix(sys.C)}, {"D", write_matrix(sys.D)}, {"e", e}};
  json real = json::array();
  for (const auto& stage : sys.realizations) {
    json s = json::array();
    for (const auto& r : stage) {
      s.push_back({{"A", write_matrix(r.A)}, {"B", write_matrix(r.B)}, {"v", write_vector(r.v)}});
    }
    real.push_back(std::move(s));
  }
  doc["realizations"] = std::move(real);
  return doc.dump(2) + "\n";
}

}  // namespace rmpc
