// Copyright 2026 The hybridrec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hybridrec/als.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hybridrec/csv.hpp"
#include "hybridrec/errors.hpp"

namespace hybridrec {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// F^T F for an (n, f) factor matrix.
Tensor gram_of(const Tensor& factors) {
  const std::size_t n = factors.dim(0), f = factors.dim(1);
  Tensor g({f, f});
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = factors.data() + r * f;
    for (std::size_t i = 0; i < f; ++i) {
      const double ri = row[i];
      for (std::size_t j = 0; j < f; ++j) g[i * f + j] += ri * row[j];
    }
  }
  return g;
}

// A v with A = gram_base + sum extra_j y_j y_j^T + lambda I.
void apply_system(const Tensor& gram_base, const Tensor& factors, std::span<const ConfidenceEntry> entries,
                  double lambda_reg, const std::vector<double>& v, std::vector<double>& out) {
  const std::size_t f = v.size();
  for (std::size_t i = 0; i < f; ++i) out[i] = dot(gram_base.data() + i * f, v.data(), f) + lambda_reg * v[i];
  for (const auto& e : entries) {
    const double* y = factors.data() + e.index * f;
    const double s = e.extra * dot(y, v.data(), f);
    for (std::size_t i = 0; i < f; ++i) out[i] += s * y[i];
  }
}

struct RowProblem {
  std::vector<ConfidenceEntry> entries;
  std::vector<double> rhs;
};

// Observed cells of one row (or column when `by_column`) and the rhs
// Y^T C p = sum over observed (1 + extra) y.
RowProblem row_problem(const InteractionMatrix& matrix, std::size_t index, bool by_column, const Tensor& other,
                       double alpha) {
  const std::size_t f = other.dim(1);
  const std::size_t count = by_column ? matrix.rows() : matrix.cols();
  RowProblem p;
  p.rhs.assign(f, 0.0);
  for (std::size_t j = 0; j < count; ++j) {
    const double r = by_column ? matrix.at(j, index) : matrix.at(index, j);
    if (r <= 0.0) continue;
    const double extra = alpha * r;
    p.entries.push_back({j, extra});
    const double* y = other.data() + j * f;
    for (std::size_t k = 0; k < f; ++k) p.rhs[k] += (1.0 + extra) * y[k];
  }
  return p;
}

void sweep(const InteractionMatrix& matrix, const AlsConfig& config, Tensor& solve_for, const Tensor& fixed,
           bool by_column) {
  const std::size_t f = fixed.dim(1);
  const Tensor base = gram_of(fixed);
  const std::size_t n = solve_for.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    const RowProblem p = row_problem(matrix, i, by_column, fixed, config.alpha);
    std::vector<double> x;
    if (config.solver == AlsSolver::direct) {
      Tensor a = base;
      for (const auto& e : p.entries) {
        const double* y = fixed.data() + e.index * f;
        for (std::size_t r = 0; r < f; ++r) {
          const double s = e.extra * y[r];
          for (std::size_t c = 0; c < f; ++c) a[r * f + c] += s * y[c];
        }
      }
      x = solve_row_direct(a, p.rhs, config.lambda_reg);
    } else {
      const std::span<const double> current(solve_for.data() + i * f, f);
      x = solve_row_cg(base, fixed, p.entries, p.rhs, config.lambda_reg, config.cg_steps, current);
    }
    std::copy(x.begin(), x.end(), solve_for.data() + i * f);
  }
}

}  // namespace

std::vector<double> solve_row_direct(const Tensor& gram, std::span<const double> rhs, double lambda_reg) {
  const std::size_t f = rhs.size();
  if (gram.rank() != 2 || gram.dim(0) != f || gram.dim(1) != f) {
    throw std::invalid_argument("solve_row_direct: gram " + shape_string(gram.shape()) + " vs rhs of length " +
                                std::to_string(f));
  }
  // Lower-triangular Cholesky factor of gram + lambda I.
  std::vector<double> l(f * f, 0.0);
  for (std::size_t j = 0; j < f; ++j) {
    double diag = gram[j * f + j] + lambda_reg;
    for (std::size_t k = 0; k < j; ++k) diag -= l[j * f + k] * l[j * f + k];
    if (!(diag > 0.0)) throw std::runtime_error("solve_row_direct: system is singular or not positive definite");
    const double ljj = std::sqrt(diag);
    l[j * f + j] = ljj;
    for (std::size_t i = j + 1; i < f; ++i) {
      double s = gram[i * f + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * f + k] * l[j * f + k];
      l[i * f + j] = s / ljj;
    }
  }
  std::vector<double> y(f), x(f);
  for (std::size_t i = 0; i < f; ++i) {
    double s = rhs[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * f + k] * y[k];
    y[i] = s / l[i * f + i];
  }
  for (std::size_t i = f; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < f; ++k) s -= l[k * f + i] * x[k];
    x[i] = s / l[i * f + i];
  }
  return x;
}

std::vector<double> solve_row_cg(const Tensor& gram_base, const Tensor& factors,
                                 std::span<const ConfidenceEntry> entries, std::span<const double> rhs,
                                 double lambda_reg, std::size_t cg_steps, std::span<const double> x0,
                                 std::vector<double>* residuals) {
  const std::size_t f = rhs.size();
  if (gram_base.rank() != 2 || gram_base.dim(0) != f || gram_base.dim(1) != f) {
    throw std::invalid_argument("solve_row_cg: gram " + shape_string(gram_base.shape()) + " vs rhs of length " +
                                std::to_string(f));
  }
  if (!x0.empty() && x0.size() != f) throw std::invalid_argument("solve_row_cg: x0 has the wrong length");
  // Conjugate-residual form: the same Krylov iterates family as CG, but each
  // step minimizes the residual 2-norm, so the residual never grows.
  std::vector<double> x(f, 0.0), r(rhs.begin(), rhs.end()), ar(f), ap(f);
  if (!x0.empty()) {
    x.assign(x0.begin(), x0.end());
    apply_system(gram_base, factors, entries, lambda_reg, x, ar);
    for (std::size_t i = 0; i < f; ++i) r[i] -= ar[i];
  }
  apply_system(gram_base, factors, entries, lambda_reg, r, ar);
  std::vector<double> p = r;
  ap = ar;
  double rar = dot(r.data(), ar.data(), f);
  double norm = std::sqrt(dot(r.data(), r.data(), f));
  if (residuals) residuals->assign(1, norm);
  for (std::size_t step = 0; step < cg_steps; ++step) {
    const double apap = dot(ap.data(), ap.data(), f);
    if (norm > 1e-300 && rar > 0.0 && apap > 0.0) {
      const double a = rar / apap;
      for (std::size_t i = 0; i < f; ++i) {
        x[i] += a * p[i];
        r[i] -= a * ap[i];
      }
      apply_system(gram_base, factors, entries, lambda_reg, r, ar);
      const double rar_next = dot(r.data(), ar.data(), f);
      const double beta = rar_next / rar;
      for (std::size_t i = 0; i < f; ++i) {
        p[i] = r[i] + beta * p[i];
        ap[i] = ar[i] + beta * ap[i];
      }
      rar = rar_next;
      norm = std::sqrt(dot(r.data(), r.data(), f));
    }
    if (residuals) residuals->push_back(norm);
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw std::runtime_error("solve_row_cg: non-finite solution");
  }
  return x;
}

FactorModel als_fit(const InteractionMatrix& matrix, const AlsConfig& config, std::vector<double>* objective_trace) {
  if (matrix.rows() == 0 || matrix.cols() == 0) throw std::invalid_argument("als_fit: empty interaction matrix");
  if (config.factors == 0) throw std::invalid_argument("als_fit: factors must be at least 1");
  if (!(config.lambda_reg > 0.0)) throw std::invalid_argument("als_fit: lambda_reg must be positive");
  if (config.alpha < 0.0) throw std::invalid_argument("als_fit: alpha must be non-negative");

  const std::size_t f = config.factors;
  FactorModel model;
  model.visitors = matrix.visitors;
  model.devices = matrix.devices;
  model.config = config;
  model.user_factors = Tensor({matrix.rows(), f});
  model.item_factors = Tensor({matrix.cols(), f});
  std::mt19937_64 rng(config.seed);
  const double scale = 0.05 / std::sqrt(static_cast<double>(f));
  std::uniform_real_distribution<double> init(-scale, scale);
  for (double& v : model.user_factors.values()) v = init(rng);
  for (double& v : model.item_factors.values()) v = init(rng);

  if (objective_trace) objective_trace->clear();
  for (std::size_t it = 0; it < config.iterations; ++it) {
    sweep(matrix, config, model.user_factors, model.item_factors, false);
    if (!model.user_factors.all_finite()) {
      throw std::runtime_error("als_fit: non-finite visitor factors after sweep " + std::to_string(it + 1));
    }
    sweep(matrix, config, model.item_factors, model.user_factors, true);
    if (!model.item_factors.all_finite()) {
      throw std::runtime_error("als_fit: non-finite device factors after sweep " + std::to_string(it + 1));
    }
    if (objective_trace) objective_trace->push_back(als_objective(matrix, model));
  }
  return model;
}

double als_objective(const InteractionMatrix& matrix, const FactorModel& model) {
  const std::size_t f = model.factors();
  const double alpha = model.config.alpha;
  double loss = 0.0;
  for (std::size_t u = 0; u < matrix.rows(); ++u) {
    const double* x = model.user_factors.data() + u * f;
    for (std::size_t d = 0; d < matrix.cols(); ++d) {
      const double r = matrix.at(u, d);
      const double pref = r > 0.0 ? 1.0 : 0.0;
      const double conf = 1.0 + alpha * (r > 0.0 ? r : 0.0);
      const double err = pref - dot(x, model.item_factors.data() + d * f, f);
      loss += conf * err * err;
    }
  }
  double norms = 0.0;
  for (double v : model.user_factors.values()) norms += v * v;
  for (double v : model.item_factors.values()) norms += v * v;
  return loss + model.config.lambda_reg * norms;
}

double predict(const FactorModel& model, std::size_t visitor_row, std::size_t device_col) {
  if (visitor_row >= model.user_factors.dim(0) || device_col >= model.item_factors.dim(0)) {
    throw std::out_of_range("predict: index (" + std::to_string(visitor_row) + ", " + std::to_string(device_col) +
                            ") outside " + std::to_string(model.user_factors.dim(0)) + "x" +
                            std::to_string(model.item_factors.dim(0)));
  }
  const std::size_t f = model.factors();
  return dot(model.user_factors.data() + visitor_row * f, model.item_factors.data() + device_col * f, f);
}

InteractionMatrix reconstruct(const FactorModel& model) {
  InteractionMatrix out;
  out.visitors = model.visitors;
  out.devices = model.devices;
  out.values.resize(out.rows() * out.cols());
  for (std::size_t u = 0; u < out.rows(); ++u) {
    for (std::size_t d = 0; d < out.cols(); ++d) out.at(u, d) = std::clamp(predict(model, u, d), 0.0, 1.0);
  }
  return out;
}

std::pair<EmbeddingTable, EmbeddingTable> export_embeddings(const FactorModel& model) {
  return {EmbeddingTable(model.visitors, model.user_factors), EmbeddingTable(model.devices, model.item_factors)};
}

namespace {

void write_header(std::ostream& out, const FactorModel& model) {
  out << "alsmodel v1 f=" << model.factors() << " alpha=" << csv::format_double(model.config.alpha)
      << " lambda=" << csv::format_double(model.config.lambda_reg) << '\n';
}

struct LoadedFactors {
  std::size_t f = 0;
  double alpha = 0.0, lambda = 0.0;
  std::vector<std::string> ids;
  std::vector<double> values;
};

LoadedFactors read_factors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path);
  LoadedFactors out;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path, 1, "empty model file");
  {
    std::istringstream head(line);
    std::string magic, version, ff, af, lf;
    head >> magic >> version >> ff >> af >> lf;
    if (magic != "alsmodel" || version != "v1" || ff.rfind("f=", 0) || af.rfind("alpha=", 0) ||
        lf.rfind("lambda=", 0)) {
      throw DataError(path, 1, "expected header 'alsmodel v1 f=<f> alpha=<a> lambda=<l>'");
    }
    if (!csv::parse_double(af.substr(6), out.alpha) || !csv::parse_double(lf.substr(7), out.lambda)) {
      throw DataError(path, 1, "bad alpha/lambda");
    }
    double fv = 0.0;
    if (!csv::parse_double(ff.substr(2), fv) || fv < 1) throw DataError(path, 1, "bad f");
    out.f = static_cast<std::size_t>(fv);
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, cell;
    fields >> id;
    std::size_t got = 0;
    while (fields >> cell) {
      double v = 0.0;
      if (!csv::parse_double(cell, v)) throw DataError(path, line_no, "non-numeric value '" + cell + "'");
      out.values.push_back(v);
      ++got;
    }
    if (got != out.f) throw DataError(path, line_no, "expected " + std::to_string(out.f) + " values");
    out.ids.push_back(std::move(id));
  }
  return out;
}

}  // namespace

void save_factors(std::ostream& out, const FactorModel& model, bool users) {
  write_header(out, model);
  const auto& ids = users ? model.visitors : model.devices;
  const Tensor& factors = users ? model.user_factors : model.item_factors;
  const std::size_t f = model.factors();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    out << ids[r];
    for (std::size_t k = 0; k < f; ++k) out << ' ' << csv::format_double(factors[r * f + k]);
    out << '\n';
  }
}

void save_model(const std::string& users_path, const std::string& items_path, const FactorModel& model) {
  std::ofstream users(users_path), items(items_path);
  if (!users || !items) throw std::runtime_error("cannot write ALS model to " + users_path + " / " + items_path);
  save_factors(users, model, true);
  save_factors(items, model, false);
}

FactorModel load_model(const std::string& users_path, const std::string& items_path) {
  auto users = read_factors(users_path);
  auto items = read_factors(items_path);
  if (users.f != items.f) throw DataError(items_path, 1, "factor count differs from " + users_path);
  FactorModel model;
  model.config.factors = users.f;
  model.config.alpha = users.alpha;
  model.config.lambda_reg = users.lambda;
  model.visitors = std::move(users.ids);
  model.devices = std::move(items.ids);
  model.user_factors = Tensor({model.visitors.size(), users.f}, std::move(users.values));
  model.item_factors = Tensor({model.devices.size(), items.f}, std::move(items.values));
  return model;
}

}  // namespace hybridrec
