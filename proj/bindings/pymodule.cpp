#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "fedlora/config.hpp"
#include "fedlora/federation.hpp"
#include "fedlora/harness.hpp"
#include "fedlora/linalg.hpp"
#include "fedlora/privacy.hpp"

namespace py = pybind11;

namespace {

using fedlora::Matrix;

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
  std::memcpy(m.mutable_data().data(), arr.data(),
              sizeof(double) * static_cast<std::size_t>(arr.size()));
  return m;
}

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> arr({m.rows(), m.cols()});
  std::memcpy(arr.mutable_data(), m.data().data(), sizeof(double) * m.size());
  return arr;
}

std::vector<Matrix> to_matrices(const std::vector<py::array_t<double>>& arrays) {
  std::vector<Matrix> out;
  out.reserve(arrays.size());
  for (const auto& a : arrays) out.push_back(to_matrix(a));
  return out;
}

py::list metrics_to_pylist(const std::vector<fedlora::RoundMetrics>& rows) {
  py::list out;
  for (const auto& r : rows) {
    py::dict d;
    d["round"] = r.round;
    d["accuracy"] = r.accuracy;
    d["macro_f1"] = r.macro_f1;
    d["deviation_norm"] = r.deviation_norm;
    d["mean_norm_linear_b"] = r.mean_norm_linear_b;
    d["mean_norm_linear_a"] = r.mean_norm_linear_a;
    d["epsilon_spent"] = r.epsilon_spent;
    out.append(std::move(d));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_fedlora, m) {
  m.doc() = "Federated LoRA simulation core: dense linear algebra, DP noise "
            "regulation and federation rounds";
  m.attr("__version__") = fedlora::kToolVersion;

  py::class_<fedlora::Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("uniform", &fedlora::Rng::next_double)
      .def("gaussian", &fedlora::Rng::next_gaussian)
      .def(
          "gaussian_matrix",
          [](fedlora::Rng& rng, std::size_t rows, std::size_t cols, double std_dev) {
            return to_array(fedlora::sample_gaussian(rows, cols, std_dev, rng));
          },
          py::arg("rows"), py::arg("cols"), py::arg("std") = 1.0)
      .def("split", &fedlora::Rng::split, py::arg("stream_id"))
      .def_property_readonly("seed", &fedlora::Rng::seed)
      .def_property_readonly("position", &fedlora::Rng::position);

  m.def(
      "matmul",
      [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return to_array(fedlora::matmul(to_matrix(a), to_matrix(b)));
      },
      py::arg("lhs"), py::arg("rhs"));

  m.def(
      "frobenius_norm",
      [](const py::array_t<double>& a) { return fedlora::frobenius_norm(to_matrix(a)); },
      py::arg("m"));

  m.def(
      "svd",
      [](const py::array_t<double>& a) {
        const fedlora::SvdResult d = fedlora::svd(to_matrix(a));
        return py::make_tuple(to_array(d.u), d.singular_values, to_array(d.v));
      },
      py::arg("m"), "Thin SVD: returns (U, singular_values, V) with M = U diag(s) V^T");

  m.def(
      "pinv",
      [](const py::array_t<double>& a, double tol) {
        return to_array(fedlora::pinv(to_matrix(a), tol));
      },
      py::arg("m"), py::arg("tolerance") = -1.0);

  m.def(
      "clip_update",
      [](const py::array_t<double>& delta, double c) {
        return to_array(fedlora::clip_update(to_matrix(delta), c));
      },
      py::arg("delta"), py::arg("clip"));

  m.def(
      "regulate_for_b",
      [](const py::array_t<double>& xi_w, const py::array_t<double>& a) {
        return to_array(fedlora::regulate_for_b(to_matrix(xi_w), to_matrix(a)));
      },
      py::arg("xi_w"), py::arg("a"));

  m.def(
      "regulate_for_a",
      [](const py::array_t<double>& xi_w, const py::array_t<double>& b) {
        return to_array(fedlora::regulate_for_a(to_matrix(xi_w), to_matrix(b)));
      },
      py::arg("xi_w"), py::arg("b"));

  m.def(
      "noise_decomposition",
      [](const py::array_t<double>& b, const py::array_t<double>& a,
         const py::array_t<double>& xi_b, const py::array_t<double>& xi_a,
         double alpha, std::size_t rank) {
        const auto d = fedlora::noise_decomposition(to_matrix(b), to_matrix(a),
                                                    to_matrix(xi_b), to_matrix(xi_a),
                                                    alpha, rank);
        return py::make_tuple(to_array(d.linear_b), to_array(d.linear_a),
                              to_array(d.quadratic));
      },
      py::arg("b"), py::arg("a"), py::arg("xi_b"), py::arg("xi_a"), py::arg("alpha"),
      py::arg("rank"));

  m.def("epsilon_of", &fedlora::epsilon_of, py::arg("sigma"), py::arg("delta"),
        py::arg("rounds"), py::arg("clients") = 1);
  m.def("calibrate_sigma", &fedlora::calibrate_sigma, py::arg("epsilon"),
        py::arg("delta"), py::arg("rounds"), py::arg("clients") = 1);

  m.def(
      "aggregate",
      [](const std::vector<py::array_t<double>>& matrices) {
        return to_array(fedlora::aggregate(to_matrices(matrices)));
      },
      py::arg("matrices"));

  m.def(
      "aggregation_deviation",
      [](const std::vector<py::array_t<double>>& bs,
         const std::vector<py::array_t<double>>& as, double alpha, std::size_t rank) {
        const auto d =
            fedlora::aggregation_deviation(to_matrices(bs), to_matrices(as), alpha, rank);
        return py::make_tuple(to_array(d.o), d.norm);
      },
      py::arg("bs"), py::arg("as_"), py::arg("alpha") = 1.0, py::arg("rank") = 1);

  m.def(
      "make_synthetic",
      [](int classes, std::size_t dim, std::size_t n, double class_sep,
         std::uint64_t seed) {
        const fedlora::Dataset ds =
            fedlora::make_synthetic(classes, dim, n, class_sep, seed);
        return py::make_tuple(to_array(ds.x), ds.y);
      },
      py::arg("classes"), py::arg("dim"), py::arg("n"), py::arg("class_sep"),
      py::arg("seed"));

  m.def(
      "dirichlet_partition",
      [](const std::vector<int>& labels, int clients, double beta, std::uint64_t seed,
         std::size_t min_shard) {
        return fedlora::dirichlet_partition(labels, clients, beta, seed, min_shard).shards;
      },
      py::arg("labels"), py::arg("clients"), py::arg("beta"), py::arg("seed"),
      py::arg("min_shard") = 1);

  m.def(
      "run_single",
      [](const std::string& config_text, std::uint64_t seed) {
        const auto cfg = fedlora::parse_config(config_text);
        return metrics_to_pylist(fedlora::run_federation(cfg, seed).metrics);
      },
      py::arg("config_json"), py::arg("seed"),
      "Run one federation seed from a JSON config string; returns per-round metrics");

  m.def(
      "run_experiment",
      [](const std::string& config_text) {
        const auto artifacts = fedlora::run_experiment(fedlora::parse_config(config_text));
        return artifacts.summary_file;
      },
      py::arg("config_json"),
      "Run all seeds of a JSON config, writing CSV/JSON outputs; returns the "
      "summary path");
}
