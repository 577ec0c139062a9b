#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "metadetector/cli.hpp"
#include "metadetector/errors.hpp"
#include "metadetector/eval.hpp"
#include "metadetector/mmd.hpp"
#include "metadetector/training.hpp"

namespace py = pybind11;
using namespace metadet;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Weighted adversarial fake-news detector core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli_main(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a subcommand; returns (exit_code, stdout, stderr).");

  m.def(
      "median_bandwidths",
      [](const std::vector<mmd::Vec>& xs, const std::vector<mmd::Vec>& ys) {
        return mmd::median_bandwidths(mmd::pooled_sq_dists(xs, ys)).sigma2;
      },
      py::arg("x"), py::arg("y"));

  m.def(
      "mmd_squared",
      [](const std::vector<mmd::Vec>& xs, const std::vector<mmd::Vec>& ys) {
        const auto bank = mmd::median_bandwidths(mmd::pooled_sq_dists(xs, ys));
        return mmd::mmd_squared(xs, ys, bank);
      },
      py::arg("x"), py::arg("y"),
      "Squared MMD under the median-heuristic Gaussian bank.");

  m.def(
      "compute_weights",
      [](const std::vector<double>& pseudo, bool gate_open) {
        return train::compute_weights(pseudo, gate_open, train::WeightingOverride::kAuto).values;
      },
      py::arg("pseudo"), py::arg("gate_open"));

  m.def(
      "metrics_json",
      [](const std::vector<int>& pred, const std::vector<int>& labels) {
        return eval::to_json(eval::metrics_from_predictions(pred, labels)).dump();
      },
      py::arg("predictions"), py::arg("labels"));

  m.def("default_config_json", [] { return train::config_to_json(train::TrainConfig{}).dump(); });
}
