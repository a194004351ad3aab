// SPDX-License-Identifier: Apache-2.0
#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gaitssl/biomarker.hpp"
#include "gaitssl/cli.hpp"
#include "gaitssl/config.hpp"
#include "gaitssl/errors.hpp"
#include "gaitssl/losses.hpp"
#include "gaitssl/probe.hpp"
#include "gaitssl/synthetic.hpp"

namespace py = pybind11;
using namespace gaitssl;

namespace {

config::RunConfig parse_config(const std::string& json_text) {
    return config::parse_run_config(config::json::parse(json_text), "<python>");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of the gaitssl toolkit";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def(
        "run",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one CLI subcommand in-process; returns (exit_code, stdout, stderr).");

    m.def(
        "resolve_config", [](const std::string& text) { return config::to_json(parse_config(text)).dump(); },
        py::arg("config_json"), "Validates a run config and returns it with every default filled in.");
    m.def(
        "config_hash", [](const std::string& text) { return config::config_hash(parse_config(text)); },
        py::arg("config_json"));

    m.def(
        "generate_cohort",
        [](const std::string& text, const std::filesystem::path& out_dir) {
            const auto cfg = parse_config(text);
            const auto ds = synth::generate_cohort(cfg.cohort);
            data::save_dataset(ds, out_dir);
            return py::make_tuple(ds.subjects.size(), ds.trials.size());
        },
        py::arg("config_json"), py::arg("out_dir"), "Writes a synthetic dataset; returns (subjects, trials).");

    m.def(
        "contrastive_loss",
        [](const std::vector<std::vector<double>>& z, double temperature) {
            if (z.empty()) throw DataError("contrastive_loss: empty batch");
            const std::size_t dim = z[0].size();
            std::vector<double> flat;
            for (const auto& row : z) {
                if (row.size() != dim) throw DataError("contrastive_loss: ragged rows");
                flat.insert(flat.end(), row.begin(), row.end());
            }
            return losses::contrastive_value(flat, z.size(), dim, temperature);
        },
        py::arg("z"), py::arg("temperature") = 0.1,
        "Loss over 2N unit rows laid out [a_0..a_{N-1}, b_0..b_{N-1}].");

    m.def(
        "geometric_median",
        [](const std::vector<std::vector<double>>& points, double tol, std::size_t max_iter) {
            biomarker::MedianOptions o;
            o.tol = tol;
            o.max_iter = max_iter;
            const auto r = biomarker::geometric_median(points, o);
            return py::make_tuple(r.point, r.iterations, r.converged);
        },
        py::arg("points"), py::arg("tol") = 1e-9, py::arg("max_iter") = 1000);

    m.def(
        "spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return biomarker::spearman(x, y); },
        py::arg("x"), py::arg("y"));

    m.def(
        "fit_l1_logistic",
        [](const std::vector<std::vector<double>>& X, const std::vector<int>& y, double l1_weight) {
            probe::Matrix mat;
            mat.rows = X.size();
            mat.cols = X.empty() ? 0 : X[0].size();
            for (const auto& row : X) {
                if (row.size() != mat.cols) throw DataError("fit_l1_logistic: ragged rows");
                mat.values.insert(mat.values.end(), row.begin(), row.end());
            }
            const auto fit = probe::fit_l1_logistic(mat, y, l1_weight);
            return py::make_tuple(fit.w, fit.b, fit.objective);
        },
        py::arg("X"), py::arg("y"), py::arg("l1_weight"), "Returns (w, b, objective).");
}
