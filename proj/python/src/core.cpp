#include <pybind11/pybind11.h>
#include <pybind11/eigen.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "brakeorbit/error.hpp"
#include "brakeorbit/io.hpp"
#include "brakeorbit/potential.hpp"
#include "brakeorbit/radial_grid.hpp"
#include "brakeorbit/run.hpp"
#include "brakeorbit/solution.hpp"

namespace py = pybind11;
namespace bo = brakeorbit;

namespace {

// pybind11 holders cannot be shared_ptr<const T>
using Grid = std::shared_ptr<bo::RadialGrid>;

// nlohmann::json -> Python objects via the json module
py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

bo::RadialField field(const Grid& g, const bo::Vec& u) { return bo::RadialField(g, u); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Radial ground states and brake-orbit trajectories for -Delta u + u = f(u).";

  static PyObject* error = py::exception<bo::Error>(m, "Error").release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const bo::Error& e) {
      const std::string msg = std::string(bo::to_string(e.kind())) + ": " + e.what();
      PyErr_SetString(error, msg.c_str());
    }
  });

  py::class_<bo::Nonlinearity>(m, "Nonlinearity")
      .def_static("pure_power", &bo::Nonlinearity::pure_power, py::arg("p"))
      .def_static("from_table", &bo::Nonlinearity::from_table, py::arg("t"), py::arg("f"),
                  py::arg("p") = 0.0)
      .def_static("from_csv", &bo::Nonlinearity::from_csv, py::arg("path"), py::arg("p") = 0.0)
      .def_property_readonly("p", &bo::Nonlinearity::p)
      .def_property_readonly("mu", &bo::Nonlinearity::mu)
      .def_property_readonly("is_table",
                             [](const bo::Nonlinearity& nl) {
                               return nl.kind() == bo::Nonlinearity::Kind::UserTable;
                             })
      .def("f", &bo::Nonlinearity::f)
      .def("F", &bo::Nonlinearity::F)
      .def("df", &bo::Nonlinearity::df)
      .def("to_dict", [](const bo::Nonlinearity& nl) { return to_py(bo::to_json(nl)); });

  py::class_<bo::RadialGrid, Grid>(m, "RadialGrid")
      .def(py::init<int, double, int>(), py::arg("dim"), py::arg("r_max") = 20.0,
           py::arg("n_r") = 2000)
      .def_property_readonly("dim", &bo::RadialGrid::dim)
      .def_property_readonly("r_max", &bo::RadialGrid::r_max)
      .def_property_readonly("size", &bo::RadialGrid::size)
      .def_property_readonly("h", &bo::RadialGrid::h)
      .def_property_readonly("nodes", &bo::RadialGrid::nodes)
      .def_property_readonly("weights", &bo::RadialGrid::weights)
      .def("integrate", &bo::RadialGrid::integrate)
      .def("laplacian", &bo::RadialGrid::laplacian);

  m.def("potential", [](const Grid& g, const bo::Vec& u, const bo::Nonlinearity& nl) {
    return bo::evaluate_V(field(g, u), nl);
  }, py::arg("grid"), py::arg("u"), py::arg("nl"));
  m.def("gradient", [](const Grid& g, const bo::Vec& u, const bo::Nonlinearity& nl) {
    return bo::grad_V(field(g, u), nl).values;
  }, py::arg("grid"), py::arg("u"), py::arg("nl"));
  m.def("ray_scan", [](const Grid& g, const bo::Vec& u, double b, const bo::Nonlinearity& nl) {
    const auto r = bo::ray_scan(field(g, u), b, nl);
    py::dict d;
    d["t_u"] = r.t_u;
    d["alpha"] = r.alpha;
    d["omega"] = r.omega;
    d["peak"] = r.v_at_tu;
    return d;
  }, py::arg("grid"), py::arg("u"), py::arg("b"), py::arg("nl"));
  m.def("classify", [](const Grid& g, const bo::Vec& u, double b, const bo::Nonlinearity& nl) {
    return std::string(bo::to_string(bo::classify(field(g, u), b, nl)));
  }, py::arg("grid"), py::arg("u"), py::arg("b"), py::arg("nl"));
  m.def("rearrange", [](const Grid& g, const bo::Vec& u) {
    return bo::rearrange(field(g, u)).values;
  }, py::arg("grid"), py::arg("u"));

  m.def("ground_state", [](int dim, const bo::Nonlinearity& nl, double r_max, int n_r) {
    bo::GroundStateOptions opt;
    opt.r_max = r_max;
    opt.n_r = n_r;
    const auto gs = bo::ground_state(dim, nl, opt);
    py::dict d;
    d["grid"] = std::const_pointer_cast<bo::RadialGrid>(gs.w0.grid);
    d["w0"] = gs.w0.values;
    d["c"] = gs.c;
    d["residual"] = gs.residual;
    d["amplitude"] = gs.amplitude;
    return d;
  }, py::arg("dim"), py::arg("nl"), py::arg("r_max") = 20.0, py::arg("n_r") = 2000);

  m.def("run", [](const std::filesystem::path& config, int jobs, bool resume) {
    bo::RunOptions opt;
    opt.jobs = jobs;
    opt.resume = resume;
    py::gil_scoped_release release;
    return bo::run(config, opt);
  }, py::arg("config"), py::arg("jobs") = 1, py::arg("resume") = false,
     "Full solve as done by the CLI; returns its exit code.");
  m.def("verify", [](const std::filesystem::path& dir) {
    const auto loaded = bo::read_solution(dir);
    return to_py(bo::to_json(bo::verify(loaded.sol, loaded.nl)));
  }, py::arg("solution"), "Verdict of a solution bundle as a dict.");
}
