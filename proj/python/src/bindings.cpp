// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>

#include "diagdistill/container.hpp"
#include "diagdistill/gradcheck.hpp"
#include "diagdistill/pipeline.hpp"
#include "diagdistill/synthetic_data.hpp"
#include "diagdistill/trainer.hpp"

namespace py = pybind11;
using namespace diag;

namespace {

// Must match the command-line tool so both produce the same chunks.
constexpr std::uint64_t kCondStream = 0xc0d;

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

py::dict accounting_dict(const Accounting& a) {
  py::dict d;
  d["schedule"] = a.schedule;
  d["nfe"] = a.nfe;
  d["first_chunk_latency"] = a.first_chunk_latency;
  d["in_flight_latency"] = a.in_flight_latency;
  d["throughput"] = a.throughput;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "diagdistill core bindings";

  static py::exception<Error> base(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed") = 0)
      .def("next_u64", &Rng::next_u64)
      .def("uniform", py::overload_cast<>(&Rng::uniform))
      .def("normal", &Rng::normal)
      .def("fork", &Rng::fork, py::arg("stream"))
      .def("gaussian", [](Rng& r, const std::vector<std::size_t>& shape) {
        return to_numpy(gaussian_sample(r, Shape(shape.begin(), shape.end())));
      });

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def(py::init([](double k, int horizon, bool warp) {
             NoiseSchedule s{k, horizon, warp};
             s.validate();
             return s;
           }),
           py::arg("shift_k") = 5.0, py::arg("horizon") = 1000, py::arg("warp_enabled") = true)
      .def_readonly("shift_k", &NoiseSchedule::shift_k)
      .def_readonly("horizon", &NoiseSchedule::horizon)
      .def("shift_timestep", &NoiseSchedule::shift_timestep)
      .def("sigma", &NoiseSchedule::sigma)
      .def("alpha", &NoiseSchedule::alpha);

  m.def("timesteps_for", &timesteps_for, py::arg("steps"));
  m.def(
      "nfe_count",
      [](const std::string& schedule, int multiplier) {
        CostModel c;
        c.nfe_multiplier = multiplier;
        return nfe_count(parse_schedule(schedule), c);
      },
      py::arg("schedule"), py::arg("nfe_multiplier") = 2);
  m.def(
      "simulate",
      [](const std::string& schedule, double cost, int frames_per_chunk) {
        CostModel c;
        c.cost_per_forward = cost;
        c.frames_per_chunk = frames_per_chunk;
        return accounting_dict(simulate(parse_schedule(schedule), c));
      },
      py::arg("schedule"), py::arg("cost_per_forward") = 1.0, py::arg("frames_per_chunk") = 3);
  m.def(
      "extend_cyclically",
      [](const std::string& schedule, std::size_t chunks) {
        return extend_cyclically(parse_schedule(schedule), chunks).str();
      },
      py::arg("schedule"), py::arg("chunks"));

  m.def(
      "generate",
      [](const std::string& schedule, std::size_t chunks, std::uint64_t seed, int forcing_t,
         std::size_t window, bool mix, std::uint64_t model_seed) {
        const NoiseSchedule s;
        ToyDiTConfig mc;
        mc.seed = model_seed;
        const ToyCausalDiT model(mc, s);
        PipelineConfig p;
        const StepSchedule base = parse_schedule(schedule);
        p.schedule = chunks > base.chunks() ? StepSchedule(base.steps(), true) : base;
        p.chunks = chunks;
        p.forcing.forcing_t = forcing_t;
        p.window_chunks = window;
        p.seed = seed;
        p.mix_outputs = mix;
        Rng cond_rng = Rng(seed).fork(kCondStream);
        const Tensor cond = gaussian_sample(cond_rng, {model.cond_dim()});
        GenerationResult r;
        {
          py::gil_scoped_release release;
          r = generate(p, model, s, cond.data());
        }
        py::list out;
        for (const auto& c : r.chunks) out.append(to_numpy(c));
        return out;
      },
      py::arg("schedule") = "4322222", py::arg("chunks") = 7, py::arg("seed") = 42,
      py::arg("forcing_t") = 100, py::arg("window") = 4, py::arg("mix") = true,
      py::arg("model_seed") = 0);

  m.def(
      "run_gradcheck",
      [](std::size_t seeds, double h) {
        py::dict out;
        for (const auto& r : run_gradcheck(seeds, h)) out[py::str(r.name)] = r.max_rel_error;
        return out;
      },
      py::arg("seeds") = 20, py::arg("h") = 1e-5);

  py::class_<GaussianTrainer>(m, "GaussianTrainer")
      .def(py::init([](double ls, double lf, double gamma, std::uint64_t seed, double lr) {
             TrainerConfig c;
             c.weights = LossWeights{ls, lf, gamma};
             c.seed = seed;
             c.lr = lr;
             return GaussianTrainer(c, GaussianWorld{}, NoiseSchedule{});
           }),
           py::arg("lambda_spatial") = 4.0, py::arg("lambda_flow") = 4.0, py::arg("gamma") = 1.0,
           py::arg("seed") = 1, py::arg("lr") = 0.05)
      .def("step",
           [](GaussianTrainer& t) {
             const StepReport r = t.step();
             py::dict d;
             d["step"] = r.step;
             d["L_DMD"] = r.losses.dmd;
             d["L_reg"] = r.losses.reg;
             d["L_DMD_flow"] = r.losses.dmd_flow;
             d["L_reg_flow"] = r.losses.reg_flow;
             d["total"] = r.losses.total;
             d["gap"] = r.gap;
             return d;
           })
      .def("gap", &GaussianTrainer::gap)
      .def_property_readonly("bias", [](const GaussianTrainer& t) { return to_numpy(t.bias()); });

  m.def(
      "moving_dot_clip",
      [](std::size_t height, std::size_t width, std::size_t frames, double dx, double dy,
         std::uint64_t seed, std::size_t index) {
        MovingDotDataset d;
        d.height = height;
        d.width = width;
        d.frames = frames;
        d.dx = dx;
        d.dy = dy;
        d.seed = seed;
        return to_numpy(d.make_clip(index));
      },
      py::arg("height") = 8, py::arg("width") = 8, py::arg("frames") = 12, py::arg("dx") = 1.0,
      py::arg("dy") = 0.0, py::arg("seed") = 0, py::arg("index") = 0);
  m.def("motion_amplitude", [](const Array& v) { return motion_amplitude(from_numpy(v)); });

  m.def("encode_container", [](const std::string& header, const std::vector<Array>& arrays) {
    std::vector<Tensor> ts;
    for (const auto& a : arrays) ts.push_back(from_numpy(a));
    return py::bytes(encode_container(header, ts));
  });
  m.def("decode_container", [](const py::bytes& b) {
    const Container c = decode_container(std::string(b));
    py::list arrays;
    for (const auto& t : c.tensors) arrays.append(to_numpy(t));
    return py::make_tuple(c.header, arrays);
  });
}
