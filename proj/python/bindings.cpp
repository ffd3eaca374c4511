#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "trav/control.hpp"
#include "trav/harness.hpp"
#include "trav/sensor.hpp"

namespace py = pybind11;
using namespace trav;

namespace {

py::array_t<double> to_array(std::span<const double> v, std::vector<py::ssize_t> shape) {
  py::array_t<double> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

ModelParams params_from(const ArchDescriptor& arch, const py::array_t<double, py::array::c_style | py::array::forcecast>& theta) {
  ModelParams p{arch, std::vector<double>(theta.data(), theta.data() + theta.size())};
  p.validate();
  return p;
}

py::array_t<double> heights(const TerrainField& f) {
  const auto n = static_cast<py::ssize_t>(f.nodes_per_side());
  return to_array(f.heights(), {n, n});
}

// Observed-cell samples become a TrainBatch; rows of `cells` are (row, col).
TrainBatch make_batch(const FeatureGrid& grid, const std::vector<std::pair<int, int>>& cells,
                      const std::vector<double>& labels, std::optional<std::vector<double>> weights) {
  if (cells.size() != labels.size()) throw ValidationError("labels: need one label per cell");
  if (weights && weights->size() != labels.size()) throw ValidationError("weights: need one weight per cell");
  TrainBatch b{grid, {}};
  for (std::size_t i = 0; i < cells.size(); ++i)
    b.samples.push_back({{cells[i].first, cells[i].second}, labels[i], weights ? (*weights)[i] : 1.0});
  b.validate();
  return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Terrain simulation, cost network, meta-learning and MPPI navigation";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<RangeError>(m, "RangeError", PyExc_IndexError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  py::enum_<TerrainFamily>(m, "TerrainFamily")
      .value("Flat", TerrainFamily::Flat)
      .value("Rolling", TerrainFamily::Rolling)
      .value("Rough", TerrainFamily::Rough)
      .value("Boulders", TerrainFamily::Boulders)
      .value("Slope", TerrainFamily::Slope);

  py::class_<TerrainSpec>(m, "TerrainSpec")
      .def(py::init<>())
      .def_readwrite("family", &TerrainSpec::family)
      .def_readwrite("extent_m", &TerrainSpec::extent_m)
      .def_readwrite("base_resolution_m", &TerrainSpec::base_resolution_m)
      .def_readwrite("amplitude_m", &TerrainSpec::amplitude_m)
      .def_readwrite("correlation_length_m", &TerrainSpec::correlation_length_m)
      .def_readwrite("obstacle_density", &TerrainSpec::obstacle_density)
      .def_readwrite("seed", &TerrainSpec::seed)
      .def("validate", &TerrainSpec::validate);

  py::class_<TerrainField>(m, "TerrainField")
      .def_property_readonly("cells", &TerrainField::cells)
      .def_property_readonly("resolution", &TerrainField::resolution)
      .def_property_readonly("extent", &TerrainField::extent)
      .def_property_readonly("origin", [](const TerrainField& f) { return std::pair{f.origin().x, f.origin().y}; })
      .def_property_readonly("heights", &heights)
      .def("height_at", &TerrainField::height_at, py::arg("x"), py::arg("y"))
      .def("contains", &TerrainField::contains, py::arg("x"), py::arg("y"));

  m.def("generate_terrain", &generate_terrain, py::arg("spec"));
  m.def("oracle_label", [](const TerrainField& f, double x, double y, double footprint) {
    return oracle_label(f, {x, y}, footprint);
  }, py::arg("field"), py::arg("x"), py::arg("y"), py::arg("footprint_m") = 1.0);

  py::class_<VehicleState>(m, "VehicleState")
      .def(py::init([](double x, double y, double yaw, double v) {
             VehicleState s;
             s.x = x;
             s.y = y;
             s.yaw = yaw;
             s.v = v;
             return s;
           }),
           py::arg("x") = 0.0, py::arg("y") = 0.0, py::arg("yaw") = 0.0, py::arg("v") = 0.0)
      .def_readwrite("x", &VehicleState::x)
      .def_readwrite("y", &VehicleState::y)
      .def_readwrite("yaw", &VehicleState::yaw)
      .def_readwrite("v", &VehicleState::v)
      .def_readonly("z", &VehicleState::z)
      .def_readonly("roll", &VehicleState::roll)
      .def_readonly("pitch", &VehicleState::pitch)
      .def("__repr__", [](const VehicleState& s) {
        std::ostringstream o;
        o << "VehicleState(x=" << s.x << ", y=" << s.y << ", yaw=" << s.yaw << ", v=" << s.v << ")";
        return o.str();
      });

  py::class_<Control>(m, "Control")
      .def(py::init([](double v, double s) { return Control{v, s}; }), py::arg("v_cmd") = 0.0, py::arg("steer") = 0.0)
      .def_readwrite("v_cmd", &Control::v_cmd)
      .def_readwrite("steer", &Control::steer);

  m.def("settle", &settle, py::arg("state"), py::arg("field"));
  m.def("step", &step, py::arg("state"), py::arg("control"), py::arg("field"), py::arg("dt"));
  m.def("interaction_feedback", [](const std::vector<VehicleState>& traj, const TerrainField& f, const GridSpec& g,
                                   const VehicleState& ref, double dt) {
    std::vector<std::tuple<int, int, double, double>> out;
    for (const auto& s : interaction_feedback(traj, f, g, ref, dt)) out.emplace_back(s.cell.row, s.cell.col, s.label, s.weight);
    return out;
  }, py::arg("trajectory"), py::arg("field"), py::arg("grid"), py::arg("reference"), py::arg("dt"),
     "List of (row, col, label, weight) for the cells crossed.");

  py::class_<LidarSpec>(m, "LidarSpec")
      .def(py::init<>())
      .def_readwrite("azimuth_count", &LidarSpec::azimuth_count)
      .def_readwrite("elevation_angles_deg", &LidarSpec::elevation_angles_deg)
      .def_readwrite("max_range_m", &LidarSpec::max_range_m)
      .def_readwrite("range_noise_std_m", &LidarSpec::range_noise_std_m)
      .def_readwrite("dropout_prob", &LidarSpec::dropout_prob)
      .def_readwrite("mount_height_m", &LidarSpec::mount_height_m)
      .def_readwrite("seed_stream", &LidarSpec::seed_stream);

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init([](int n, double cell) { return GridSpec{n, cell}; }), py::arg("size_cells") = 32,
           py::arg("cell_m") = 0.5)
      .def_readwrite("size_cells", &GridSpec::size_cells)
      .def_readwrite("cell_m", &GridSpec::cell_m);

  py::class_<PointCloud>(m, "PointCloud")
      .def("__len__", [](const PointCloud& c) { return c.points.size(); })
      .def("to_numpy", [](const PointCloud& c) {
        py::array_t<double> out({static_cast<py::ssize_t>(c.points.size()), py::ssize_t{3}});
        auto a = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < c.points.size(); ++i) {
          a(i, 0) = c.points[i].x;
          a(i, 1) = c.points[i].y;
          a(i, 2) = c.points[i].z;
        }
        return out;
      });

  py::class_<FeatureGrid>(m, "FeatureGrid")
      .def_property_readonly("size", &FeatureGrid::size)
      .def_property_readonly("origin", [](const FeatureGrid& g) { return std::pair{g.origin().x, g.origin().y}; })
      .def("observed", &FeatureGrid::observed, py::arg("row"), py::arg("col"))
      .def("mean_height", &FeatureGrid::mean_height, py::arg("row"), py::arg("col"))
      .def("height_range", &FeatureGrid::height_range, py::arg("row"), py::arg("col"))
      .def("point_count", &FeatureGrid::point_count, py::arg("row"), py::arg("col"))
      .def("input_tensor", [](const FeatureGrid& g) {
        const auto n = static_cast<py::ssize_t>(g.size());
        return to_array(g.input_tensor(), {n, n, FeatureGrid::kChannels});
      }, "Network input as an (H, W, C) array.");

  m.def("scan", &scan, py::arg("field"), py::arg("pose"), py::arg("spec") = LidarSpec{});
  m.def("rasterize", &rasterize, py::arg("cloud"), py::arg("pose"), py::arg("grid") = GridSpec{});

  py::class_<ArchDescriptor>(m, "ArchDescriptor")
      .def(py::init<>())
      .def_readwrite("patch", &ArchDescriptor::patch)
      .def_readwrite("channels_in", &ArchDescriptor::channels_in)
      .def_readwrite("hidden", &ArchDescriptor::hidden)
      .def("param_count", &ArchDescriptor::param_count);

  py::class_<ModelParams>(m, "ModelParams")
      .def(py::init(&params_from), py::arg("arch"), py::arg("theta"))
      .def_readonly("arch", &ModelParams::arch)
      .def_property_readonly("theta", [](const ModelParams& p) {
        return to_array(p.theta, {static_cast<py::ssize_t>(p.theta.size())});
      })
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  py::class_<TrainBatch>(m, "TrainBatch")
      .def(py::init(&make_batch), py::arg("grid"), py::arg("cells"), py::arg("labels"),
           py::arg("weights") = std::nullopt)
      .def("__len__", [](const TrainBatch& b) { return b.samples.size(); });

  m.def("init_params", &init_params, py::arg("arch"), py::arg("seed"));
  m.def("forward", [](const ModelParams& p, const FeatureGrid& g) {
    const CostMap c = forward(p, g);
    const auto n = static_cast<py::ssize_t>(c.size);
    return std::pair{to_array(c.mu, {n, n}), to_array(c.log_var, {n, n})};
  }, py::arg("params"), py::arg("grid"), "Returns (mu, log_var), each (H, W).");
  m.def("nll_loss", py::overload_cast<const ModelParams&, const TrainBatch&>(&nll_loss), py::arg("params"),
        py::arg("batch"));
  m.def("grad", [](const ModelParams& p, const TrainBatch& b) {
    const auto g = grad(p, b);
    return to_array(g, {static_cast<py::ssize_t>(g.size())});
  }, py::arg("params"), py::arg("batch"));
  m.def("sgd_step", [](const ModelParams& p, const py::array_t<double, py::array::c_style | py::array::forcecast>& g,
                       double lr) { return sgd_step(p, std::span<const double>(g.data(), g.size()), lr); },
        py::arg("params"), py::arg("grad"), py::arg("lr"));
  m.def("inner_adapt", [](const ModelParams& p, const std::vector<TrainBatch>& support, int steps, double alpha) {
    return inner_adapt(p, support, steps, alpha);
  }, py::arg("params"), py::arg("support"), py::arg("steps") = 5, py::arg("alpha") = 1e-2);

  m.def("encode_checkpoint", [](const ModelParams& p) {
    const auto b = encode_checkpoint(p);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  }, py::arg("params"));
  m.def("decode_checkpoint", [](const py::bytes& data) {
    const std::string s = data;
    return decode_checkpoint(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }, py::arg("data"));

  py::class_<MppiConfig>(m, "MppiConfig")
      .def(py::init<>())
      .def_readwrite("horizon", &MppiConfig::horizon)
      .def_readwrite("dt", &MppiConfig::dt)
      .def_readwrite("samples", &MppiConfig::samples)
      .def_readwrite("temperature", &MppiConfig::temperature)
      .def_readwrite("goal_weight", &MppiConfig::goal_weight)
      .def_readwrite("uncertainty_weight", &MppiConfig::uncertainty_weight)
      .def_readwrite("unknown_cell_cost", &MppiConfig::unknown_cell_cost)
      .def_readwrite("seed_stream", &MppiConfig::seed_stream);

  py::class_<EpisodeReport>(m, "EpisodeReport")
      .def_readonly("success", &EpisodeReport::success)
      .def_readonly("steps", &EpisodeReport::steps)
      .def_readonly("mean_oracle", &EpisodeReport::mean_oracle)
      .def_readonly("max_oracle", &EpisodeReport::max_oracle)
      .def_readonly("mean_scan_mae", &EpisodeReport::mean_scan_mae)
      .def_readonly("termination", &EpisodeReport::termination)
      .def("to_json", [](const EpisodeReport& r) { return to_json(r); });

  m.def("navigate", [](const TerrainField& env, const ModelParams& model, std::pair<double, double> start,
                       std::pair<double, double> goal, bool adapt, const MppiConfig& mppi) {
    return navigate(env, model, MetaConfig{}, mppi, NavSetup{}, {start.first, start.second}, {goal.first, goal.second},
                    adapt);
  }, py::arg("env"), py::arg("model"), py::arg("start"), py::arg("goal"), py::arg("adapt") = true,
     py::arg("mppi") = MppiConfig{});

  m.def("default_config_json", [] { return to_json(ExperimentConfig::defaults()).dump(2); });
  m.def("git_blob_hash", [](const py::bytes& b) { return git_blob_hash(std::string(b)); }, py::arg("data"));
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<std::string> store{"trav"};
    store.insert(store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : store) argv.push_back(s.data());
    py::gil_scoped_release release;
    return run_cli(static_cast<int>(argv.size()), argv.data());
  }, py::arg("args"), "Runs the command-line tool in process and returns its exit code.");
}
