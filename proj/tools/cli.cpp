// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "diagdistill/config.hpp"
#include "diagdistill/container.hpp"
#include "diagdistill/gradcheck.hpp"
#include "diagdistill/pipeline.hpp"
#include "diagdistill/step_planner.hpp"
#include "diagdistill/synthetic_data.hpp"
#include "diagdistill/trainer.hpp"

namespace diag::cli {

namespace {

using nlohmann::ordered_json;

// Stream that derives the condition vector from the run seed.
constexpr std::uint64_t kCondStream = 0xc0d;

const char* const kDefaultBenchSet = "4322222,5433333,5432222,5333333,4333333,4222222";

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  bool csv = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file");
  sub->add_option("--set", c.sets, "override a config key, key=value")->take_all();
  sub->add_flag("--csv", c.csv, "machine-readable CSV output");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg;
  cfg.merge_env();
  if (!c.config_path.empty()) cfg.merge_file(c.config_path);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got \"" + kv + "\"");
    cfg.set_from_string(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::vector<double> parse_doubles(const std::string& text, std::size_t n, const char* what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + " expects numbers, got \"" + text + "\"");
    }
  }
  if (v.size() != n) {
    throw ConfigError(std::string(what) + " expects " + std::to_string(n) + " comma-separated values");
  }
  return v;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string schedules = kDefaultBenchSet;
  double cost = 1.0;
  int frames_per_chunk = 3;
};

int bench(const BenchArgs& a, const Common& c, std::ostream& out) {
  load_config(c);
  CostModel cost;
  cost.cost_per_forward = a.cost;
  cost.frames_per_chunk = a.frames_per_chunk;
  cost.validate();
  std::vector<Accounting> rows;
  for (const auto& s : split(a.schedules)) rows.push_back(simulate(parse_schedule(s), cost));
  if (rows.empty()) throw ConfigError("--schedules is empty");
  std::sort(rows.begin(), rows.end(),
            [](const Accounting& x, const Accounting& y) { return x.schedule < y.schedule; });
  if (c.csv) {
    out << "schedule,nfe,first_latency,in_flight,throughput\n";
    for (const auto& r : rows) {
      out << r.schedule << ',' << r.nfe << ',' << r.first_chunk_latency << ','
          << r.in_flight_latency << ',' << r.throughput << '\n';
    }
    return kExitOk;
  }
  out << std::left << std::setw(12) << "schedule" << std::right << std::setw(6) << "nfe"
      << std::setw(15) << "first_latency" << std::setw(12) << "in_flight" << std::setw(12)
      << "throughput" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.schedule << std::right << std::setw(6) << r.nfe
        << std::fixed << std::setprecision(3) << std::setw(15) << r.first_chunk_latency
        << std::setw(12) << r.in_flight_latency << std::setw(12) << r.throughput << '\n';
    out.unsetf(std::ios::fixed);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string schedule = "4322222";
  std::size_t chunks = 7;
  std::optional<std::int64_t> seed;
  std::optional<int> forcing_t;
  std::optional<std::size_t> window;
  bool no_mix = false;
  std::string out;
};

int generate_cmd(const GenerateArgs& a, const Common& c, std::ostream& out) {
  RunConfig cfg = load_config(c);
  if (a.seed) cfg.set("seed", *a.seed);
  if (a.forcing_t) cfg.set("forcing_t", std::int64_t{*a.forcing_t});
  if (a.window) cfg.set("window_chunks", static_cast<std::int64_t>(*a.window));

  const NoiseSchedule schedule = cfg.schedule();
  const ToyCausalDiT model(cfg.model(), schedule);
  PipelineConfig p;
  const StepSchedule base = parse_schedule(a.schedule);
  p.schedule = a.chunks > base.chunks() ? StepSchedule(base.steps(), true) : base;
  p.chunks = a.chunks;
  p.forcing = cfg.forcing();
  p.window_chunks = static_cast<std::size_t>(cfg.get_int("window_chunks"));
  p.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  p.mix_outputs = !a.no_mix;

  Rng cond_rng = Rng(p.seed).fork(kCondStream);
  const Tensor cond = gaussian_sample(cond_rng, {model.cond_dim()});
  const GenerationResult r = generate(p, model, schedule, cond.data());
  for (const auto& ch : r.chunks) ch.require_finite("generated chunk");

  if (c.csv) {
    out << "chunk,phase,steps,timesteps,forcing_t,cache_size\n";
  } else {
    out << std::left << std::setw(7) << "chunk" << std::setw(11) << "phase" << std::setw(7)
        << "steps" << std::setw(22) << "timesteps" << std::setw(11) << "forcing_t"
        << "cache\n";
  }
  for (const auto& l : r.logs) {
    if (c.csv) {
      out << l.chunk_index << ',' << phase_name(l.phase) << ',' << l.steps << ','
          << join(l.timesteps) << ',' << l.forcing_t << ',' << l.cache_size_after << '\n';
    } else {
      out << std::left << std::setw(7) << l.chunk_index << std::setw(11) << phase_name(l.phase)
          << std::setw(7) << l.steps << std::setw(22) << join(l.timesteps) << std::setw(11)
          << l.forcing_t << l.cache_size_after << '\n';
    }
  }

  if (!a.out.empty()) {
    ordered_json h;
    ordered_json shapes = ordered_json::array();
    for (const auto& ch : r.chunks) shapes.push_back(ch.shape());
    h["shapes"] = shapes;
    h["seed"] = p.seed;
    h["schedule"] = base.str();
    h["chunks"] = p.chunks;
    h["mix_outputs"] = p.mix_outputs;
    h["config"] = ordered_json::parse(cfg.to_json());
    write_container(a.out, h.dump(), r.chunks);
    if (!c.csv) out << "wrote " << r.chunks.size() << " chunks to " << a.out << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string mode = "gaussian";
  std::string strategy = "diagonal";
  std::size_t steps = 500;
  std::optional<std::int64_t> seed;
  std::string weights = "4,4,1";
  std::string log;
  std::optional<double> lr;
  std::optional<double> momentum;
  std::optional<std::size_t> batch;
  std::string velocity = "1,0";
};

void write_csv_row(std::ostream& f, const StepReport& r, bool with_gap) {
  const auto& l = r.losses;
  f << r.step << ',' << l.dmd << ',' << l.reg << ',' << l.dmd_flow << ',' << l.reg_flow << ','
    << l.total;
  if (with_gap) f << ',' << r.gap;
  f << '\n';
}

int train(const TrainArgs& a, const Common& c, std::ostream& out) {
  RunConfig cfg = load_config(c);
  if (a.seed) cfg.set("seed", *a.seed);
  const NoiseSchedule schedule = cfg.schedule();
  const bool gaussian = a.mode == "gaussian";
  if (!gaussian && a.mode != "toy") throw ConfigError("--mode must be gaussian or toy");

  TrainerConfig tc = gaussian ? TrainerConfig{} : toy_trainer_defaults();
  const auto w = parse_doubles(a.weights, 3, "--weights");
  tc.weights = LossWeights{w[0], w[1], w[2]};
  tc.strategy = parse_strategy(a.strategy);
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  if (a.lr) tc.lr = *a.lr;
  if (a.momentum) tc.momentum = *a.momentum;
  if (a.batch) tc.batch = *a.batch;

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::trunc);
    if (!log) throw ConfigError("cannot open log file " + a.log);
    log << std::setprecision(17);
    log << "step,L_DMD,L_reg,L_DMD_flow,L_reg_flow,total" << (gaussian ? ",|b-m|" : "") << '\n';
  }

  auto report = [&](const StepReport& r) {
    if (log.is_open()) write_csv_row(log, r, gaussian);
  };

  if (gaussian) {
    GaussianTrainer t(tc, GaussianWorld{}, schedule);
    StepReport last;
    for (std::size_t i = 0; i < a.steps; ++i) report(last = t.step());
    if (c.csv) {
      out << "steps,total,|b-m|\n" << a.steps << ',' << last.losses.total << ',' << t.gap() << '\n';
    } else {
      out << "mode gaussian  strategy " << strategy_name(tc.strategy) << "  steps " << a.steps
          << "\nfinal |b-m| " << t.gap() << "  total loss " << last.losses.total << '\n';
    }
    return kExitOk;
  }

  if (cfg.flow_repr() != FlowRepr::kLearned) {
    throw ConfigError("toy training supports flow_repr=learned only");
  }
  ToyConfig toy;
  const auto v = parse_doubles(a.velocity, 2, "--velocity");
  toy.data.dx = v[0];
  toy.data.dy = v[1];
  toy.data.height = static_cast<std::size_t>(cfg.get_int("height"));
  toy.data.width = static_cast<std::size_t>(cfg.get_int("width"));
  toy.chunk_frames = static_cast<std::size_t>(cfg.get_int("frames_per_chunk"));
  const ExtractorConfig ex = cfg.extractor();
  toy.channels = ex.channels;
  toy.extractor.c_mid = ex.c_mid;
  toy.extractor.c_feat = ex.c_feat;
  toy.extractor.channels = ex.channels;
  toy.ema.mu = cfg.get_number("ema_mu");
  toy.conditioning.forcing_t = static_cast<int>(cfg.get_int("forcing_t"));
  toy.conditioning.window = static_cast<std::size_t>(cfg.get_int("window_chunks"));
  ToyTrainer t(tc, toy, schedule);
  StepReport last;
  for (std::size_t i = 0; i < a.steps; ++i) report(last = t.step());
  const double gen_amp = t.generated_motion_amplitude();
  const double data_amp = t.data_motion_amplitude();
  if (c.csv) {
    out << "steps,total,motion_generated,motion_data\n"
        << a.steps << ',' << last.losses.total << ',' << gen_amp << ',' << data_amp << '\n';
  } else {
    out << "mode toy  strategy " << strategy_name(tc.strategy) << "  steps " << a.steps
        << "\nmotion amplitude generated " << gen_amp << "  data " << data_amp
        << "\ntotal loss " << last.losses.total << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::size_t seeds = 20;
  double h = 1e-5;
  double tol = 1e-4;
};

int gradcheck(const GradcheckArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(c);
  const auto results =
      run_gradcheck(a.seeds, a.h, static_cast<std::uint64_t>(cfg.get_int("seed")));
  double worst = 0.0;
  std::string worst_name;
  out << (c.csv ? "gradient,max_rel_error,seeds\n" : "");
  for (const auto& r : results) {
    if (c.csv) {
      out << r.name << ',' << r.max_rel_error << ',' << r.seeds << '\n';
    } else {
      out << std::left << std::setw(26) << r.name << std::scientific << std::setprecision(3)
          << r.max_rel_error << '\n';
      out.unsetf(std::ios::scientific);
    }
    if (!(r.max_rel_error < worst) ) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  if (!c.csv) out << "max relative error " << worst << " over " << a.seeds << " seeds\n";
  if (!(worst < a.tol)) {
    err << "error kind=numeric msg=gradient " << worst_name << " relative error " << worst
        << " exceeds " << a.tol << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct DataArgs {
  std::size_t clips = 64;
  std::string velocity = "1,0";
  std::size_t frames = 12;
  std::optional<std::int64_t> seed;
  std::string out;
};

int data(const DataArgs& a, const Common& c, std::ostream& out) {
  RunConfig cfg = load_config(c);
  if (a.seed) cfg.set("seed", *a.seed);
  MovingDotDataset ds;
  const auto v = parse_doubles(a.velocity, 2, "--velocity");
  ds.dx = v[0];
  ds.dy = v[1];
  ds.frames = a.frames;
  ds.height = static_cast<std::size_t>(cfg.get_int("height"));
  ds.width = static_cast<std::size_t>(cfg.get_int("width"));
  ds.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  ds.validate();
  std::vector<Tensor> clips;
  double amp = 0.0;
  for (std::size_t i = 0; i < a.clips; ++i) {
    clips.push_back(ds.make_clip(i));
    if (ds.frames >= 2) amp += motion_amplitude(clips.back());
  }
  ordered_json h;
  ordered_json shapes = ordered_json::array();
  for (const auto& cl : clips) shapes.push_back(cl.shape());
  h["shapes"] = shapes;
  h["seed"] = ds.seed;
  h["velocity"] = {ds.dx, ds.dy};
  h["frames"] = ds.frames;
  h["height"] = ds.height;
  h["width"] = ds.width;
  write_container(a.out, h.dump(), clips);
  const double mean_amp = a.clips && ds.frames >= 2 ? amp / static_cast<double>(a.clips) : 0.0;
  if (c.csv) {
    out << "clips,frames,mean_motion_amplitude\n" << a.clips << ',' << ds.frames << ',' << mean_amp << '\n';
  } else {
    out << "wrote " << a.clips << " clips of " << ds.frames << " frames to " << a.out
        << "  mean motion amplitude " << mean_amp << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diagonal distillation toolkit", "diagdistill"};
  app.require_subcommand(1);

  Common common;
  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "NFE and cost accounting for step schedules");
  bench_cmd->add_option("--schedules", ba.schedules, "comma-separated digit schedules");
  bench_cmd->add_option("--cost", ba.cost, "cost per forward");
  bench_cmd->add_option("--frames-per-chunk", ba.frames_per_chunk, "frames per chunk");
  add_common(bench_cmd, common);

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "chunkwise diagonal generation");
  gen_cmd->add_option("--schedule", ga.schedule, "digit schedule");
  gen_cmd->add_option("--chunks", ga.chunks, "chunks to generate");
  gen_cmd->add_option("--seed", ga.seed, "run seed");
  gen_cmd->add_option("--forcing-t", ga.forcing_t, "noise level of cached latents");
  gen_cmd->add_option("--window", ga.window, "cache window in chunks");
  gen_cmd->add_flag("--no-mix", ga.no_mix, "skip output mixing");
  gen_cmd->add_option("--out", ga.out, "DIAGLAT1 output path");
  add_common(gen_cmd, common);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "distillation in analytic or toy mode");
  train_cmd->add_option("--mode", ta.mode, "gaussian | toy");
  train_cmd->add_option("--strategy", ta.strategy, "teacher | diffusion | self | diagonal");
  train_cmd->add_option("--steps", ta.steps, "generator steps");
  train_cmd->add_option("--seed", ta.seed, "run seed");
  train_cmd->add_option("--weights", ta.weights, "lambda_spatial,lambda_flow,gamma");
  train_cmd->add_option("--log", ta.log, "per-step CSV log");
  train_cmd->add_option("--lr", ta.lr, "generator learning rate");
  train_cmd->add_option("--momentum", ta.momentum, "SGD momentum");
  train_cmd->add_option("--batch", ta.batch, "samples per step");
  train_cmd->add_option("--velocity", ta.velocity, "toy clip velocity dx,dy");
  add_common(train_cmd, common);

  GradcheckArgs gca;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of analytic gradients");
  gc_cmd->add_option("--seeds", gca.seeds, "seeds per gradient");
  gc_cmd->add_option("--step", gca.h, "central-difference step");
  gc_cmd->add_option("--tol", gca.tol, "maximum relative error");
  add_common(gc_cmd, common);

  DataArgs da;
  auto* data_cmd = app.add_subcommand("data", "synthetic moving-dot clips");
  data_cmd->add_option("--clips", da.clips, "number of clips");
  data_cmd->add_option("--velocity", da.velocity, "dx,dy per frame");
  data_cmd->add_option("--frames", da.frames, "frames per clip");
  data_cmd->add_option("--seed", da.seed, "dataset seed");
  data_cmd->add_option("--out", da.out, "DIAGLAT1 output path")->required();
  add_common(data_cmd, common);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error kind=usage msg=" << msg << '\n';
    return kExitUsage;
  }

  try {
    if (bench_cmd->parsed()) return bench(ba, common, out);
    if (gen_cmd->parsed()) return generate_cmd(ga, common, out);
    if (train_cmd->parsed()) return train(ta, common, out);
    if (gc_cmd->parsed()) return gradcheck(gca, common, out, err);
    if (data_cmd->parsed()) return data(da, common, out);
  } catch (const NumericError& e) {
    err << "error kind=numeric msg=" << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error kind=usage msg=" << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace diag::cli
