// fustal: stage-by-stage command line for the localization pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fustal/config.hpp"
#include "fustal/dataio.hpp"
#include "fustal/diffnum.hpp"
#include "fustal/errors.hpp"
#include "fustal/eval.hpp"
#include "fustal/generator.hpp"
#include "fustal/pipeline.hpp"
#include "fustal/selector.hpp"
#include "fustal/student.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fustal;

namespace {

struct Args {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string features;
  std::string proposals;
  std::string gt;
  std::string checkpoint;
  std::string name = "fustal";
  std::size_t seeds = 3;
  std::vector<std::string> inputs;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw IoError(path, what + " path not given");
  if (!fs::is_regular_file(path)) throw IoError(path, what + " not found");
}

Config load(const Args& a) {
  require_file(a.config, "config");
  auto c = load_config(a.config);
  c.set_seed(a.seed);
  return c;
}

fs::path out_dir(const Args& a) {
  if (a.out.empty()) throw IoError(a.out, "output directory not given");
  fs::create_directories(a.out);
  return a.out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

json ckpt_meta(const Config& c, std::uint64_t seed, const std::string& model, const std::string& stage) {
  return {{"model", model}, {"stage", stage}, {"config_hash", c.hash()}, {"seed", seed}};
}

template <class Row, class F>
void write_log(const fs::path& path, const std::vector<Row>& rows, const dataio::ArtifactMeta& meta,
               const std::string& header, F&& line) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << "# config_hash=" << meta.config_hash << " seed=" << meta.seed << "\n" << header << "\n";
  for (const auto& r : rows) out << line(r) << "\n";
}

void save_student(const fs::path& path, const student::TrainedStudent& ts, json meta) {
  diffnum::Checkpoint ck;
  ck.meta = std::move(meta);
  for (const auto& [name, t] : ts.net.params()) ck.params.add("student." + name, t);
  for (const auto& [name, t] : ts.ema.shadow) ck.params.add("ema." + name, t);
  ck.meta["ema_decay"] = ts.ema.decay;
  diffnum::save_checkpoint(path, ck);
}

student::TrainedStudent load_student(const diffnum::Checkpoint& ck) {
  diffnum::ModelParams net, ema;
  for (const auto& [name, t] : ck.params) {
    if (name.rfind("student.", 0) == 0)
      net.add(name.substr(8), t);
    else if (name.rfind("ema.", 0) == 0)
      ema.add(name.substr(4), t);
    else
      throw ContractError("unexpected tensor in student checkpoint: " + name);
  }
  return {student::StudentNet(std::move(net)), student::EmaState{std::move(ema), ck.meta.value("ema_decay", 0.999)}};
}

std::string model_of(const diffnum::Checkpoint& ck, const std::string& path) {
  if (!ck.meta.contains("model") || !ck.meta["model"].is_string())
    throw FormatError(path, 0, "checkpoint meta lacks a model tag");
  return ck.meta["model"].get<std::string>();
}

std::string student_log_line(const student::LogRow& r) {
  return std::to_string(r.iteration) + "," + fmt("%.9g", r.loss.focal) + "," + fmt("%.9g", r.loss.diou) + "," +
         fmt("%.9g", r.loss.mil) + "," + fmt("%.9g", r.loss.total);
}

// --- subcommands ------------------------------------------------------------

int synth_gen(const Args& a) {
  const auto c = load(a);
  const auto data = dataio::generate_synth(c.synth);
  dataio::write_synth(out_dir(a), data, c.meta(a.seed, "ground_truth"));
  std::cout << "wrote " << data.train.videos.size() << " train and " << data.test.videos.size()
            << " test videos to " << a.out << "\n";
  return 0;
}

int train_generator(const Args& a) {
  const auto c = load(a);
  require_file(a.features, "feature manifest");
  const auto videos = dataio::load_videos(a.features, c.num_classes);
  const auto dir = out_dir(a);
  std::vector<generator::LogRow> log;
  auto net = generator::train_generator(videos, c.num_classes, c.generator, &log);
  diffnum::save_checkpoint(dir / "generator.ckpt", {ckpt_meta(c, a.seed, "generator", "generation"), net.params()});
  write_log(dir / "generator_log.csv", log, c.meta(a.seed, "log"), "iteration,mil,in_video,cross_video,total",
            [](const generator::LogRow& r) {
              return std::to_string(r.iteration) + "," + fmt("%.9g", r.loss.mil) + "," + fmt("%.9g", r.loss.in_video) +
                     "," + fmt("%.9g", r.loss.cross_video) + "," + fmt("%.9g", r.loss.total);
            });
  std::cout << "generator trained for " << log.size() << " iterations; final loss "
            << (log.empty() ? 0.0 : log.back().loss.total) << "\n";
  return 0;
}

generator::GeneratorNet load_generator(const Args& a) {
  require_file(a.checkpoint, "checkpoint");
  auto ck = diffnum::load_checkpoint(a.checkpoint);
  if (model_of(ck, a.checkpoint) != "generator") throw FormatError(a.checkpoint, 0, "not a generator checkpoint");
  return generator::GeneratorNet(std::move(ck.params));
}

int gen_proposals(const Args& a) {
  const auto c = load(a);
  require_file(a.features, "feature manifest");
  const auto videos = dataio::load_videos(a.features, c.num_classes);
  const auto net = load_generator(a);
  const auto props = pipeline::generate_proposals(net, videos, c);
  dataio::write_proposals(out_dir(a) / "proposals.jsonl", props, c.meta(a.seed, "proposals"));
  std::cout << props.size() << " proposals\n";
  return 0;
}

int select_cmd(const Args& a) {
  const auto c = load(a);
  require_file(a.proposals, "proposals");
  auto props = dataio::read_proposals(a.proposals);
  const auto n = props.size();
  const auto kept = pipeline::select(std::move(props), c.select.gamma, c.select.eta);
  dataio::write_proposals(out_dir(a) / "pseudo_labels.jsonl", kept, c.meta(a.seed, "pseudo_labels"));
  std::cout << "kept " << kept.size() << " of " << n << " proposals\n";
  return 0;
}

int train_student(const Args& a) {
  const auto c = load(a);
  require_file(a.features, "feature manifest");
  require_file(a.proposals, "pseudo labels");
  const auto videos = dataio::load_videos(a.features, c.num_classes);
  const auto labels = dataio::read_proposals(a.proposals);
  const auto dir = out_dir(a);
  std::vector<student::LogRow> log;
  const auto ts = student::train_student(videos, student::group_by_video(labels), c.num_classes, c.student,
                                         c.student.first_stage_iterations(), &log);
  save_student(dir / "student.ckpt", ts, ckpt_meta(c, a.seed, "student", "train"));
  write_log(dir / "student_log.csv", log, c.meta(a.seed, "log"), "iteration,focal,diou,mil,total", student_log_line);
  std::cout << "student trained for " << log.size() << " iterations\n";
  return 0;
}

student::TrainedStudent load_student_ckpt(const Args& a) {
  require_file(a.checkpoint, "checkpoint");
  const auto ck = diffnum::load_checkpoint(a.checkpoint);
  if (model_of(ck, a.checkpoint) != "student") throw FormatError(a.checkpoint, 0, "not a student checkpoint");
  return load_student(ck);
}

int distill(const Args& a) {
  const auto c = load(a);
  require_file(a.features, "feature manifest");
  const auto videos = dataio::load_videos(a.features, c.num_classes);
  auto ts = load_student_ckpt(a);
  ts.ema.decay = c.student.ema_decay;
  const auto dir = out_dir(a);
  std::vector<Proposal> teacher;
  std::vector<student::LogRow> log;
  student::distill_round(ts, videos, c.student, c.student.distill_iterations(), &teacher, &log);
  dataio::write_proposals(dir / "teacher_labels.jsonl", teacher, c.meta(a.seed, "teacher_labels"));
  save_student(dir / "student.ckpt", ts, ckpt_meta(c, a.seed, "student", "distill"));
  write_log(dir / "distill_log.csv", log, c.meta(a.seed, "log"), "iteration,focal,diou,mil,total", student_log_line);
  std::cout << teacher.size() << " teacher labels; distilled for " << log.size() << " iterations\n";
  return 0;
}

int infer(const Args& a) {
  const auto c = load(a);
  require_file(a.features, "feature manifest");
  require_file(a.checkpoint, "checkpoint");
  const auto videos = dataio::load_videos(a.features, c.num_classes);
  auto ck = diffnum::load_checkpoint(a.checkpoint);
  const auto model = model_of(ck, a.checkpoint);
  std::vector<Proposal> preds;
  if (model == "generator") {
    preds = pipeline::generator_predict(generator::GeneratorNet(std::move(ck.params)), videos, c);
  } else if (model == "student") {
    preds = student::predict(load_student(ck).net, videos, c.student);
  } else {
    throw FormatError(a.checkpoint, 0, "unknown model tag: " + model);
  }
  dataio::write_proposals(out_dir(a) / "predictions.jsonl", preds, c.meta(a.seed, "predictions"));
  std::cout << preds.size() << " predictions\n";
  return 0;
}

int eval_cmd(const Args& a) {
  const auto c = load(a);
  require_file(a.proposals, "predictions");
  require_file(a.gt, "ground truth");
  const auto preds = dataio::read_proposals(a.proposals);
  const auto gt = dataio::read_ground_truth(a.gt);
  const auto dir = out_dir(a);
  const std::vector<eval::MetricsRow> rows{{a.name, eval::map_suite(preds, gt)}};
  eval::write_metrics_csv(dir / "metrics.csv", rows, c.meta(a.seed, "metrics"));
  selector::write_histogram_csv(dir / "fp_histogram.csv", selector::fp_distribution(preds, gt),
                                c.meta(a.seed, "fp_histogram"));
  std::cout << eval::format_table(rows) << "avg mAP (0.1:0.7): " << fmt("%.4f", rows[0].table.avg_01_07) << "\n";
  return 0;
}

int ablate(const Args& a) {
  const auto base = load(a);
  if (a.seeds == 0) throw ConfigError("--seeds", "must be positive");
  const auto dir = out_dir(a);
  std::vector<std::vector<eval::MetricsRow>> runs;
  json diag = json::array();
  std::vector<selector::HistogramRow> hist;
  for (std::size_t i = 0; i < a.seeds; ++i) {
    const std::uint64_t seed = a.seed + i;
    auto c = base;
    c.set_seed(seed);
    const auto data = dataio::generate_synth(c.synth);
    const auto run = pipeline::run_ablation(data, c, [&](const std::string& s) {
      std::cerr << "[seed " << seed << "] " << s << "\n";
    });
    eval::write_metrics_csv(dir / ("ablation_seed" + std::to_string(seed) + ".csv"), run.rows,
                            c.meta(seed, "ablation"));
    auto d = run.diagnostics.to_json();
    d["seed"] = seed;
    diag.push_back(d);
    const auto& h = run.diagnostics.histogram;
    if (hist.size() < h.size()) hist.resize(h.size());
    for (std::size_t b = 0; b < h.size(); ++b) {
      hist[b].bin_upper = h[b].bin_upper;
      hist[b].fp_count += h[b].fp_count;
      hist[b].tp_count += h[b].tp_count;
    }
    runs.push_back(run.rows);
  }
  const auto mean = pipeline::average_rows(runs);
  eval::write_metrics_csv(dir / "ablation.csv", mean, base.meta(a.seed, "ablation_mean"));
  selector::write_histogram_csv(dir / "fp_histogram.csv", hist, base.meta(a.seed, "fp_histogram"));
  {
    std::ofstream out(dir / "selection.json", std::ios::binary);
    out << json{{"config_hash", base.hash()}, {"seed", a.seed}, {"runs", diag}}.dump(2) << "\n";
  }
  std::cout << eval::format_table(mean);
  return 0;
}

int report(const Args& a) {
  if (a.inputs.empty()) throw IoError("", "no metrics files given");
  std::vector<std::string> order;
  std::map<std::string, std::vector<eval::MetricsRow>> by_name;
  for (const auto& path : a.inputs) {
    require_file(path, "metrics");
    for (auto& r : eval::read_metrics_csv(path)) {
      if (!by_name.count(r.name)) order.push_back(r.name);
      by_name[r.name].push_back(std::move(r));
    }
  }
  std::vector<eval::MetricsRow> rows;
  for (const auto& name : order) {
    std::vector<std::vector<eval::MetricsRow>> runs;
    for (const auto& r : by_name[name]) runs.push_back({r});
    rows.push_back(pipeline::average_rows(runs).front());
  }
  if (!a.out.empty()) eval::write_metrics_csv(out_dir(a) / "report.csv", rows, std::nullopt);
  std::cout << eval::format_table(rows);
  return 0;
}

json error_json(const std::exception& e) {
  json err{{"kind", "internal"}, {"message", e.what()}};
  if (const auto* fe = dynamic_cast<const Error*>(&e)) err["kind"] = fe->kind();
  if (const auto* f = dynamic_cast<const FormatError*>(&e)) {
    err["path"] = f->path();
    err["offset"] = f->offset();
  }
  if (const auto* io = dynamic_cast<const IoError*>(&e)) err["path"] = io->path();
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) err["field"] = ce->field();
  return json{{"error", err}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised temporal action localization pipeline"};
  app.require_subcommand(1);
  Args args;

  const auto add = [&](const std::string& name, const std::string& help, std::function<int(const Args&)> fn,
                       std::initializer_list<const char*> flags) {
    auto* sub = app.add_subcommand(name, help);
    bool need_config = name != "report";
    sub->add_option("--config", args.config, "JSON config")->required(need_config);
    sub->add_option("--seed", args.seed, "random seed")->required(need_config);
    sub->add_option("--out", args.out, "output directory");
    for (std::string f : flags) {
      if (f == "features") sub->add_option("--features", args.features, "feature manifest");
      if (f == "proposals") sub->add_option("--proposals", args.proposals, "proposal JSON Lines");
      if (f == "gt") sub->add_option("--gt", args.gt, "ground-truth JSON Lines");
      if (f == "checkpoint") sub->add_option("--checkpoint", args.checkpoint, "model checkpoint");
      if (f == "name") sub->add_option("--name", args.name, "row name in metrics.csv");
      if (f == "seeds") sub->add_option("--seeds", args.seeds, "number of consecutive seeds");
      if (f == "inputs") sub->add_option("inputs", args.inputs, "metrics CSV files")->required();
    }
    return std::make_pair(sub, fn);
  };

  const std::vector<std::pair<CLI::App*, std::function<int(const Args&)>>> commands{
      add("synth-gen", "write the synthetic dataset", synth_gen, {}),
      add("train-generator", "train the proposal generator", train_generator, {"features"}),
      add("gen-proposals", "decode pseudo-label proposals", gen_proposals, {"features", "checkpoint"}),
      add("select", "filter proposals into pseudo labels", select_cmd, {"proposals"}),
      add("train-student", "train the student on pseudo labels", train_student, {"features", "proposals"}),
      add("distill", "EMA-teacher distillation round", distill, {"features", "checkpoint"}),
      add("infer", "predict segments with a checkpoint", infer, {"features", "checkpoint"}),
      add("eval", "mAP over tIoU thresholds", eval_cmd, {"proposals", "gt", "name"}),
      add("ablate", "ablation ladder on synthetic data", ablate, {"seeds"}),
      add("report", "average metrics CSVs by row name", report, {"inputs"}),
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }

  try {
    for (const auto& [sub, fn] : commands)
      if (sub->parsed()) return fn(args);
  } catch (const std::exception& e) {
    std::cerr << error_json(e).dump() << "\n";
    return 1;
  }
  return 1;
}
