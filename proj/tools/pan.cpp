#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "pan/checkpoint.hpp"
#include "pan/dataset_io.hpp"
#include "pan/error.hpp"
#include "pan/gradcheck.hpp"
#include "pan/log.hpp"
#include "pan/model.hpp"
#include "pan/synth.hpp"
#include "pan/train.hpp"

namespace {

using namespace pan;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string crc_of_file(const std::string& path) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", wire::crc32_of(wire::read_file(path)));
  return buf;
}

struct SynthArgs {
  std::size_t subjects = 5;
  std::size_t reps = 20;
  std::uint64_t seed = 0;
  double noise = 0.1;
  double gain = 1.0;
  std::string temp_mode = "verbatim";
  std::string out;
};

struct TrainArgs {
  std::string data;
  std::string task = "5way";
  std::uint64_t seed = 0;
  std::size_t epochs = 100;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  std::size_t batch_size = 128;
  std::size_t heads = 5;
  std::size_t blocks = 1;
  bool class_weights = false;
  std::size_t jobs = 1;
  std::string out;
  std::string model_path;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
};

ModelConfig model_from_args(const TrainArgs& a, std::size_t num_classes) {
  ModelConfig cfg = ModelConfig::reference(num_classes);
  cfg.encoder.heads = a.heads;
  cfg.encoder.blocks = a.blocks;
  cfg.validate();
  return cfg;
}

TrainConfig train_from_args(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.weight_decay = a.weight_decay;
  cfg.batch_size = a.batch_size;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.class_weighting = a.class_weights;
  cfg.validate();
  return cfg;
}

std::string shared_manifest_lines(const char* command, const TrainArgs& a,
                                  const ModelConfig& mcfg) {
  std::string out;
  out += std::string("command=") + command + "\n";
  out += "data=" + a.data + "\n";
  out += "data_crc32=" + crc_of_file(a.data) + "\n";
  out += "task=" + a.task + "\n";
  out += "seed=" + std::to_string(a.seed) + "\n";
  out += "epochs=" + std::to_string(a.epochs) + "\n";
  out += "lr=" + fmt("%.9g", a.lr) + "\n";
  out += "weight_decay=" + fmt("%.9g", a.weight_decay) + "\n";
  out += "batch_size=" + std::to_string(a.batch_size) + "\n";
  out += "heads=" + std::to_string(a.heads) + "\n";
  out += "blocks=" + std::to_string(a.blocks) + "\n";
  out += std::string("class_weights=") + (a.class_weights ? "1" : "0") + "\n";
  out += "model=" + mcfg.canonical_string() + "\n";
  return out;
}

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.subjects = a.subjects;
  cfg.seed = a.seed;
  cfg.noise = a.noise;
  cfg.gain = a.gain;
  cfg.temp_mode = parse_temp_mode(a.temp_mode);
  cfg.protocol.reps = a.reps;
  const Dataset ds = generate_dataset(cfg);
  write_dataset(ds, a.out);
  std::printf("wrote %s: %zu subjects, %zu windows (%u samples at %u Hz)\n", a.out.c_str(),
              a.subjects, ds.records.size(), ds.samples_per_window, ds.rate);
  return 0;
}

int run_train(const TrainArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const TaskSpec task = TaskSpec::by_name(a.task);
  const TaskDataset td = build_task_dataset(ds, task);
  const ModelConfig mcfg = model_from_args(a, task.num_classes);
  const TrainConfig tcfg = train_from_args(a);
  logging::info("training " + a.task + " on " + std::to_string(td.size()) + " windows");

  const auto t0 = std::chrono::steady_clock::now();
  PainAttnNet model(mcfg, tcfg.seed);
  const std::vector<double> curve = train_epochs(model, td, tcfg);
  const ConfusionMatrix cm = evaluate(model, td);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                          .count();

  save_checkpoint(a.out, model);

  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) {
    csv += std::to_string(e) + "," + fmt("%.9g", curve[e]) + "\n";
  }
  wire::write_file(a.out + ".loss.csv", csv);

  std::string manifest = shared_manifest_lines("train", a, mcfg);
  if (!curve.empty()) manifest += "final_loss=" + fmt("%.9g", curve.back()) + "\n";
  manifest += "train_accuracy=" + fmt("%.6f", accuracy(cm)) + "\n";
  manifest += "wall_seconds=" + fmt("%.3f", wall) + "\n";
  wire::write_file(a.out + ".manifest", manifest);

  std::printf("trained %zu epochs in %.1fs, train accuracy %.6f\n", curve.size(), wall,
              accuracy(cm));
  std::printf("checkpoint: %s\nmanifest: %s.manifest\nloss curve: %s.loss.csv\n",
              a.out.c_str(), a.out.c_str(), a.out.c_str());
  return 0;
}

int run_eval(const TrainArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const TaskSpec task = TaskSpec::by_name(a.task);
  const TaskDataset td = build_task_dataset(ds, task);
  const ModelConfig mcfg = model_from_args(a, task.num_classes);
  PainAttnNet model(mcfg, 0);
  apply_checkpoint(model, load_checkpoint(a.model_path));
  const ConfusionMatrix cm = evaluate(model, td);
  std::printf("%s", confusion_to_text(cm).c_str());
  std::printf("%s", compute_metrics(cm).to_text().c_str());
  return 0;
}

int run_loocv(const TrainArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const TaskSpec task = TaskSpec::by_name(a.task);
  const TaskDataset td = build_task_dataset(ds, task);
  const ModelConfig mcfg = model_from_args(a, task.num_classes);
  const TrainConfig tcfg = train_from_args(a);
  logging::info("loocv " + a.task + ": " + std::to_string(td.subject_ids().size()) +
                " folds, " + std::to_string(a.jobs) + " job(s)");

  const LoocvResult res = loocv(td, mcfg, tcfg, a.jobs);

  std::string manifest = shared_manifest_lines("loocv", a, mcfg);
  manifest += "jobs=" + std::to_string(a.jobs) + "\n";
  for (const FoldResult& fold : res.folds) {
    manifest += "fold=" + std::to_string(fold.subject) + " accuracy=" +
                fmt("%.6f", accuracy(fold.matrix)) + " seconds=" + fmt("%.3f", fold.seconds) +
                "\n";
  }
  if (task.num_classes == 2) {
    manifest += "mean_threshold_baseline=" + fmt("%.6f", mean_threshold_accuracy(td)) + "\n";
  }
  manifest += confusion_to_text(res.pooled);
  manifest += res.report.to_text();
  manifest += "wall_seconds=" + fmt("%.3f", res.wall_seconds) + "\n";
  wire::write_file(a.out, manifest);

  std::string csv = "fold,subject,epoch,loss\n";
  for (std::size_t f = 0; f < res.folds.size(); ++f) {
    const FoldResult& fold = res.folds[f];
    for (std::size_t e = 0; e < fold.loss_curve.size(); ++e) {
      csv += std::to_string(f) + "," + std::to_string(fold.subject) + "," +
             std::to_string(e) + "," + fmt("%.9g", fold.loss_curve[e]) + "\n";
    }
  }
  wire::write_file(a.out + ".loss.csv", csv);

  std::printf("%s", confusion_to_text(res.pooled).c_str());
  std::printf("%s", res.report.to_text().c_str());
  std::printf("wall seconds: %.1f\nmanifest: %s\n", res.wall_seconds, a.out.c_str());
  return 0;
}

int run_gradcheck(const GradcheckArgs& a) {
  Rng rng(derive_seed(a.seed, 0x6767ULL));
  const auto input = [&rng](std::vector<std::size_t> shape) {
    Tensor x(std::move(shape));
    for (double& v : x.vec()) {
      v = rng.normal();
      if (v >= 0.0 && v < 5e-3) v += 5e-3;
      if (v < 0.0 && v > -5e-3) v -= 5e-3;
    }
    return x;
  };

  std::vector<GradCheckReport> reports;
  GradCheckOptions opt;
  opt.seed = a.seed;

  {
    Conv1dSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 3;
    spec.kernel = 4;
    spec.stride = 2;
    spec.left_pad = 2;
    spec.right_pad = 1;
    Conv1d layer(spec, rng);
    reports.push_back(grad_check("conv1d", layer, input({2, 2, 12}), opt));
  }
  {
    Conv1d layer(Conv1dSpec::causal_spec(2, 2, 3), rng);
    reports.push_back(grad_check("causal-conv1d", layer, input({2, 2, 9}), opt));
  }
  {
    MaxPool1d layer(3, 2);
    reports.push_back(grad_check("maxpool1d", layer, input({2, 2, 11}), opt));
  }
  {
    BatchNorm1d layer(3);
    layer.set_mode(Mode::kTrain);
    reports.push_back(grad_check("batchnorm1d", layer, input({2, 3, 6}), opt));
  }
  {
    LayerNorm layer(8);
    reports.push_back(grad_check("layernorm", layer, input({3, 8}), opt));
  }
  {
    Linear layer(6, 4, rng);
    reports.push_back(grad_check("linear", layer, input({3, 6}), opt));
  }
  {
    Gelu layer;
    reports.push_back(grad_check("gelu", layer, input({2, 10}), opt));
  }
  {
    Relu layer;
    reports.push_back(grad_check("relu", layer, input({2, 10}), opt));
  }
  {
    Sigmoid layer;
    reports.push_back(grad_check("sigmoid", layer, input({2, 10}), opt));
  }
  {
    Softmax layer;
    reports.push_back(grad_check("softmax", layer, input({3, 5}), opt));
  }
  {
    Dropout layer(0.3, 77);
    layer.set_mode(Mode::kTrain);
    reports.push_back(grad_check("dropout", layer, input({2, 12}), opt));
  }
  {
    SeResNetConfig cfg;
    cfg.in_channels = 8;
    cfg.mid_channels = 4;
    cfg.reduction = 2;
    cfg.downsample = true;
    SeBlock layer(cfg, rng);
    reports.push_back(grad_check("se-block", layer, input({2, 8, 5}), opt));
  }
  {
    EncoderConfig cfg;
    cfg.heads = 2;
    cfg.width = 6;
    cfg.tcn_kernel = 3;
    cfg.ffn_hidden = 5;
    cfg.dropout = 0.1;
    cfg.blocks = 1;
    EncoderBlock layer(cfg, 4, rng);
    layer.set_mode(Mode::kTrain);
    layer.set_seed(31);
    reports.push_back(grad_check("encoder-block", layer, input({2, 4, 6}), opt));
  }
  {
    LogitsAdapter layer(ModelConfig::miniature(2), derive_seed(a.seed, 0x6d6fULL));
    layer.set_mode(Mode::kTrain);
    layer.set_seed(derive_seed(a.seed, 0x6d61ULL));
    GradCheckOptions capped = opt;
    capped.max_scalars_per_tensor = 4;
    reports.push_back(grad_check_resampled(
        "full-model", layer, [&] { return input({1, 1, 2816}); }, capped));
  }

  bool all_pass = true;
  for (const GradCheckReport& r : reports) {
    std::string notes;
    if (r.scalars_skipped > 0) {
      notes = ", " + std::to_string(r.scalars_skipped) + " non-smooth skipped";
    }
    if (r.attempts > 1) {
      notes += ", " + std::to_string(r.attempts) + " probe points";
    }
    std::printf("%-14s max_rel_error %.3e over %zu scalars%s (tol %.0e): %s\n",
                r.layer_name.c_str(), r.max_rel_error, r.scalars_checked, notes.c_str(),
                r.tolerance, r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  std::printf("gradcheck: %s\n", all_pass ? "all checks passed" : "FAILURES above");
  return all_pass ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PainAttnNet toolkit: synthetic EDA generation, training, evaluation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  TrainArgs train_args;
  TrainArgs eval_args;
  TrainArgs loocv_args;
  GradcheckArgs grad_args;

  app.set_config("--config")->description(
      "key=value file with one [subcommand] section per command; flags override file values");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset file");
  synth->fallthrough();
  synth->add_option("--subjects", synth_args.subjects, "number of subjects")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--reps", synth_args.reps, "stimuli per level per subject")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--seed", synth_args.seed, "generator seed")->capture_default_str();
  synth->add_option("--noise", synth_args.noise, "measurement noise sigma")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--gain", synth_args.gain, "response amplitude at tolerance temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--temp-mode", synth_args.temp_mode, "stage spacing rule")
      ->check(CLI::IsMember({"verbatim", "endpoint"}))
      ->capture_default_str();
  synth->add_option("-o,--out", synth_args.out, "output dataset path")->required();

  const auto add_train_flags = [](CLI::App* cmd, TrainArgs& args) {
    cmd->fallthrough();
    cmd->add_option("--data", args.data, "dataset file (binary or CSV)")->required();
    cmd->add_option("--task", args.task, "classification task")
        ->check(CLI::IsMember({"5way", "pain-any", "t0t1", "t0t2", "t0t3", "t0t4"}))
        ->capture_default_str();
    cmd->add_option("--seed", args.seed, "run seed")->capture_default_str();
    cmd->add_option("--epochs", args.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--lr", args.lr, "learning rate")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--weight-decay", args.weight_decay, "L2 coupling on gradients")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--batch-size", args.batch_size, "minibatch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--heads", args.heads, "attention heads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--blocks", args.blocks, "encoder blocks")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_flag("--class-weights", args.class_weights,
                  "weight the loss by inverse class frequency");
  };

  CLI::App* train = app.add_subcommand("train", "train on a full dataset");
  add_train_flags(train, train_args);
  train->add_option("-o,--out", train_args.out, "checkpoint path")
      ->capture_default_str()
      ->default_val("pan_model.ckpt");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->fallthrough();
  eval->add_option("--data", eval_args.data, "dataset file (binary or CSV)")->required();
  eval->add_option("--task", eval_args.task, "classification task")
      ->check(CLI::IsMember({"5way", "pain-any", "t0t1", "t0t2", "t0t3", "t0t4"}))
      ->capture_default_str();
  eval->add_option("--model", eval_args.model_path, "checkpoint to evaluate")->required();
  eval->add_option("--heads", eval_args.heads, "attention heads the checkpoint was trained with")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval->add_option("--blocks", eval_args.blocks, "encoder blocks the checkpoint was trained with")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  CLI::App* loocv_cmd = app.add_subcommand("loocv", "leave-one-subject-out cross-validation");
  add_train_flags(loocv_cmd, loocv_args);
  loocv_cmd->add_option("--jobs", loocv_args.jobs, "parallel folds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  loocv_cmd->add_option("-o,--out", loocv_args.out, "manifest path")
      ->capture_default_str()
      ->default_val("pan_loocv.manifest");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->fallthrough();
  gradcheck->add_option("--seed", grad_args.seed, "probe seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (loocv_cmd->parsed()) return run_loocv(loocv_args);
    if (gradcheck->parsed()) return run_gradcheck(grad_args);
  } catch (const ConfigError& e) {
    pan::logging::error(e.what());
    return 1;
  } catch (const DomainError& e) {
    pan::logging::error(e.what());
    return 1;
  } catch (const IoError& e) {
    pan::logging::error(e.what());
    return 2;
  } catch (const FormatError& e) {
    pan::logging::error(e.what());
    return 2;
  } catch (const NumericError& e) {
    pan::logging::error(e.what());
    return 3;
  } catch (const std::exception& e) {
    pan::logging::error(std::string("internal: ") + e.what());
    return 70;
  }
  return 0;
}
