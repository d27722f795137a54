#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "difaug/calibration.hpp"
#include "difaug/diffusion_augment.hpp"
#include "difaug/error.hpp"
#include "difaug/experiment_config.hpp"
#include "difaug/image.hpp"
#include "difaug/image_io.hpp"
#include "difaug/resample.hpp"
#include "difaug/synthetic.hpp"
#include "difaug/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace difaug;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kNumeric = 3, kIo = 4 };

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_experiment_config(path);
}

bool non_empty_dir(const fs::path& dir) {
  return fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::string out;
  bool force = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  const ExperimentConfig cfg = config_or_default(a.config);
  const fs::path out = a.out;
  if (non_empty_dir(out)) {
    if (!a.force) {
      std::cerr << "error: output directory " << out << " is not empty (use --force)\n";
      return kUsage;
    }
    for (const char* name : {"manifest.json", "train", "val"}) fs::remove_all(out / name);
  }
  const Dataset ds = gen_synthetic_dataset(cfg.manifest());
  write_dataset(ds, out);
  std::cout << "wrote " << ds.train.size() << " training and " << ds.val.size()
            << " validation pairs to " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string augment;
  std::string data;
  std::string resume;
  bool quiet = false;
};

void print_row(const HistoryRow& r) {
  std::cout << "iter " << r.iter << " [" << to_string(r.phase) << "]"
            << " pixel " << fixed(r.pixel_loss, 5) << " adv " << fixed(r.adv_loss, 4)
            << " d " << fixed(r.d_loss, 4) << " psnr " << fixed(r.val_psnr, 3) << " ssim "
            << fixed(r.val_ssim, 4) << " ece " << fixed(r.ece, 4) << " acc "
            << fixed(r.disc_acc, 3) << std::endl;
}

Dataset load_or_generate(const std::string& data_dir, const DatasetManifest& manifest) {
  if (data_dir.empty()) return gen_synthetic_dataset(manifest);
  Dataset ds = read_dataset(data_dir);
  if (!(ds.manifest == manifest)) {
    throw ConfigError("dataset in " + data_dir + " does not match the configured dataset");
  }
  return ds;
}

int cmd_train(const TrainArgs& a) {
  const ProbeCallback cb = a.quiet ? ProbeCallback{} : ProbeCallback(print_row);
  RunResult res;
  if (!a.resume.empty()) {
    if (!a.config.empty() || !a.augment.empty()) {
      std::cerr << "error: --resume takes its configuration from the checkpoint\n";
      return kUsage;
    }
    Checkpoint ck = load_checkpoint(a.resume);
    const fs::path out = a.out.empty() ? fs::path(a.resume).parent_path() : fs::path(a.out);
    const Dataset ds = load_or_generate(a.data, ck.manifest);
    res = resume_experiment(std::move(ck), ds, out, cb);
  } else {
    ExperimentConfig cfg = config_or_default(a.config);
    if (a.augment == "on") {
      cfg.augment.enabled = true;
    } else if (a.augment == "off") {
      cfg.augment.enabled = false;
      cfg.train.calib_eval_step.reset();
    }
    cfg.validate();
    const fs::path out = a.out.empty() ? fs::path(cfg.output_dir) : fs::path(a.out);
    const Dataset ds = load_or_generate(a.data, cfg.manifest());
    res = run_experiment(cfg.pretrain_config(), cfg.adversarial_config(), ds, out,
                         cfg.run_options(), cb);
  }
  std::cout << "done: " << res.final.iteration << " iterations, final checkpoint "
            << res.final_checkpoint.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string records;
  std::string checkpoint;
  std::string dataset;
  std::size_t bins = kDefaultCalibrationBins;
  std::size_t crops = 0;
  std::string out;
};

int cmd_eval_calib(const EvalArgs& a) {
  std::vector<PredictionRecord> records;
  if (!a.records.empty()) {
    if (!a.checkpoint.empty() || !a.dataset.empty()) {
      std::cerr << "error: give either --records or --checkpoint with --dataset\n";
      return kUsage;
    }
    records = read_records_csv(a.records);
  } else {
    if (a.checkpoint.empty() || a.dataset.empty()) {
      std::cerr << "error: give either --records or --checkpoint with --dataset\n";
      return kUsage;
    }
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Dataset ds = read_dataset(a.dataset);
    ProbeOptions opts;
    opts.crops = a.crops ? a.crops : ck.adversarial.calib_probe_crops;
    opts.crop_size = ds.manifest.patch_size;
    opts.bins = a.bins;
    opts.seed = stream_seed(ck.adversarial.seed, Stream::kProbe);
    opts.sign_convention = ck.adversarial.sign_convention;
    opts.eval_step = ck.options.calib_eval_step;
    opts.augment = ck.adversarial.augment;
    records = run_probe(ck.models, make_validation_set(ds), opts).records;
  }
  const CalibrationReport report = compute_ece(records, a.bins);
  std::cout << "ece " << fixed(report.ece, 4) << "\n"
            << "accuracy " << fixed(report.overall_accuracy, 4) << "\n"
            << "samples " << report.total_samples << "\n"
            << "bins " << report.num_bins << "\n";
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    reliability_export(report, fs::path(a.out) / "reliability", "calibration");
    write_records_csv(fs::path(a.out) / "records.csv", records);
    const json summary = {{"ece", report.ece},
                          {"accuracy", report.overall_accuracy},
                          {"samples", report.total_samples},
                          {"bins", report.num_bins}};
    write_text(fs::path(a.out) / "summary.json", summary.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct DemoArgs {
  std::string image;
  std::string lr_image;
  std::string config;
  std::string modes = "both";
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_augment_demo(const DemoArgs& a) {
  const ExperimentConfig cfg = config_or_default(a.config);
  std::vector<AugmentMode> modes;
  if (a.modes == "both" || a.modes == "gaussian") modes.push_back(AugmentMode::kGaussianOnly);
  if (a.modes == "both" || a.modes == "lr_mean") modes.push_back(AugmentMode::kLrMean);
  const bool need_lr =
      std::find(modes.begin(), modes.end(), AugmentMode::kLrMean) != modes.end();
  if (need_lr && a.lr_image.empty()) {
    std::cerr << "error: LR-mean mode needs --lr-image\n";
    return kUsage;
  }

  const Image hr = load_image(a.image);
  Tensor<double> lr;
  if (need_lr) {
    const Image lr_img = load_image(a.lr_image);
    if (lr_img.height * kScaleFactor != hr.height || lr_img.width * kScaleFactor != hr.width) {
      std::cerr << "error: --lr-image must be exactly 1/4 of --image in each dimension\n";
      return kUsage;
    }
    lr = to_tensor<double>(lr_img);
  }
  const Tensor<double> x = to_tensor<double>(hr);

  AugmentConfig aug;
  aug.schedule = cfg.schedule;
  aug.eta = cfg.augment.eta;
  const int T = cfg.schedule.total_steps;
  const std::vector<int> steps = {0, T / 4, T / 2, 3 * T / 4, T};

  Image grid(modes.size() * hr.height, steps.size() * hr.width);
  for (std::size_t r = 0; r < modes.size(); ++r) {
    aug.mode = modes[r];
    for (std::size_t c = 0; c < steps.size(); ++c) {
      const Tensor<double> noise =
          standard_normal<double>(x.shape(), derive_seed(a.seed, r * steps.size() + c));
      const AugmentedSample<double> s =
          modes[r] == AugmentMode::kGaussianOnly
              ? diffuse_standard_with_noise(x, steps[c], aug, noise)
              : diffuse_lr_mean_with_noise(x, lr, steps[c], aug, noise);
      const Image tile = image_from_tensor(s.corrupted);
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < hr.height; ++y)
          for (std::size_t xx = 0; xx < hr.width; ++xx)
            grid.at(ch, r * hr.height + y, c * hr.width + xx) = tile.at(ch, y, xx);
    }
  }
  grid.clamp();
  save_image(grid, a.out);
  std::cout << "wrote " << modes.size() << "x" << steps.size() << " grid (" << grid.width << "x"
            << grid.height << ") to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::string run_a;
  std::string run_b;
  std::string out;
};

std::string run_label(const fs::path& run) {
  const fs::path meta = run / "run.json";
  if (!fs::exists(meta)) return run.filename().string();
  const json j = read_json(meta);
  const json& aug = j.at("adversarial").at("augment");
  return aug.is_null() ? "none" : aug.at("mode").get<std::string>();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_compare(const CompareArgs& a) {
  const std::vector<HistoryRow> ha = read_history_csv(fs::path(a.run_a) / "history.csv");
  const std::vector<HistoryRow> hb = read_history_csv(fs::path(a.run_b) / "history.csv");
  auto iters = [](const std::vector<HistoryRow>& h) {
    std::vector<std::size_t> v;
    for (const HistoryRow& r : h) v.push_back(r.iter);
    return v;
  };
  if (iters(ha) != iters(hb)) {
    std::cerr << "error: the two runs were probed at different iterations ("
              << ha.size() << " vs " << hb.size()
              << " probes); use the same calib_probe_interval and iteration counts\n";
    return kUsage;
  }
  if (ha.empty()) {
    std::cerr << "error: history files contain no probes\n";
    return kUsage;
  }
  std::string la = run_label(a.run_a), lb = run_label(a.run_b);
  if (la == lb) {
    la += " (A)";
    lb += " (B)";
  }

  const fs::path out = a.out;
  fs::create_directories(out);
  std::string csv =
      "iter,phase,psnr_a,psnr_b,psnr_delta,ssim_a,ssim_b,ssim_delta,ece_a,ece_b,ece_delta,"
      "disc_acc_a,disc_acc_b\n";
  char buf[512];
  for (std::size_t i = 0; i < ha.size(); ++i) {
    const HistoryRow& x = ha[i];
    const HistoryRow& y = hb[i];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  x.iter, std::string(to_string(x.phase)).c_str(), x.val_psnr, y.val_psnr,
                  y.val_psnr - x.val_psnr, x.val_ssim, y.val_ssim, y.val_ssim - x.val_ssim, x.ece,
                  y.ece, y.ece - x.ece, x.disc_acc, y.disc_acc);
    csv += buf;
  }
  write_text(out / "compare.csv", csv);

  // Medians over the adversarial-phase probes (all probes if there are none).
  auto column = [](const std::vector<HistoryRow>& h, double HistoryRow::*field) {
    std::vector<double> adv, all;
    for (const HistoryRow& r : h) {
      all.push_back(r.*field);
      if (r.phase == Phase::kAdversarial) adv.push_back(r.*field);
    }
    return adv.empty() ? all : adv;
  };
  struct Metric {
    const char* name;
    double HistoryRow::*field;
    int digits;
  };
  const Metric metrics[] = {{"PSNR (dB)", &HistoryRow::val_psnr, 3},
                            {"SSIM", &HistoryRow::val_ssim, 4},
                            {"ECE", &HistoryRow::ece, 4},
                            {"Discriminator accuracy", &HistoryRow::disc_acc, 4}};
  std::string md = "# Run comparison\n\n";
  md += "- A: `" + a.run_a + "` (augment: " + la + ")\n";
  md += "- B: `" + a.run_b + "` (augment: " + lb + ")\n";
  md += "- Probes joined on iteration: " + std::to_string(ha.size()) + ", final iteration " +
        std::to_string(ha.back().iter) + "\n\n";
  md += "| Metric | Run | Final | Median (adversarial) |\n|---|---|---|---|\n";
  std::string deltas = "| Metric | Final delta (B - A) | Median delta (B - A) |\n|---|---|---|\n";
  for (const Metric& m : metrics) {
    const double fa = ha.back().*m.field, fb = hb.back().*m.field;
    const double ma = median(column(ha, m.field)), mb = median(column(hb, m.field));
    md += "| " + std::string(m.name) + " | " + la + " | " + fixed(fa, m.digits) + " | " +
          fixed(ma, m.digits) + " |\n";
    md += "| " + std::string(m.name) + " | " + lb + " | " + fixed(fb, m.digits) + " | " +
          fixed(mb, m.digits) + " |\n";
    deltas += "| " + std::string(m.name) + " | " + fixed(fb - fa, m.digits) + " | " +
              fixed(mb - ma, m.digits) + " |\n";
  }
  md += "\n" + deltas;
  write_text(out / "report.md", md);
  std::cout << md;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"difaug: diffusion-augmented discriminator experiments for x4 super-resolution"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic HR/LR dataset to PNG files");
  gen->add_option("--config", gd.config, "Experiment config JSON (defaults when omitted)");
  gen->add_option("--out", gd.out, "Output dataset directory")->required();
  gen->add_flag("--force", gd.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Run pretraining then adversarial training");
  train->add_option("--config", tr.config, "Experiment config JSON (defaults when omitted)");
  train->add_option("--out", tr.out, "Run directory (default: output.dir from the config)");
  train->add_option("--augment", tr.augment, "Override augment.enabled")
      ->check(CLI::IsMember({"on", "off"}));
  train->add_option("--data", tr.data,
                    "Dataset directory from gen-data (default: render in memory)");
  train->add_option("--resume", tr.resume, "Checkpoint directory to continue from");
  train->add_flag("--quiet", tr.quiet, "Do not print per-probe summary lines");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval-calib", "Report discriminator calibration (ECE)");
  eval->add_option("--records", ev.records, "CSV of logit,label records");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory to probe");
  eval->add_option("--dataset", ev.dataset, "Dataset directory for --checkpoint");
  eval->add_option("--bins", ev.bins, "Number of confidence bins")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval->add_option("--crops", ev.crops,
                   "HR+SR crops for --checkpoint (default: the run's calib_probe_crops)");
  eval->add_option("--out", ev.out, "Directory for reliability CSV/SVG and records");

  DemoArgs dm;
  auto* demo = app.add_subcommand("augment-demo",
                                  "Render a corruption ladder at steps 0, T/4, T/2, 3T/4, T");
  demo->add_option("--image", dm.image, "HR image (PNG or PPM)")->required();
  demo->add_option("--lr-image", dm.lr_image, "x4 downscaled image, needed for LR-mean rows");
  demo->add_option("--config", dm.config, "Experiment config JSON for schedule and eta");
  demo->add_option("--modes", dm.modes, "Rows to render")
      ->check(CLI::IsMember({"both", "gaussian", "lr_mean"}))
      ->capture_default_str();
  demo->add_option("--seed", dm.seed, "Noise seed")->capture_default_str();
  demo->add_option("--out", dm.out, "Output image (.png or .ppm)")->required();

  CompareArgs cp;
  auto* cmp = app.add_subcommand("compare", "Join two runs' histories into an ablation report");
  cmp->add_option("--run-a", cp.run_a, "First run directory")->required();
  cmp->add_option("--run-b", cp.run_b, "Second run directory")->required();
  cmp->add_option("--out", cp.out, "Report directory (report.md, compare.csv)")->required();

  auto* ref = app.add_subcommand("reference-config", "Print the config with every default");
  bool smoke = false;
  ref->add_flag("--smoke", smoke, "Print the small smoke-test preset instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gd);
    if (*train) return cmd_train(tr);
    if (*eval) return cmd_eval_calib(ev);
    if (*demo) return cmd_augment_demo(dm);
    if (*cmp) return cmd_compare(cp);
    if (*ref) {
      std::cout << to_json(smoke ? smoke_experiment_config() : ExperimentConfig{}).dump(2)
                << "\n";
      return kOk;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
