// dpdnet: cost analysis, gradient checks and training for the bottleneck
// block family (resnet / psd / mbv2 / dpd).
//
// Exit codes: 0 success, 1 runtime failure (bad data, divergence, a failed
// check), 2 usage or network-spec error.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dpd/analysis.hpp"
#include "dpd/checkpoint.hpp"
#include "dpd/dataset.hpp"
#include "dpd/errors.hpp"
#include "dpd/gradcheck.hpp"
#include "dpd/network.hpp"
#include "dpd/parallel.hpp"
#include "dpd/reference_tables.hpp"
#include "dpd/spec_io.hpp"
#include "dpd/trainer.hpp"

namespace {

using namespace dpd;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NetOptions {
  std::string builtin;
  std::string spec_file;
  double alpha = 1.0;
  std::size_t m = 0;
  std::size_t classes = 10;
  CLI::Option* alpha_opt = nullptr;
  CLI::Option* m_opt = nullptr;
  CLI::Option* classes_opt = nullptr;

  void add(CLI::App* cmd) {
    auto* b = cmd->add_option("--builtin", builtin, "Builtin network")->check(CLI::IsMember(builtin_names()));
    auto* s = cmd->add_option("--spec", spec_file, "Network spec file");
    b->excludes(s);
    alpha_opt = cmd->add_option("--alpha", alpha, "Width multiplier")->check(CLI::Range(0.0, 8.0));
    m_opt = cmd->add_option("--m", m, "Channel multiplier (default 6 for dpdnet_imagenet, else 1)");
    classes_opt = cmd->add_option("--classes", classes, "Number of classes");
  }

  NetworkSpec resolve() const {
    if (!builtin.empty()) {
      const std::size_t mult = m ? m : (builtin == "dpdnet_imagenet" ? 6 : 1);
      return builtin_spec(builtin, alpha, mult, classes);
    }
    if (spec_file.empty()) throw UsageError("one of --builtin or --spec is required");
    NetworkSpec spec = load_spec_file(spec_file);
    if (alpha_opt->count()) spec.alpha = alpha;
    if (m_opt->count()) spec.multiplier = m;
    if (classes_opt->count()) spec.num_classes = classes;
    spec.validate();
    return spec;
  }
};

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

// name[:alpha[:m]]
NetworkSpec parse_net_ref(const std::string& ref, std::size_t classes) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t colon = ref.find(':', start);
    parts.push_back(ref.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  if (parts.size() > 3 || parts[0].empty()) throw UsageError("bad network reference '" + ref + "'");
  double alpha = 1.0;
  std::size_t m = parts[0] == "dpdnet_imagenet" ? 6 : 1;
  try {
    if (parts.size() > 1) alpha = std::stod(parts[1]);
    if (parts.size() > 2) m = std::stoul(parts[2]);
  } catch (const std::logic_error&) {
    throw UsageError("bad network reference '" + ref + "'");
  }
  return builtin_spec(parts[0], alpha, m, classes);
}

std::vector<std::size_t> scaled_decay_epochs(std::size_t epochs) {
  std::vector<std::size_t> out;
  for (std::size_t e : {epochs / 2, epochs * 3 / 4}) {
    if (e > 0 && e < epochs && (out.empty() || e > out.back())) out.push_back(e);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dpdnet: bottleneck-block CNN toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: DPD_NUM_THREADS or 1)")->check(CLI::PositiveNumber);

  // count
  NetOptions count_net;
  CountingPolicy count_policy;
  std::size_t count_input = 0;
  bool count_csv = false;
  std::string count_out;
  auto* count = app.add_subcommand("count", "Per-layer parameter and MAC report");
  count_net.add(count);
  count->add_option("--input", count_input, "Input resolution (default: the network's)");
  count->add_flag("--csv", count_csv, "CSV output");
  count->add_option("--out", count_out, "Also write the CSV report to this file");
  count->add_flag("--include-conv-bias", count_policy.conv_bias, "Count a bias per conv output channel");
  count->add_flag("--include-bn-stats", count_policy.bn_running_stats, "Count BN running mean/variance");
  count->add_flag("--count-flops", count_policy.count_flops, "Count multiply and add separately");

  // compare
  std::vector<std::string> compare_refs;
  std::size_t compare_classes = 10;
  bool compare_csv = false;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Side-by-side totals with pairwise ratios");
  compare->add_option("networks", compare_refs, "name[:alpha[:m]] ...")->required();
  compare->add_option("--classes", compare_classes, "Number of classes");
  compare->add_flag("--csv", compare_csv, "CSV output");
  compare->add_option("--out", compare_out, "Also write the CSV comparison to this file");

  // verify-tables
  CountingPolicy verify_policy;
  std::string verify_group;
  auto* verify = app.add_subcommand("verify-tables", "Check computed totals against the reference cost cells");
  verify->add_option("--group", verify_group, "Only this group")
      ->check(CLI::IsMember({"bottleneck", "multiplier_sweep", "width_sweep"}));
  verify->add_flag("--include-conv-bias", verify_policy.conv_bias, "Count conv biases");
  verify->add_flag("--count-flops", verify_policy.count_flops, "Count multiply and add separately (negative control)");

  // gradcheck
  std::uint64_t gc_seed = 7;
  double gc_tol = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and block");
  gradcheck->add_option("--seed", gc_seed, "Seed");
  gradcheck->add_option("--tolerance", gc_tol, "Maximum relative error");

  // emit-spec
  NetOptions emit_net;
  std::string emit_out;
  auto* emit = app.add_subcommand("emit-spec", "Print a network spec document");
  emit_net.add(emit);
  emit->add_option("--out", emit_out, "Write to file instead of stdout");

  // train
  NetOptions train_net;
  bool synth = false;
  std::size_t synth_per_class = 50;
  double synth_noise = 0.1;
  std::string data_dir;
  std::string dataset_name = "cifar10";
  TrainConfig cfg;
  std::size_t epochs = cfg.epochs;
  bool augment = false;
  bool no_augment = false;
  std::string log_path;
  std::string ckpt_path;
  auto* trainc = app.add_subcommand("train", "SGD training on CIFAR or synthetic data");
  train_net.add(trainc);
  auto* synth_opt = trainc->add_flag("--synth", synth, "Synthetic class-pattern data");
  trainc->add_option("--synth-per-class", synth_per_class, "Synthetic training images per class");
  trainc->add_option("--synth-noise", synth_noise, "Synthetic pixel noise sigma");
  auto* data_opt = trainc->add_option("--data", data_dir, "Directory with the CIFAR binary files");
  synth_opt->excludes(data_opt);
  trainc->add_option("--dataset", dataset_name, "cifar10 | cifar100")->check(CLI::IsMember({"cifar10", "cifar100"}));
  trainc->add_option("--steps", cfg.max_steps, "Stop after this many optimizer steps");
  trainc->add_option("--epochs", epochs, "Epochs (lr decays at 1/2 and 3/4)")->check(CLI::PositiveNumber);
  trainc->add_option("--lr", cfg.base_lr, "Base learning rate");
  trainc->add_option("--batch", cfg.batch_size, "Batch size")->check(CLI::PositiveNumber);
  trainc->add_option("--momentum", cfg.momentum, "Momentum");
  trainc->add_option("--weight-decay", cfg.weight_decay, "L2 weight decay");
  trainc->add_option("--seed", cfg.seed, "Seed for init, shuffling and augmentation");
  auto* aug_on = trainc->add_flag("--augment", augment, "Random crop + flip (default for CIFAR)");
  auto* aug_off = trainc->add_flag("--no-augment", no_augment, "Disable augmentation");
  aug_on->excludes(aug_off);
  trainc->add_option("--log", log_path, "CSV training log");
  trainc->add_option("--checkpoint", ckpt_path, "Write final weights here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (threads > 0) set_num_threads(threads);

    if (count->parsed()) {
      const NetworkSpec spec = count_net.resolve();
      const std::size_t in = count_input ? count_input : spec.input_size;
      const CostReport rep = count_network(spec, in, in, count_policy);
      std::cout << (count_csv ? rep.to_csv() : rep.to_text());
      if (!count_out.empty()) write_output(count_out, rep.to_csv());
      return 0;
    }

    if (compare->parsed()) {
      std::vector<CostReport> reports;
      for (const std::string& ref : compare_refs) reports.push_back(count_network(parse_net_ref(ref, compare_classes)));
      const Comparison cmp = compare_networks(reports);
      std::cout << (compare_csv ? cmp.csv : cmp.text);
      if (!compare_out.empty()) write_output(compare_out, cmp.csv);
      return 0;
    }

    if (verify->parsed()) {
      std::size_t failed = 0;
      std::size_t checked = 0;
      for (const CellCheck& c : verify_reference_tables(verify_policy)) {
        if (!verify_group.empty() && c.cell.table != verify_group) continue;
        ++checked;
        if (!c.pass) ++failed;
        std::printf("%-4s %-52s expected %9.3f +- %.3f  computed %9.3f\n", c.pass ? "ok" : "FAIL",
                    c.cell.label().c_str(), c.cell.value, c.cell.tolerance(), c.computed);
      }
      std::printf("%zu/%zu cells within tolerance (%s)\n", checked - failed, checked, verify_policy.describe().c_str());
      return failed == 0 ? 0 : 1;
    }

    if (gradcheck->parsed()) {
      bool ok = true;
      for (const GradcheckResult& r : run_gradcheck_suite(gc_seed, gc_tol)) {
        ok = ok && r.pass;
        std::printf("%-4s %-26s max_rel_err %.3e  entries %zu  kink-skipped %zu", r.pass ? "ok" : "FAIL",
                    r.name.c_str(), r.max_rel_error, r.entries, r.skipped);
        if (!r.pass) {
          std::printf("  at-rounding-limit %zu  max |a-n|/bound %.2f", r.noise_limited, r.max_noise_ratio);
        }
        std::printf("\n");
      }
      return ok ? 0 : 1;
    }

    if (emit->parsed()) {
      write_output(emit_out, emit_spec(emit_net.resolve()));
      return 0;
    }

    if (trainc->parsed()) {
      if (!synth && data_dir.empty()) throw UsageError("train needs --data DIR or --synth");
      const NetworkSpec spec = train_net.resolve();
      cfg.epochs = epochs;
      cfg.decay_epochs = scaled_decay_epochs(epochs);

      DatasetSplits data;
      if (synth) {
        data = synth_splits(cfg.seed, spec.num_classes, synth_per_class, spec.input_size, synth_noise);
        cfg.augment = augment;
      } else {
        const CifarVariant v = dataset_name == "cifar100" ? CifarVariant::cifar100 : CifarVariant::cifar10;
        data = load_cifar(data_dir, v);
        cfg.augment = !no_augment;
      }
      if (data.train.class_count != spec.num_classes) {
        throw UsageError("network has " + std::to_string(spec.num_classes) + " classes, data has " +
                         std::to_string(data.train.class_count) + " (use --classes)");
      }

      Rng init_rng = Rng(cfg.seed).fork(0);
      Network net(spec, init_rng);
      std::printf("training %s on %zu images, %zu params\n", network_tag(spec).c_str(), data.train.size(),
                  static_cast<std::size_t>(count_network(spec).totals.params));
      std::printf("%6s %8s %10s %10s %9s %9s\n", "epoch", "step", "lr", "loss", "train", "test");
      const TrainingLog log = train(net, data.train, &data.test, cfg, [](const LogRow& r) {
        std::printf("%6zu %8zu %10.4g %10.5f %9.4f %9.4f\n", r.epoch, r.step, r.lr, r.loss, r.train_acc, r.test_acc);
        std::fflush(stdout);
      });
      if (!log_path.empty()) write_output(log_path, log.to_csv());
      if (!ckpt_path.empty()) save_checkpoint(ckpt_path, net);
      return 0;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const SpecError& e) {
    std::fprintf(stderr, "spec error: %s\n", e.what());
    return 2;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
