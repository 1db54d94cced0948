#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "parformer/checkpoint.hpp"
#include "parformer/gradcheck.hpp"
#include "parformer/integrators.hpp"
#include "parformer/network.hpp"
#include "parformer/rng.hpp"
#include "parformer/train.hpp"

namespace {

using namespace parformer;

struct NetOpts {
  std::string preset_name, task, variant, norm, scheme;
  int depth = 0, k = 0, dim = 0, heads = 0, mlp_ratio = 0;
  int image_size = 0, patch_size = 0, channels = 0, num_classes = 0;
  int vocab_size = 0, context = 0;
  double dropout = 0.0, stoch_depth = 0.0;
};

void add_network_flags(CLI::App* cmd, NetOpts& o) {
  cmd->add_option("--preset", o.preset_name, "start from a named shape (deit_ti|nlp_small)")
      ->check(CLI::IsMember({"deit_ti", "nlp_small"}));
  cmd->add_option("--task", o.task)->check(CLI::IsMember({"classify", "lm"}));
  cmd->add_option("--variant", o.variant, "block wiring")
      ->check(CLI::IsMember({"sequential", "parallel"}));
  cmd->add_option("--norm", o.norm, "normalization placement")
      ->check(CLI::IsMember({"A", "B", "C", "none"}));
  cmd->add_option("--scheme", o.scheme, "integration scheme")
      ->check(CLI::IsMember({"euler", "rk4"}));
  cmd->add_option("--depth", o.depth, "layer slots D");
  cmd->add_option("--independent-layers,-k", o.k, "distinct parameter sets k (divides D)");
  cmd->add_option("--dim", o.dim, "model width d");
  cmd->add_option("--heads", o.heads);
  cmd->add_option("--mlp-ratio", o.mlp_ratio);
  cmd->add_option("--image-size", o.image_size);
  cmd->add_option("--patch-size", o.patch_size);
  cmd->add_option("--channels", o.channels);
  cmd->add_option("--classes", o.num_classes);
  cmd->add_option("--vocab", o.vocab_size);
  cmd->add_option("--context", o.context);
  cmd->add_option("--dropout", o.dropout, "dropout rate during training");
  cmd->add_option("--stoch-depth", o.stoch_depth, "stochastic depth rate during training");
}

NetworkConfig resolve_network(const CLI::App* cmd, const NetOpts& o) {
  NetworkConfig cfg = o.preset_name.empty() ? NetworkConfig{} : preset(o.preset_name);
  if (cmd->count("--task")) cfg.task = task_from_string(o.task);
  if (cmd->count("--variant")) cfg.variant = block_variant_from_string(o.variant);
  if (cmd->count("--norm")) cfg.norm_variant = norm_variant_from_string(o.norm);
  if (cmd->count("--scheme")) cfg.scheme = scheme_from_string(o.scheme);
  if (cmd->count("--depth")) cfg.depth = o.depth;
  if (cmd->count("--independent-layers")) cfg.independent_layers = o.k;
  if (cmd->count("--dim")) cfg.dim = o.dim;
  if (cmd->count("--heads")) cfg.heads = o.heads;
  if (cmd->count("--mlp-ratio")) cfg.mlp_ratio = o.mlp_ratio;
  if (cmd->count("--image-size")) cfg.image_size = o.image_size;
  if (cmd->count("--patch-size")) cfg.patch_size = o.patch_size;
  if (cmd->count("--channels")) cfg.channels = o.channels;
  if (cmd->count("--classes")) cfg.num_classes = o.num_classes;
  if (cmd->count("--vocab")) cfg.vocab_size = o.vocab_size;
  if (cmd->count("--context")) cfg.context = o.context;
  if (cmd->count("--dropout")) cfg.dropout_p = o.dropout;
  if (cmd->count("--stoch-depth")) cfg.stoch_depth_p = o.stoch_depth;
  cfg.validate();
  return cfg;
}

int run_param_count(const CLI::App* cmd, const NetOpts& o) {
  NetworkConfig cfg = resolve_network(cmd, o);
  Network net = build_network(cfg, 0);
  const int64_t n = net.param_count();
  std::cout << "params=" << n << " (" << n / 1e6 << "M)  k=" << cfg.independent_layers
            << " depth=" << cfg.depth << " dim=" << cfg.dim << "\n";
  return 0;
}

int run_order_check(const std::string& field, const std::string& scheme_name, uint64_t seed) {
  const Scheme scheme = scheme_from_string(scheme_name);
  VectorField f;
  Tensor x0;
  if (field == "linear") {
    f = [](double, const Tensor& x) { return scale(x, -1.0); };
    x0 = Tensor::from_data({1, 4}, {1.0, -0.5, 2.0, 0.25});
  } else if (field == "transformer") {
    // Frozen random layer with O(0.5) weights: training-scale inits produce a
    // field so flat that every scheme is exact to machine precision and no
    // slope can be measured.
    std::mt19937_64 rng(mix_seed(seed, 0x6f726463, 0));
    BlockParams p = random_block_params(4, 2, 8, true, false, rng, 0.35);
    BlockConfig bc;
    bc.variant = BlockVariant::parallel;
    bc.norm_variant = NormVariant::A;
    f = vector_field_of_block(p, bc);
    std::vector<double> v(12);
    for (double& x : v) x = 0.8 * normal01(rng);
    x0 = Tensor::from_data({3, 4}, std::move(v));
  } else {
    throw std::invalid_argument("unknown field '" + field + "' (linear|transformer)");
  }
  const OrderResult r = measure_order(f, x0, scheme);
  std::cout << "field=" << field << " scheme=" << scheme_name << " exact=" << (r.exact ? 1 : 0)
            << " slope=" << r.slope << " errors=[";
  for (size_t i = 0; i < r.errors.size(); ++i)
    std::cout << (i ? ", " : "") << r.errors[i];
  std::cout << "]\n";
  if (r.exact) return 0;
  const double lo = scheme == Scheme::euler ? 0.8 : 3.5;
  const double hi = scheme == Scheme::euler ? 1.2 : 4.5;
  if (r.slope < lo || r.slope > hi) {
    std::cerr << "order outside [" << lo << ", " << hi << "]\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parallel-block transformers as ODE steps: desk-scale workbench"};
  app.set_config("--config", "", "read options from an INI/TOML file (flags win)");
  app.require_subcommand(1);
  int exit_code = 0;

  // train
  auto* tr = app.add_subcommand("train", "train a model, logging key=value metric lines");
  NetOpts tr_net;
  add_network_flags(tr, tr_net);
  TrainConfig tr_cfg;
  uint64_t tr_seed = 0;
  bool no_cosine = false;
  tr->add_option("--steps", tr_cfg.steps);
  tr->add_option("--batch-size", tr_cfg.batch_size);
  tr->add_option("--lr", tr_cfg.lr);
  tr->add_option("--warmup", tr_cfg.warmup_steps);
  tr->add_flag("--no-cosine", no_cosine, "hold the learning rate flat after warmup");
  tr->add_option("--weight-decay", tr_cfg.weight_decay);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--eval-interval", tr_cfg.eval_interval);
  tr->add_option("--dataset", tr_cfg.dataset_path,
                 "image file (classify) or UTF-8 text (lm); omit for built-in synthetic data");
  tr->add_option("--checkpoint", tr_cfg.checkpoint_path, "where the best-val model is saved");
  tr->add_option("--synthetic-train", tr_cfg.synthetic_train);
  tr->add_option("--synthetic-val", tr_cfg.synthetic_val);
  tr->callback([&] {
    NetworkConfig ncfg = resolve_network(tr, tr_net);
    tr_cfg.cosine = !no_cosine;
    tr_cfg.seed = tr_seed;
    const TrainResult res = train(ncfg, tr_cfg, &std::cout);
    std::cout << "final_train loss=" << res.final_train.loss << " "
              << metric_name(ncfg.task) << "=" << res.final_train.metric << "\n";
    if (res.diverged) {
      std::cerr << "training diverged\n";
      exit_code = 1;
    }
  });

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_dataset;
  uint64_t ev_seed = 0;
  int ev_count = 640;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--dataset", ev_dataset, "omit to evaluate on built-in synthetic data");
  ev->add_option("--seed", ev_seed, "seed for the built-in synthetic dataset");
  ev->add_option("--synthetic-count", ev_count);
  ev->callback([&] {
    Network net = load_checkpoint(ev_ckpt);
    EvalResult r;
    if (net.cfg.task == Task::classify) {
      ImageDataset ds = ev_dataset.empty()
                            ? ImageDataset::synthetic_patterned(
                                  ev_count, net.cfg.channels, net.cfg.image_size,
                                  net.cfg.patch_size, net.cfg.num_classes,
                                  mix_seed(ev_seed, 0x696d6773, 0))
                            : ImageDataset::load(ev_dataset);
      std::vector<int> idx(static_cast<size_t>(ds.count));
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      r = evaluate_classify(net, ds, idx);
    } else {
      TextDataset ds = ev_dataset.empty()
                           ? TextDataset::repeated(
                                 "the quick brown fox jumps over the lazy dog and then naps here.\n",
                                 8192)
                           : TextDataset::from_file(ev_dataset);
      r = evaluate_lm(net, ds, 0, ds.size());
    }
    std::cout << "split=eval loss=" << r.loss << " " << metric_name(net.cfg.task) << "=" << r.metric
              << " count=" << r.count << "\n";
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_scope = "all";
  int gc_seeds = 10;
  gc->add_option("--scope", gc_scope)->check(CLI::IsMember({"ops", "block", "network", "rk4", "all"}));
  gc->add_option("--seeds", gc_seeds);
  gc->callback([&] {
    const SuiteReport rep = run_gradcheck(gc_scope, gc_seeds);
    std::cout << rep.summary();
    std::cout << (rep.pass ? "gradcheck passed" : "gradcheck FAILED") << " (" << rep.reports.size()
              << " checks)\n";
    if (!rep.pass) exit_code = 1;
  });

  // param-count
  auto* pc = app.add_subcommand("param-count", "count trainable parameters (shared sets once)");
  NetOpts pc_net;
  add_network_flags(pc, pc_net);
  pc->callback([&] { exit_code = run_param_count(pc, pc_net); });

  // order-check
  auto* oc = app.add_subcommand("order-check", "measure integrator convergence order");
  std::string oc_field = "transformer", oc_scheme = "euler";
  uint64_t oc_seed = 0;
  oc->add_option("--field", oc_field)->check(CLI::IsMember({"linear", "transformer"}));
  oc->add_option("--scheme", oc_scheme)->check(CLI::IsMember({"euler", "rk4"}));
  oc->add_option("--seed", oc_seed);
  oc->callback([&] { exit_code = run_order_check(oc_field, oc_scheme, oc_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
