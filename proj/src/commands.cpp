#include "fairsearch/commands.hpp"

#include <fstream>
#include <iterator>
#include <map>

#include "fairsearch/checkpoint.hpp"
#include "fairsearch/genotype_io.hpp"
#include "fairsearch/grad_check.hpp"

namespace fairsearch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSplits[] = {"train", "test_balance", "test_lt"};

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw UsageError("cannot read " + p.string());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

fs::path out_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir); }

fs::path data_dir(const RunConfig& cfg) {
  if (cfg.data.dir.empty()) throw UsageError("no dataset directory: pass --data or set data.dir");
  return fs::path(cfg.data.dir);
}

// ---- datasets -------------------------------------------------------------

struct Manifest {
  json doc;
  fs::path dir;

  std::string data_hash() const { return doc.at("data_hash").get<std::string>(); }
  std::size_t num_classes() const { return doc.at("num_classes").get<std::size_t>(); }
};

Manifest load_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) throw UsageError("dataset manifest not found: " + p.string() + " (run make-lt first)");
  Manifest m;
  m.dir = dir;
  try {
    m.doc = json::parse(read_file(p));
    (void)m.data_hash();
    (void)m.num_classes();
  } catch (const json::exception& e) {
    throw UsageError(p.string() + ": malformed manifest: " + e.what());
  }
  return m;
}

LabeledDataset load_split_file(const fs::path& file, std::size_t num_classes) {
  if (!fs::exists(file)) throw UsageError("dataset file not found: " + file.string());
  const fs::path paths[] = {file};
  LabeledDataset ds;
  try {
    ds = load_cifar10_binary(paths);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
  ds.num_classes = num_classes;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (static_cast<std::size_t>(ds.labels[i]) >= num_classes) {
      throw UsageError(file.string() + ": label " + std::to_string(ds.labels[i]) + " at record " +
                       std::to_string(i) + " outside the manifest's " + std::to_string(num_classes) +
                       " classes");
    }
  }
  return ds;
}

// Loads a manifest split and checks its bytes against the recorded hash.
LabeledDataset load_split(const Manifest& m, const std::string& split) {
  const json& entry = m.doc.at("splits").at(split);
  const fs::path file = m.dir / entry.at("file").get<std::string>();
  const std::string bytes = read_file(file);
  if (hex64(fnv1a(bytes)) != entry.at("fnv1a").get<std::string>()) {
    throw UsageError(file.string() + " does not match the hash recorded in its manifest");
  }
  return load_split_file(file, m.num_classes());
}

LabeledDataset restrict_classes(const LabeledDataset& ds, std::size_t num_classes) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (static_cast<std::size_t>(ds.labels[i]) < num_classes) keep.push_back(i);
  }
  LabeledDataset out = ds.subset(keep);
  out.num_classes = num_classes;
  return out;
}

std::pair<LabeledDataset, LabeledDataset> source_pools(const RunConfig& cfg) {
  const std::size_t C = cfg.profile.num_classes;
  if (cfg.data.source == "synthetic") {
    return {make_synthetic_dataset(C, cfg.profile.base_count, derive_seed(cfg.seed, 0xda7a), 32,
                                   cfg.data.synthetic_noise),
            make_synthetic_dataset(C, cfg.data.test_base_count, derive_seed(cfg.seed, 0x7e57), 32,
                                   cfg.data.synthetic_noise)};
  }
  if (cfg.data.cifar_dir.empty()) throw UsageError("data.cifar_dir is not set for source 'cifar10'");
  const fs::path dir(cfg.data.cifar_dir);
  std::vector<fs::path> train_files;
  for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  const std::vector<fs::path> test_files{dir / "test_batch.bin"};
  for (const auto& f : train_files) {
    if (!fs::exists(f)) throw UsageError("missing CIFAR-10 source file " + f.string());
  }
  if (!fs::exists(test_files[0])) throw UsageError("missing CIFAR-10 source file " + test_files[0].string());
  try {
    return {restrict_classes(load_cifar10_binary(train_files), C),
            restrict_classes(load_cifar10_binary(test_files), C)};
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
}

// ---- checkpoints ----------------------------------------------------------

json stats_json(const ChannelStats& s) { return {{"mean", s.mean}, {"stdev", s.stdev}}; }

ChannelStats stats_from_json(const json& j) {
  ChannelStats s;
  s.mean = j.at("mean").get<std::array<double, 3>>();
  s.stdev = j.at("stdev").get<std::array<double, 3>>();
  return s;
}

void put_params(Checkpoint& ck, const ParameterStore& ps) {
  for (const auto& [name, t] : ps) ck.tensors.emplace_back("w/" + name, t);
}

void get_params(const Checkpoint& ck, ParameterStore& ps) {
  for (auto& [name, t] : ps) {
    const Tensor& src = ck.tensor("w/" + name);
    if (src.shape() != t.shape()) {
      throw CheckpointError("tensor 'w/" + name + "' has shape " + shape_to_string(src.shape()) +
                            ", network expects " + shape_to_string(t.shape()));
    }
    t = src;
  }
}

json history_json(const std::vector<MetricsRecord>& h) {
  json arr = json::array();
  for (const auto& r : h) arr.push_back(r);
  return arr;
}

Checkpoint search_checkpoint(const SearchState& st, const RunConfig& cfg, const std::string& data_hash,
                             const ChannelStats& stats) {
  Checkpoint ck;
  ck.meta = {{"kind", "search"},
             {"config", config_to_json(cfg)},
             {"config_hash", config_hash(cfg)},
             {"data_hash", data_hash},
             {"data_dir", cfg.data.dir},
             {"stats", stats_json(stats)},
             {"next_epoch", st.next_epoch},
             {"adam_steps", st.adam.steps()},
             {"history", history_json(st.history)}};
  put_params(ck, st.net.params);
  ck.tensors.emplace_back("alpha/normal", st.arch.normal);
  ck.tensors.emplace_back("alpha/reduce", st.arch.reduce);
  for (std::size_t i = 0; i < st.sgd.velocity().size(); ++i) {
    ck.tensors.emplace_back("sgd/" + std::to_string(i), st.sgd.velocity()[i]);
  }
  const Adam& adam = st.adam;
  for (std::size_t i = 0; i < adam.first_moment().size(); ++i) {
    ck.tensors.emplace_back("adam_m/" + std::to_string(i), adam.first_moment()[i]);
    ck.tensors.emplace_back("adam_v/" + std::to_string(i), adam.second_moment()[i]);
  }
  return ck;
}

std::vector<MetricsRecord> history_from(const Checkpoint& ck) {
  std::vector<MetricsRecord> h;
  for (const auto& r : ck.meta.at("history")) h.push_back(r.get<MetricsRecord>());
  return h;
}

void restore_search(SearchState& st, const Checkpoint& ck) {
  get_params(ck, st.net.params);
  st.arch.normal = ck.tensor("alpha/normal");
  st.arch.reduce = ck.tensor("alpha/reduce");
  st.next_epoch = ck.meta.at("next_epoch").get<int>();
  st.adam.set_steps(ck.meta.at("adam_steps").get<std::size_t>());
  st.sgd.velocity().clear();
  for (std::size_t i = 0; ck.has_tensor("sgd/" + std::to_string(i)); ++i) {
    st.sgd.velocity().push_back(ck.tensor("sgd/" + std::to_string(i)));
  }
  st.adam.first_moment().clear();
  st.adam.second_moment().clear();
  for (std::size_t i = 0; ck.has_tensor("adam_m/" + std::to_string(i)); ++i) {
    st.adam.first_moment().push_back(ck.tensor("adam_m/" + std::to_string(i)));
    st.adam.second_moment().push_back(ck.tensor("adam_v/" + std::to_string(i)));
  }
  st.history = history_from(ck);
}

Checkpoint child_checkpoint(const RetrainState& st, const RunConfig& cfg, const std::string& data_hash,
                            const ChannelStats& stats) {
  Checkpoint ck;
  ck.meta = {{"kind", "child"},
             {"config", config_to_json(cfg)},
             {"config_hash", config_hash(cfg)},
             {"data_hash", data_hash},
             {"data_dir", cfg.data.dir},
             {"stats", stats_json(stats)},
             {"genotype", json::parse(genotype_serialize(*st.net.genotype))},
             {"next_epoch", st.next_epoch},
             {"history", history_json(st.history)}};
  put_params(ck, st.net.params);
  for (std::size_t i = 0; i < st.sgd.velocity().size(); ++i) {
    ck.tensors.emplace_back("sgd/" + std::to_string(i), st.sgd.velocity()[i]);
  }
  return ck;
}

Checkpoint read_checkpoint(const fs::path& p) {
  if (!fs::exists(p)) throw UsageError("checkpoint not found: " + p.string());
  return load_checkpoint(p);
}

// ---- outputs --------------------------------------------------------------

json matrix_json(const Tensor& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < t.dim(1); ++c) row.push_back(t.at({r, c}));
    rows.push_back(row);
  }
  return rows;
}

json alpha_json(const ArchParams& arch, Gating gating) {
  json ops = json::array();
  for (auto op : kAllOps) ops.push_back(std::string(op_name(op)));
  return {{"ops", ops},
          {"gating", std::string(gating_name(gating))},
          {"normal", matrix_json(arch.normal)},
          {"reduce", matrix_json(arch.reduce)},
          {"gates_normal", matrix_json(gate_values(arch.normal, gating))},
          {"gates_reduce", matrix_json(gate_values(arch.reduce, gating))}};
}

Genotype finalize_genotype(const ArchParams& arch, const RunConfig& cfg, DiscretizeRule rule) {
  DiscretizeOptions opts;
  opts.rule = rule;
  opts.threshold = cfg.threshold;
  opts.candidates = cfg.supernet.candidates;
  Genotype g = discretize(arch, opts);
  g.gating_mode = std::string(gating_name(mode_gating(cfg.mode)));
  g.config_hash = config_hash(cfg);
  return g;
}

void print_metrics_line(std::ostream& out, const MetricsRecord& r) {
  out << "epoch " << r.epoch << "  train_loss " << format_number(r.train_loss);
  if (r.val_loss) out << "  val_loss " << format_number(*r.val_loss);
  if (r.zero_one_loss) out << "  zero_one " << format_number(*r.zero_one_loss);
  if (r.balanced_acc) out << "  balanced_acc " << format_number(*r.balanced_acc);
  out << "\n";
}

struct StopRequested {};

}  // namespace

RunConfig resolve_config(std::string_view command, const CommandOptions& opts) {
  RunConfig cfg = opts.config_path ? load_config(*opts.config_path) : RunConfig{};
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.mode) cfg.mode = *opts.mode;
  if (opts.epochs) {
    if (*opts.epochs < 0) throw UsageError("--epochs must be nonnegative");
    (command == "search" ? cfg.optim.search_epochs : cfg.optim.retrain_epochs) = *opts.epochs;
  }
  if (opts.discretize) cfg.discretize = *opts.discretize;
  if (opts.out) cfg.out_dir = opts.out->string();
  if (opts.data) cfg.data.dir = opts.data->string();
  if (opts.retrain_cells) cfg.retrain_cells = *opts.retrain_cells;
  return cfg;
}

int cmd_make_lt(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const fs::path dir = out_dir(cfg);
  auto [train_pool, test_pool] = source_pools(cfg);
  const std::size_t C = cfg.profile.num_classes;

  const ImbalanceProfile balanced{ProfileKind::balance, 1.0, cfg.data.test_base_count, C};
  ImbalanceProfile test_lt_profile = cfg.profile;
  test_lt_profile.base_count = cfg.data.test_base_count;

  std::map<std::string, LabeledDataset> splits;
  splits["train"] = subsample_longtailed(train_pool, cfg.profile, derive_seed(cfg.seed, 1));
  splits["test_balance"] = subsample_longtailed(test_pool, balanced, derive_seed(cfg.seed, 2));
  splits["test_lt"] = subsample_longtailed(test_pool, test_lt_profile, derive_seed(cfg.seed, 3));

  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "cifar10-binary";
  manifest["version"] = 1;
  manifest["config_hash"] = config_hash(cfg);
  manifest["num_classes"] = C;
  manifest["image_size"] = 32;
  manifest["seed"] = cfg.seed;
  manifest["source"] = cfg.data.source;
  manifest["profile"] = config_to_json(cfg)["profile"];
  std::string combined;
  std::string histogram = "class";
  for (const char* name : kSplits) histogram += std::string(",") + name;
  histogram += "\n";
  std::vector<std::vector<std::size_t>> counts;
  for (const char* name : kSplits) {
    const LabeledDataset& ds = splits.at(name);
    const fs::path file = dir / (std::string(name) + ".bin");
    save_cifar10_binary(ds, file);
    const std::string digest = hex64(fnv1a(read_file(file)));
    combined += digest;
    counts.push_back(ds.per_class_counts());
    manifest["splits"][name] = {{"file", file.filename().string()},
                                {"count", ds.size()},
                                {"per_class", counts.back()},
                                {"fnv1a", digest},
                                {"provenance", ds.provenance}};
  }
  manifest["data_hash"] = hex64(fnv1a(combined));
  for (std::size_t c = 0; c < C; ++c) {
    histogram += std::to_string(c);
    for (const auto& col : counts) histogram += "," + std::to_string(col[c]);
    histogram += "\n";
  }
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_file(dir / "class_histogram.csv", histogram);
  save_config(cfg, dir / "config.json");

  out << "wrote " << dir.string() << ": train " << splits["train"].size() << ", test_balance "
      << splits["test_balance"].size() << ", test_lt " << splits["test_lt"].size()
      << " samples; data hash " << manifest["data_hash"].get<std::string>() << "\n";
  return kExitOk;
}

int cmd_search(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  cfg.validate();
  const fs::path dir = out_dir(cfg);
  const Manifest manifest = load_manifest(data_dir(cfg));
  if (manifest.num_classes() != cfg.supernet.num_classes) {
    throw UsageError("dataset has " + std::to_string(manifest.num_classes()) + " classes, config " +
                     std::to_string(cfg.supernet.num_classes));
  }
  const LabeledDataset train = load_split(manifest, "train");
  const SearchData data = make_search_data(train, cfg.mode, cfg.data.split_fraction,
                                           derive_seed(cfg.seed, 0x5e), cfg.supernet.image_size,
                                           cfg.ssl_augment);
  SearchSettings settings{cfg.mode, cfg.optim, cfg.loss, cfg.seed, cfg.log_wall_time};
  SearchState st = SearchState::fresh(cfg.supernet, settings);
  const std::string hash = config_hash(cfg);
  const fs::path ckpt_path = dir / "search.ckpt";

  if (opts.resume) {
    if (fs::exists(ckpt_path)) {
      const Checkpoint ck = load_checkpoint(ckpt_path);
      if (ck.meta.at("kind") != "search" || ck.meta.at("config_hash") != hash) {
        throw UsageError(ckpt_path.string() + " was written by a different configuration");
      }
      restore_search(st, ck);
      out << "resuming at epoch " << st.next_epoch << "\n";
    } else {
      out << "no checkpoint at " << ckpt_path.string() << ", starting fresh\n";
    }
  }

  fs::create_directories(dir);
  save_config(cfg, dir / "config.json");
  const std::size_t C = cfg.supernet.num_classes;
  auto hook = [&](const SearchState& s) {
    save_checkpoint(search_checkpoint(s, cfg, manifest.data_hash(), data.stats), ckpt_path);
    write_metrics_csv(dir / "search_metrics.csv", s.history, C);
    print_metrics_line(out, s.history.back());
    if (opts.stop_after && s.next_epoch >= *opts.stop_after && s.next_epoch < cfg.optim.search_epochs) {
      throw StopRequested{};
    }
  };
  try {
    bilevel_search(st, settings, data, hook);
  } catch (const StopRequested&) {
    out << "stopped after epoch " << st.next_epoch << "; continue with --resume\n";
    return kExitOk;
  }
  save_checkpoint(search_checkpoint(st, cfg, manifest.data_hash(), data.stats), ckpt_path);
  write_metrics_csv(dir / "search_metrics.csv", st.history, C);

  const Gating gating = mode_gating(cfg.mode);
  write_file(dir / "alpha.json", alpha_json(st.arch, gating).dump(2) + "\n");
  const Genotype g = finalize_genotype(st.arch, cfg, cfg.discretize);
  save_genotype(g, dir / "genotype.json");
  save_genotype(finalize_genotype(st.arch, cfg, DiscretizeRule::argmax), dir / "genotype_argmax.json");
  save_genotype(finalize_genotype(st.arch, cfg, DiscretizeRule::threshold), dir / "genotype_threshold.json");
  write_file(dir / "cell_normal.dot", genotype_to_dot(g, CellKind::normal));
  write_file(dir / "cell_reduce.dot", genotype_to_dot(g, CellKind::reduce));
  out << "genotype (" << rule_name(cfg.discretize) << ", " << g.retained_count()
      << " retained edges) written to " << (dir / "genotype.json").string() << "\n";
  return kExitOk;
}

int cmd_retrain(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  cfg.validate();
  const fs::path dir = out_dir(cfg);
  const fs::path gpath = opts.genotype ? *opts.genotype : dir / "genotype.json";
  if (!fs::exists(gpath)) throw UsageError("genotype not found: " + gpath.string());
  const Genotype g = load_genotype(gpath);
  const Manifest manifest = load_manifest(data_dir(cfg));
  if (manifest.num_classes() != cfg.supernet.num_classes) {
    throw UsageError("dataset has " + std::to_string(manifest.num_classes()) + " classes, config " +
                     std::to_string(cfg.supernet.num_classes));
  }
  const LabeledDataset train = load_split(manifest, "train");

  NetworkWeights child;
  try {
    child = derive_child(g, cfg.child_config(), derive_seed(cfg.seed, 0xc41d));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  RetrainState st{std::move(child), SgdMomentum(cfg.optim.w_momentum, cfg.optim.w_weight_decay), 0, {}};
  RetrainData data;
  data.dataset = &train;
  data.indices.resize(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) data.indices[i] = i;
  data.stats = channel_stats(train);
  data.image_size = cfg.supernet.image_size;
  data.augment = cfg.retrain_augment;

  const std::string hash = config_hash(cfg);
  const fs::path ckpt_path = dir / "child.ckpt";
  if (opts.resume && fs::exists(ckpt_path)) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.meta.at("kind") != "child" || ck.meta.at("config_hash") != hash ||
        genotype_parse(ck.meta.at("genotype").dump()) != g) {
      throw UsageError(ckpt_path.string() + " was written by a different configuration or genotype");
    }
    get_params(ck, st.net.params);
    st.next_epoch = ck.meta.at("next_epoch").get<int>();
    st.history = history_from(ck);
    for (std::size_t i = 0; ck.has_tensor("sgd/" + std::to_string(i)); ++i) {
      st.sgd.velocity().push_back(ck.tensor("sgd/" + std::to_string(i)));
    }
    out << "resuming at epoch " << st.next_epoch << "\n";
  }

  fs::create_directories(dir);
  save_config(cfg, dir / "config.json");
  const std::size_t C = cfg.supernet.num_classes;
  auto hook = [&](const RetrainState& s) {
    save_checkpoint(child_checkpoint(s, cfg, manifest.data_hash(), data.stats), ckpt_path);
    write_metrics_csv(dir / "retrain_metrics.csv", s.history, C);
    print_metrics_line(out, s.history.back());
    if (opts.stop_after && s.next_epoch >= *opts.stop_after && s.next_epoch < cfg.optim.retrain_epochs) {
      throw StopRequested{};
    }
  };
  try {
    retrain(st, cfg.optim, cfg.seed, data, cfg.log_wall_time, hook);
  } catch (const StopRequested&) {
    out << "stopped after epoch " << st.next_epoch << "; continue with --resume\n";
    return kExitOk;
  }
  save_checkpoint(child_checkpoint(st, cfg, manifest.data_hash(), data.stats), ckpt_path);
  write_metrics_csv(dir / "retrain_metrics.csv", st.history, C);
  out << "child network (" << g.retained_count() << " retained edges, "
      << st.net.params.scalar_count() << " weights) written to " << ckpt_path.string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out) {
  const fs::path ckpt_path = opts.checkpoint ? *opts.checkpoint : out_dir(cfg) / "child.ckpt";
  const Checkpoint ck = read_checkpoint(ckpt_path);
  RunConfig run;
  NetworkWeights net;
  ArchParams arch;
  Gating gating = Gating::softmax;
  ChannelStats stats;
  std::string data_hash;
  try {
    run = config_from_json(ck.meta.at("config"));
    stats = stats_from_json(ck.meta.at("stats"));
    data_hash = ck.meta.at("data_hash").get<std::string>();
    const std::string kind = ck.meta.at("kind").get<std::string>();
    if (kind == "child") {
      const Genotype g = genotype_parse(ck.meta.at("genotype").dump());
      net = derive_child(g, run.child_config(), 0);
    } else if (kind == "search") {
      net = build_supernet(run.supernet, 0);
      arch.normal = ck.tensor("alpha/normal");
      arch.reduce = ck.tensor("alpha/reduce");
      gating = mode_gating(run.mode);
    } else {
      throw CheckpointError("unknown checkpoint kind '" + kind + "'");
    }
    get_params(ck, net.params);
  } catch (const json::exception& e) {
    throw CheckpointError(ckpt_path.string() + ": malformed metadata: " + e.what());
  } catch (const ParseError& e) {
    throw CheckpointError(ckpt_path.string() + ": " + e.what());
  }

  std::string dir_text = opts.data ? opts.data->string() : ck.meta.value("data_dir", std::string());
  if (dir_text.empty()) dir_text = cfg.data.dir;
  if (dir_text.empty()) throw UsageError("no dataset directory: pass --data");
  const Manifest manifest = load_manifest(fs::path(dir_text));
  if (manifest.data_hash() != data_hash) {
    if (!opts.force) {
      throw UsageError("checkpoint was trained on data " + data_hash + " but " + dir_text +
                       " holds data " + manifest.data_hash() + "; use --force to evaluate anyway");
    }
    out << "warning: data hash mismatch (" << data_hash << " vs " << manifest.data_hash() << ")\n";
  }
  const bool named = opts.split == "train" || opts.split == "test_balance" || opts.split == "test_lt";
  const LabeledDataset ds = named ? load_split(manifest, opts.split)
                                  : load_split_file(fs::path(opts.split), manifest.num_classes());
  const ClassificationMetrics m =
      evaluate(net, net.is_child() ? nullptr : &arch, gating, ds, stats, run.supernet.image_size, run.eval_batch);

  json per_class = json::array(), per_count = json::array();
  const auto pc = m.per_class();
  for (std::size_t c = 0; c < pc.size(); ++c) {
    per_class.push_back(pc[c] ? json(*pc[c]) : json(nullptr));
    per_count.push_back(m.class_total(c));
  }
  const json report = {{"checkpoint", ckpt_path.string()},
                       {"split", opts.split},
                       {"samples", m.total()},
                       {"overall_acc", m.overall()},
                       {"balanced_acc", m.balanced()},
                       {"per_class_acc", per_class},
                       {"per_class_count", per_count},
                       {"config_hash", ck.meta.at("config_hash")},
                       {"data_hash", data_hash}};
  const std::string stem = named ? opts.split : fs::path(opts.split).stem().string();
  const fs::path report_dir = opts.out ? *opts.out : ckpt_path.parent_path();
  write_file(report_dir / ("eval_" + stem + ".json"), report.dump(2) + "\n");
  out << "split " << opts.split << ": " << m.total() << " samples, overall_acc "
      << format_number(m.overall()) << ", balanced_acc " << format_number(m.balanced()) << "\n";
  return kExitOk;
}

int cmd_grad_check(const CommandOptions& opts, std::ostream& out) {
  std::vector<GradCheckCase> cases;
  if (opts.scope == "primitive" || opts.scope == "all") {
    auto p = primitive_grad_cases();
    cases.insert(cases.end(), p.begin(), p.end());
  }
  if (opts.scope == "network" || opts.scope == "all") {
    auto n = network_grad_cases();
    cases.insert(cases.end(), n.begin(), n.end());
  }
  if (cases.empty()) throw UsageError("--scope must be primitive, network or all");
  if (opts.grad_seeds < 1) throw UsageError("--grad-seeds must be positive");
  const auto results = run_grad_checks(cases, opts.grad_seeds, 1e-4);
  return print_grad_report(out, results) ? kExitOk : kExitVerificationFailure;
}

int run_command(std::string_view command, const CommandOptions& opts, std::ostream& out,
                std::ostream& err) {
  try {
    if (command == "grad-check") return cmd_grad_check(opts, out);
    const RunConfig cfg = resolve_config(command, opts);
    if (command == "make-lt") return cmd_make_lt(cfg, out);
    if (command == "search") return cmd_search(cfg, opts, out);
    if (command == "retrain") return cmd_retrain(cfg, opts, out);
    if (command == "eval") return cmd_eval(cfg, opts, out);
    err << "error: unknown command '" << command << "'\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::invalid_argument& e) {
    err << "error: invalid input: " << e.what() << "\n";
  } catch (const std::out_of_range& e) {
    err << "error: invalid input: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}

}  // namespace fairsearch
