#include "fairsearch/train.hpp"

#include <chrono>
#include <stdexcept>
#include <string>

#include "fairsearch/ops.hpp"

namespace fairsearch {

std::string_view mode_name(SearchMode mode) {
  switch (mode) {
    case SearchMode::darts: return "darts";
    case SearchMode::fairdarts: return "fairdarts";
    case SearchMode::ssf: return "ssf";
  }
  return "?";
}

std::optional<SearchMode> mode_from_name(std::string_view name) {
  for (auto m : {SearchMode::darts, SearchMode::fairdarts, SearchMode::ssf}) {
    if (mode_name(m) == name) return m;
  }
  return std::nullopt;
}

Gating mode_gating(SearchMode mode) {
  return mode == SearchMode::darts ? Gating::softmax : Gating::sigmoid;
}

bool mode_uses_labels(SearchMode mode) { return mode != SearchMode::ssf; }

SearchData make_search_data(const LabeledDataset& train, SearchMode mode, double fraction,
                            std::uint64_t seed, std::size_t image_size, const AugmentConfig& augment) {
  SearchData d;
  d.dataset = &train;
  d.split = mode_uses_labels(mode) ? split_search_streams(train, fraction, seed)
                                   : split_search_streams_unlabeled(train.size(), fraction, seed);
  d.stats = channel_stats(train);
  d.image_size = image_size;
  d.augment = augment;
  return d;
}

SearchState SearchState::fresh(const SupernetConfig& cfg, const SearchSettings& settings) {
  const auto& o = settings.optim;
  return SearchState{build_supernet(cfg, derive_seed(settings.seed, 0x3e7)),
                     ArchParams::zeros(),
                     SgdMomentum(o.w_momentum, o.w_weight_decay),
                     Adam(o.alpha_lr, o.alpha_beta1, o.alpha_beta2, o.alpha_weight_decay),
                     0,
                     {}};
}

namespace {

using Clock = std::chrono::steady_clock;

struct Objective {
  Var loss;
  Var logits;  // undefined in ssf mode
  Binding binding;
};

// The mode's data loss on one batch. Labels are only read for the
// supervised modes.
Objective batch_objective(Tape& tape, const NetworkWeights& net, const ArchParams& arch,
                          const SearchSettings& settings, const SearchData& data,
                          std::span<const std::size_t> batch, std::uint64_t view_seed,
                          bool weights_grad, bool arch_grad) {
  const Gating gating = mode_gating(settings.mode);
  const LabeledDataset& ds = *data.dataset;
  if (settings.mode == SearchMode::ssf) {
    auto [va, vb] = make_view_batches(ds, batch, data.stats, data.image_size, view_seed, data.augment);
    Binding ba = bind(tape, net, &arch, va, weights_grad, arch_grad);
    Binding bb = ba;
    bb.images = tape.constant(std::move(vb));
    Var za = forward_projection(net, ba, gating);
    Var zb = forward_projection(net, bb, gating);
    Var c = cross_correlation(za, zb, settings.loss.bt_mean_center);
    return {barlow_twins_loss(c, settings.loss.lambda_bt), Var{}, ba};
  }
  Binding b = bind(tape, net, &arch, make_batch(ds, batch, data.stats, data.image_size),
                   weights_grad, arch_grad);
  Var logits = forward_supervised(net, b, gating);
  const std::vector<int> labels = batch_labels(ds, batch);
  return {cross_entropy(logits, labels), logits, b};
}

void check_data(const SearchData& data) {
  if (data.dataset == nullptr) throw std::invalid_argument("search: no dataset");
  if (data.split.weight_indices.size() < 2 || data.split.arch_indices.size() < 2) {
    throw std::invalid_argument("search: weight and architecture streams need at least 2 samples each (got " +
                                std::to_string(data.split.weight_indices.size()) + " and " +
                                std::to_string(data.split.arch_indices.size()) + ")");
  }
}

}  // namespace

double zero_one_value(const ArchParams& arch) {
  Tape t;
  Var z = scale(add(zero_one_loss(t.constant(arch.normal)), zero_one_loss(t.constant(arch.reduce))), 0.5);
  return z.value()[0];
}

double arch_step(SearchState& st, const SearchSettings& settings, const SearchData& data,
                 std::span<const std::size_t> batch, int epoch, std::uint64_t view_seed,
                 ClassificationMetrics* accuracy) {
  Tape tape;
  Objective obj = batch_objective(tape, st.net, st.arch, settings, data, batch, view_seed, false, true);
  Var an = obj.binding.alpha_normal;
  Var ar = obj.binding.alpha_reduce;
  Var total = total_arch_loss(obj.loss, an, ar, settings.loss, mode_gating(settings.mode), epoch);
  tape.backward(total);
  if (accuracy != nullptr && obj.logits.defined()) {
    accuracy->add(argmax_rows(obj.logits.value().data(), obj.logits.value().dim(1)),
                  batch_labels(*data.dataset, batch));
  }
  Tensor* params[] = {&st.arch.normal, &st.arch.reduce};
  const Tensor* grads[] = {&tape.grad(an), &tape.grad(ar)};
  st.adam.step(params, grads);
  return obj.loss.value()[0];
}

double weight_step(SearchState& st, const SearchSettings& settings, const SearchData& data,
                   std::span<const std::size_t> batch, double lr, std::uint64_t view_seed) {
  Tape tape;
  Objective obj = batch_objective(tape, st.net, st.arch, settings, data, batch, view_seed, true, false);
  tape.backward(obj.loss);
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
  params.reserve(st.net.params.size());
  grads.reserve(st.net.params.size());
  for (std::size_t i = 0; i < st.net.params.size(); ++i) {
    params.push_back(&st.net.params[i].second);
    grads.push_back(&tape.grad(obj.binding.params[i]));
  }
  st.sgd.step(params, grads, lr);
  return obj.loss.value()[0];
}

void bilevel_search(SearchState& st, const SearchSettings& settings, const SearchData& data,
                    const SearchEpochHook& on_epoch) {
  check_data(data);
  const int total = settings.optim.search_epochs;
  const std::size_t batch = settings.optim.batch_size;
  const BatchStream weight_stream(data.split.weight_indices, batch, derive_seed(settings.seed, 0x77));
  const BatchStream arch_stream(data.split.arch_indices, batch, derive_seed(settings.seed, 0xa7));
  const std::size_t num_classes = st.net.config.num_classes;

  for (int epoch = st.next_epoch; epoch < total; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = cosine_lr(epoch, total, settings.optim.w_lr, settings.optim.w_lr_min);
    const auto wb = weight_stream.epoch_batches(epoch);
    const auto ab = arch_stream.epoch_batches(epoch);
    if (wb.empty() || ab.empty()) throw std::invalid_argument("search: a stream yields no batch of size >= 2");

    ClassificationMetrics acc(num_classes);
    double train_sum = 0.0, val_sum = 0.0;
    for (std::size_t step = 0; step < wb.size(); ++step) {
      const auto e = static_cast<std::uint64_t>(epoch);
      val_sum += arch_step(st, settings, data, ab[step % ab.size()], epoch,
                           derive_seed(settings.seed, e, 2 * step), &acc);
      train_sum += weight_step(st, settings, data, wb[step], lr, derive_seed(settings.seed, e, 2 * step + 1));
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.mode = std::string(mode_name(settings.mode));
    rec.train_loss = train_sum / static_cast<double>(wb.size());
    rec.val_loss = val_sum / static_cast<double>(wb.size());
    if (settings.mode != SearchMode::darts) rec.zero_one_loss = zero_one_value(st.arch);
    rec.lr = lr;
    rec.per_class_acc.assign(num_classes, std::nullopt);
    if (acc.total() > 0) {
      rec.balanced_acc = acc.balanced();
      rec.overall_acc = acc.overall();
      rec.per_class_acc = acc.per_class();
    }
    if (settings.log_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    }
    st.history.push_back(std::move(rec));
    st.next_epoch = epoch + 1;
    if (on_epoch) on_epoch(st);
  }
}

void retrain(RetrainState& st, const OptimConfig& optim, std::uint64_t seed, const RetrainData& data,
             bool log_wall_time, const RetrainEpochHook& on_epoch) {
  if (data.dataset == nullptr || data.indices.size() < 2) {
    throw std::invalid_argument("retrain: need at least 2 training samples");
  }
  const int total = optim.retrain_epochs;
  const BatchStream stream(data.indices, optim.batch_size, derive_seed(seed, 0x7e7));
  const std::size_t num_classes = st.net.config.num_classes;
  const Gating gating = Gating::softmax;

  for (int epoch = st.next_epoch; epoch < total; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = cosine_lr(epoch, total, optim.w_lr, optim.w_lr_min);
    const auto batches = stream.epoch_batches(epoch);
    if (batches.empty()) throw std::invalid_argument("retrain: no batch of size >= 2");
    ClassificationMetrics acc(num_classes);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& idx = batches[step];
      const Tensor images = make_augmented_batch(*data.dataset, idx, data.stats, data.image_size,
                                                 derive_seed(seed, static_cast<std::uint64_t>(epoch), step),
                                                 data.augment);
      Tape tape;
      Binding b = bind(tape, st.net, nullptr, images, true, false);
      Var logits = forward_supervised(st.net, b, gating);
      const std::vector<int> labels = batch_labels(*data.dataset, idx);
      Var loss = cross_entropy(logits, labels);
      tape.backward(loss);
      acc.add(argmax_rows(logits.value().data(), num_classes), labels);
      loss_sum += loss.value()[0];

      std::vector<Tensor*> params;
      std::vector<const Tensor*> grads;
      for (std::size_t i = 0; i < st.net.params.size(); ++i) {
        params.push_back(&st.net.params[i].second);
        grads.push_back(&tape.grad(b.params[i]));
      }
      st.sgd.step(params, grads, lr);
    }
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.mode = "retrain";
    rec.train_loss = loss_sum / static_cast<double>(batches.size());
    rec.lr = lr;
    rec.balanced_acc = acc.balanced();
    rec.overall_acc = acc.overall();
    rec.per_class_acc = acc.per_class();
    if (log_wall_time) rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    st.history.push_back(std::move(rec));
    st.next_epoch = epoch + 1;
    if (on_epoch) on_epoch(st);
  }
}

ClassificationMetrics evaluate(const NetworkWeights& net, const ArchParams* arch, Gating gating,
                               const LabeledDataset& ds, const ChannelStats& stats,
                               std::size_t image_size, std::size_t batch_size) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
  if (!net.is_child() && arch == nullptr) throw std::invalid_argument("evaluate: supernet needs arch params");
  const std::size_t n = ds.size();
  const std::size_t num_batches = (n + batch_size - 1) / batch_size;
  ClassificationMetrics acc(net.config.num_classes);
  std::size_t begin = 0;
  for (std::size_t k = 0; k < num_batches; ++k) {
    const std::size_t end = n * (k + 1) / num_batches;
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    Tape tape;
    Binding b = bind(tape, net, arch, make_batch(ds, idx, stats, image_size), false, false);
    Var logits = forward_supervised(net, b, gating);
    acc.add(argmax_rows(logits.value().data(), net.config.num_classes), batch_labels(ds, idx));
    begin = end;
  }
  return acc;
}

}  // namespace fairsearch
