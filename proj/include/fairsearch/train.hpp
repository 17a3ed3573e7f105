#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fairsearch/data.hpp"
#include "fairsearch/losses.hpp"
#include "fairsearch/metrics.hpp"
#include "fairsearch/optim.hpp"
#include "fairsearch/supernet.hpp"

namespace fairsearch {

enum class SearchMode { darts, fairdarts, ssf };

std::string_view mode_name(SearchMode mode);
std::optional<SearchMode> mode_from_name(std::string_view name);
/// darts gates edges with softmax; fairdarts and ssf with independent sigmoids.
Gating mode_gating(SearchMode mode);
bool mode_uses_labels(SearchMode mode);

/// Everything the search loop reads from the dataset.
struct SearchData {
  const LabeledDataset* dataset = nullptr;
  SearchSplit split;
  ChannelStats stats;
  std::size_t image_size = 32;
  /// Transform chain for the two self-supervised views.
  AugmentConfig augment;
};

/// Splits `train` for `mode`: stratified by label for the supervised modes,
/// label-blind for ssf.
SearchData make_search_data(const LabeledDataset& train, SearchMode mode, double fraction,
                            std::uint64_t seed, std::size_t image_size, const AugmentConfig& augment);

struct SearchSettings {
  SearchMode mode = SearchMode::darts;
  OptimConfig optim;
  LossConfig loss;
  std::uint64_t seed = 0;
  bool log_wall_time = false;
};

struct SearchState {
  NetworkWeights net;
  ArchParams arch;
  SgdMomentum sgd;
  Adam adam;
  int next_epoch = 0;
  std::vector<MetricsRecord> history;

  static SearchState fresh(const SupernetConfig& cfg, const SearchSettings& settings);
};

/// Loss of the batch under the mode's objective. Only the architecture
/// logits receive gradients; the Adam update is applied to them.
/// Returns the objective before the zero-one term is added.
double arch_step(SearchState& st, const SearchSettings& settings, const SearchData& data,
                 std::span<const std::size_t> batch, int epoch, std::uint64_t view_seed,
                 ClassificationMetrics* accuracy = nullptr);

/// Same objective on a weight batch; only the network weights are updated.
double weight_step(SearchState& st, const SearchSettings& settings, const SearchData& data,
                   std::span<const std::size_t> batch, double lr, std::uint64_t view_seed);

/// Mean over both cell types of the unweighted zero-one loss.
double zero_one_value(const ArchParams& arch);

using SearchEpochHook = std::function<void(const SearchState&)>;

/// Alternating first-order search from st.next_epoch up to
/// settings.optim.search_epochs. One arch step then one weight step per
/// weight batch; arch batches are cycled. `on_epoch` runs after every epoch.
void bilevel_search(SearchState& st, const SearchSettings& settings, const SearchData& data,
                    const SearchEpochHook& on_epoch = {});

struct RetrainData {
  const LabeledDataset* dataset = nullptr;
  std::vector<std::size_t> indices;
  ChannelStats stats;
  std::size_t image_size = 32;
  AugmentConfig augment;
};

struct RetrainState {
  NetworkWeights net;
  SgdMomentum sgd;
  int next_epoch = 0;
  std::vector<MetricsRecord> history;
};

using RetrainEpochHook = std::function<void(const RetrainState&)>;

/// Supervised training of a child network with SGD and cosine annealing up
/// to optim.retrain_epochs.
void retrain(RetrainState& st, const OptimConfig& optim, std::uint64_t seed, const RetrainData& data,
             bool log_wall_time = false, const RetrainEpochHook& on_epoch = {});

/// Accuracy over `ds` in evaluation batches of near-equal size. `arch` is
/// required for the supernet and ignored for child networks.
ClassificationMetrics evaluate(const NetworkWeights& net, const ArchParams* arch, Gating gating,
                               const LabeledDataset& ds, const ChannelStats& stats,
                               std::size_t image_size, std::size_t batch_size = 128);

}  // namespace fairsearch
