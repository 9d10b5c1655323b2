#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "pfmn/manifest.hpp"
#include "pfmn/synth.hpp"
#include "pfmn/trainer.hpp"

// Manifest-level glue used by the command-line tool and the Python module.
namespace pfmn {

/// Reads the descriptor inputs of one entry: `features` for photostreams,
/// else `candidates` plus `maps` (when `with_maps`) or `scores`.
TrainingSequence load_sequence(const VideoEntry& entry, bool with_maps = true);
SequenceCorpus manifest_corpus(const Manifest& manifest, bool with_maps = true);

/// The entry's segmentation JSON, else KTS over its frame features, else one
/// frame per subshot. A segment count other than `subshots` is a FormatError.
Segmentation entry_segmentation(const VideoEntry& entry, std::optional<std::size_t> subshots = std::nullopt);

struct SummaryOptions {
  std::optional<std::size_t> m;  // wins over ratio when set
  double ratio = 0.15;
  ViewSelection mode = ViewSelection::kSoft;
  std::size_t hard_k = kHardTopK;
};

/// m for a video of n subshots; ConfigError when an explicit m exceeds n.
std::size_t resolve_summary_length(std::size_t n, const SummaryOptions& options);

/// {video_id, m, indices, subshot_frame_ranges, per_step: [{t, z, top5_s}]}.
nlohmann::json summarize_entry(const VideoEntry& entry, Model& model, const SummaryOptions& options);

/// Reads GT summaries of an entry against its segmentation.
std::vector<GtSummary> entry_gt(const VideoEntry& entry, const Segmentation& seg);

/// Default worker count: PFMN_THREADS when set (ConfigError if it is not a
/// positive integer), else the hardware concurrency.
std::size_t default_thread_count();

/// Runs fn(worker, item) for every item on at most `threads` workers. The
/// exception of the lowest failing item is rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t worker, std::size_t item)>& fn);

struct SynthExport {
  std::vector<std::filesystem::path> files;  // every file written, manifests included
};

/// Writes a synthetic corpus as feature files plus manifests under `dir`:
/// photostreams-train.json, photostreams-heldout.json, videos-train.json,
/// videos-heldout.json, and ranker pairs in pairs/.
SynthExport export_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir,
                             std::size_t pair_count = 512);

}  // namespace pfmn
