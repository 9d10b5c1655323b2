#pragma once

#include <cstdint>

#include "pfmn/synth.hpp"
#include "pfmn/trainer.hpp"

// Glue between the synthetic corpus and the trainer: corpus views and the
// planted-storyline recovery score.
namespace pfmn {

SequenceCorpus photostream_corpus(const SynthCorpus& corpus, SynthSplit split);
/// 360 videos; `with_maps` keeps the per-view maps so the ranker can weight views.
SequenceCorpus video_corpus(const SynthCorpus& corpus, SynthSplit split, bool with_maps = true);

TrainingSequence to_training(const SynthSequence& seq);
TrainingSequence to_training(const SynthVideo& video, bool with_maps = true);

/// Summary length on synthetic data: ceil(fraction * n), at least 1.
std::size_t storyline_summary_length(std::size_t n, double fraction = 0.15);

struct StorylineScore {
  double f1 = 0.0;              // mean frame F1 against the planted storyline
  double storyline_hits = 0.0;  // mean fraction of planted items selected
};

/// Decodes every sequence of `split` and scores it against the planted positions.
StorylineScore storyline_f1(Model& model, const SynthCorpus& corpus, SynthSplit split, bool videos,
                            ViewSelection mode = ViewSelection::kSoft, double fraction = 0.15);

/// Same score for the random-sampling baseline.
StorylineScore random_storyline_f1(const SynthCorpus& corpus, SynthSplit split, bool videos, std::uint64_t seed,
                                   double fraction = 0.15);

}  // namespace pfmn
