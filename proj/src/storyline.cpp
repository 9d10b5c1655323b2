#include "pfmn/storyline.hpp"

#include <algorithm>
#include <cmath>

#include "pfmn/error.hpp"

namespace pfmn {
namespace {

StorylineScore score(const std::vector<std::size_t>& pred, const SynthSequence& seq) {
  StorylineScore s;
  s.f1 = f1_summary(pred, {planted_gt(seq)}, seq.segmentation).f1;
  std::size_t hits = 0;
  for (auto z : pred) hits += std::binary_search(seq.storyline.begin(), seq.storyline.end(), z);
  s.storyline_hits = double(hits) / double(seq.storyline.size());
  return s;
}

}  // namespace

TrainingSequence to_training(const SynthSequence& seq) { return {seq.id, seq.features, {}, {}, {}}; }

TrainingSequence to_training(const SynthVideo& video, bool with_maps) {
  TrainingSequence t{video.id, {}, video.candidates, {}, {}};
  if (with_maps) t.maps = video.maps;
  return t;
}

SequenceCorpus photostream_corpus(const SynthCorpus& corpus, SynthSplit split) {
  return {corpus.size(split), [&corpus, split](std::size_t i) { return to_training(corpus.photostream(i, split)); }};
}

SequenceCorpus video_corpus(const SynthCorpus& corpus, SynthSplit split, bool with_maps) {
  return {corpus.size(split),
          [&corpus, split, with_maps](std::size_t i) { return to_training(corpus.video(i, split), with_maps); }};
}

std::size_t storyline_summary_length(std::size_t n, double fraction) {
  if (n == 0) throw ConfigError("empty sequence");
  const auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(m, 1, n);
}

StorylineScore storyline_f1(Model& model, const SynthCorpus& corpus, SynthSplit split, bool videos,
                            ViewSelection mode, double fraction) {
  const std::size_t count = corpus.size(split);
  if (count == 0) throw ConfigError("no sequences to score");
  StorylineScore total;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<std::size_t> pred;
    SynthSequence seq;
    if (videos) {
      auto v = corpus.video(i, split);
      const auto desc = descriptors_for(to_training(v), model, mode);
      pred = decode(desc, storyline_summary_length(desc.dim(0), fraction), model.params, model.pfmn).indices;
      seq = std::move(v);
    } else {
      seq = corpus.photostream(i, split);
      pred = decode(seq.features, storyline_summary_length(seq.features.dim(0), fraction), model.params, model.pfmn)
                 .indices;
    }
    const auto s = score(pred, seq);
    total.f1 += s.f1;
    total.storyline_hits += s.storyline_hits;
  }
  total.f1 /= double(count);
  total.storyline_hits /= double(count);
  return total;
}

StorylineScore random_storyline_f1(const SynthCorpus& corpus, SynthSplit split, bool videos, std::uint64_t seed,
                                   double fraction) {
  const std::size_t count = corpus.size(split);
  if (count == 0) throw ConfigError("no sequences to score");
  StorylineScore total;
  for (std::size_t i = 0; i < count; ++i) {
    const auto seq = videos ? corpus.video_content(i, split) : corpus.photostream(i, split);
    const std::size_t n = seq.features.dim(0);
    const auto pred = baseline_select(BaselineKind::kRandom, n, storyline_summary_length(n, fraction),
                                      derive_seed(seed, "random/" + std::to_string(i)));
    const auto s = score(pred, seq);
    total.f1 += s.f1;
    total.storyline_hits += s.storyline_hits;
  }
  total.f1 /= double(count);
  total.storyline_hits /= double(count);
  return total;
}

}  // namespace pfmn
