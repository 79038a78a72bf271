#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mdcell {

/// Label indices in [0, K-2]; the blank is K-1.
using LabelSeq = std::vector<int>;

/// T rows of K values each.
using Matrix = std::vector<std::vector<double>>;

enum class CtcStatus { Ok, Infeasible };

struct CtcResult {
  double loss = 0.0;  // -ln p(target | posteriors), +inf when infeasible
  CtcStatus status = CtcStatus::Ok;
  Matrix grad;        // d loss / d posteriors (or logits, see ctc_loss_logits)
};

/// Minimum number of frames needed to emit `target`: L plus one blank between
/// each pair of equal neighbours.
std::size_t ctc_min_frames(const LabelSeq& target);

/// Log-space forward-backward over normalised posterior rows.
CtcResult ctc_loss(const Matrix& posteriors, const LabelSeq& target);

/// Same loss with softmax folded in: grad is with respect to the logits
/// (p - occupancy), which stays finite where posteriors underflow.
CtcResult ctc_loss_logits(const Matrix& logits, const LabelSeq& target);

std::vector<double> softmax(std::span<const double> z);

/// Per-frame argmax (lowest index on ties), collapse repeats, drop blanks.
LabelSeq best_path_decode(const Matrix& posteriors);

std::size_t edit_distance(const LabelSeq& a, const LabelSeq& b);

/// Levenshtein distance over max(1, |ref|).
double label_error_rate(const LabelSeq& hyp, const LabelSeq& ref);

struct CorpusLer {
  double micro = 0.0;  // total distance / total reference length
  double macro = 0.0;  // mean of per-sample label_error_rate
  std::size_t distance = 0;
  std::size_t ref_length = 0;
};

CorpusLer corpus_ler(std::span<const LabelSeq> hyps, std::span<const LabelSeq> refs);

}  // namespace mdcell
