#pragma once

#include <cstdint>
#include <vector>

#include "advloop/adversary.hpp"
#include "advloop/generator.hpp"
#include "advloop/sim.hpp"

namespace advloop::ipl {

struct IplConfig {
    /// Preference sharpness on the anchored log-ratio difference.
    double tau = 0.05;
    /// Winner must beat the loser by more than this much estimated return.
    double margin_delta = 5.0;
    /// Winner and loser must differ by more than this many meters at some
    /// sample (max pointwise distance).
    double diversity_xi = 2.0;
    /// Keep at most this many pairs per scenario, best margins first.
    int pairs_per_scenario = 8;
    /// Candidate-set draws accumulated into one parameter step.
    int accumulation = 16;
    double learning_rate = 1e-2;
    /// Cosine-decay the step size across total_rounds instead of holding it
    /// constant.
    bool cosine_decay = false;
    int total_rounds = 50;
};

/// One preference: the winner reaches a lower estimated ego return than the
/// loser. Indices address a CandidateSet.
struct PreferencePair {
    std::size_t winner = 0;
    std::size_t loser = 0;
    double margin = 0.0;
};

/// Enumerates ordered pairs whose return margin exceeds margin_delta and
/// whose trajectories differ by more than diversity_xi, sorted by margin
/// descending and truncated to pairs_per_scenario.
std::vector<PreferencePair> build_pairs(const generator::CandidateSet& set,
                                        const std::vector<double>& j_hats,
                                        const IplConfig& cfg);

/// The anchored preference logit h for one pair. The candidate-set log
/// normalizers cancel, leaving tau * (w - w_ref) . (f_winner - f_loser).
double pair_logit(const generator::GeneratorParams& params,
                  const generator::GeneratorParams& reference,
                  const generator::CandidateSet& set,
                  const PreferencePair& pair, double tau);

/// Mean over pairs of -log sigmoid(h). Empty pair lists are rejected.
double ipl_loss(const generator::GeneratorParams& params,
                const generator::GeneratorParams& reference,
                const generator::CandidateSet& set,
                const std::vector<PreferencePair>& pairs, double tau);

/// Sum (not mean) over pairs of the loss gradient in the scorer weights:
/// -sigmoid(-h) * tau * (f_winner - f_loser) per pair. Callers divide by
/// their own pair totals, which makes batch accumulation a plain sum.
generator::Features ipl_gradient_sum(
    const generator::GeneratorParams& params,
    const generator::GeneratorParams& reference,
    const generator::CandidateSet& set,
    const std::vector<PreferencePair>& pairs, double tau);

/// A scored candidate draw ready for preference extraction.
struct IplBatch {
    generator::CandidateSet set;
    std::vector<double> j_hats;
    std::vector<PreferencePair> pairs;
};

/// Draws cfg.accumulation fresh candidate sets from scenarios in `pool`
/// (chosen uniformly), scores them against the ego history, and extracts
/// preference pairs. Scenarios must have warm history.
std::vector<IplBatch> draw_batches(const std::vector<sim::Scenario>& pool,
                                   const adversary::HistoryBuffer& buffer,
                                   const generator::GeneratorConfig& gen_cfg,
                                   const adversary::ProxyConfig& proxy_cfg,
                                   const IplConfig& cfg, std::uint64_t seed,
                                   int round_index);

struct IplRoundStats {
    double mean_loss = 0.0;
    std::size_t pair_count = 0;
    double grad_norm = 0.0;
    /// Learning rate actually used for this round after any decay.
    double step_scale = 0.0;
    generator::Features applied_gradient{};
};

/// Accumulates gradients over all batches, divides by the total pair count,
/// and takes one gradient-descent step in place. No pairs, no step.
IplRoundStats apply_ipl_step(generator::GeneratorParams& params,
                             const generator::GeneratorParams& reference,
                             const std::vector<IplBatch>& batches,
                             const IplConfig& cfg, int round_index);

/// draw_batches followed by apply_ipl_step.
IplRoundStats run_ipl_round(generator::GeneratorParams& params,
                            const generator::GeneratorParams& reference,
                            const std::vector<sim::Scenario>& pool,
                            const adversary::HistoryBuffer& buffer,
                            const adversary::ProxyConfig& proxy_cfg,
                            const IplConfig& cfg, std::uint64_t seed,
                            int round_index);

/// Expected negative estimated return of the scorer's softmax over one
/// candidate set: how much damage the current sampler expects to do.
double expected_negative_return(const generator::GeneratorParams& params,
                                const generator::CandidateSet& set,
                                const std::vector<double>& j_hats);

} // namespace advloop::ipl
