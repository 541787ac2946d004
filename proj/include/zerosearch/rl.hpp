#pragma once

// Masked policy-gradient machinery: REINFORCE, GRPO, and PPO/GAE advantage
// estimation over masked trajectories, and the KL-regularized loss
//
//   loss = -sum_{mask=1} A_t * logpi(t) / N  +  beta * sum_{mask=1} (logpi(t) - logref(t)) / N
//
// with N the number of unmasked tokens. Injected document tokens contribute
// exactly zero: gradients flow only through the policy's own outputs. The PPO
// variant swaps the first term for the clipped-ratio surrogate.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zerosearch/rollout.hpp"

namespace zerosearch::rl {

using rollout::MaskedTrajectory;

enum class Algorithm { Reinforce, Grpo, Ppo };

inline std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Reinforce: return "reinforce";
    case Algorithm::Grpo: return "grpo";
    case Algorithm::Ppo: return "ppo";
  }
  return "?";
}

inline Algorithm algorithm_from_name(std::string_view s) {
  if (s == "reinforce") return Algorithm::Reinforce;
  if (s == "grpo") return Algorithm::Grpo;
  if (s == "ppo") return Algorithm::Ppo;
  throw std::invalid_argument("unknown algorithm: " + std::string(s));
}

struct RLConfig {
  Algorithm algorithm = Algorithm::Reinforce;
  double kl_coefficient = 0.001;  // beta
  double gae_lambda = 1.0;
  double gae_gamma = 1.0;
  int group_size = 5;
  double grpo_std_epsilon = 1e-6;
  double clip_range = 0.2;  // PPO
  double policy_learning_rate = 1e-6;
  double value_learning_rate = 1e-5;
  // Ablation switch: when false, injected document tokens enter the loss and
  // advantage broadcast as if the policy had generated them.
  bool mask_document_tokens = true;

  void validate() const {
    if (kl_coefficient < 0) throw std::invalid_argument("kl_coefficient must be >= 0");
    if (gae_lambda < 0 || gae_lambda > 1)
      throw std::invalid_argument("gae_lambda must be in [0,1]");
    if (gae_gamma < 0 || gae_gamma > 1)
      throw std::invalid_argument("gae_gamma must be in [0,1]");
    if (clip_range <= 0) throw std::invalid_argument("clip_range must be > 0");
  }
};

class EmptyGroup : public std::invalid_argument {
 public:
  EmptyGroup() : std::invalid_argument("empty trajectory group") {}
};

class GroupTooSmall : public std::invalid_argument {
 public:
  GroupTooSmall() : std::invalid_argument("GRPO needs a group of at least 2") {}
};

class AlignmentError : public std::invalid_argument {
 public:
  explicit AlignmentError(const std::string& what) : std::invalid_argument(what) {}
};

class EmptyMask : public std::invalid_argument {
 public:
  EmptyMask() : std::invalid_argument("no unmasked tokens in batch") {}
};

class NonFiniteValue : public std::invalid_argument {
 public:
  NonFiniteValue() : std::invalid_argument("non-finite value encountered") {}
};

// Mask actually applied by the loss: the trajectory's own origin mask, or
// all-ones when document-token masking is ablated.
inline std::vector<std::uint8_t> effective_mask(const MaskedTrajectory& t,
                                                const RLConfig& cfg) {
  if (cfg.mask_document_tokens) return t.mask;
  return std::vector<std::uint8_t>(t.mask.size(), 1);
}

struct AdvantageBatch {
  // One advantage per token, aligned with each trajectory's token stream.
  // Entries at masked positions are stored as zero and never consumed.
  std::vector<std::vector<double>> per_token;
  Algorithm estimator = Algorithm::Reinforce;
  // Baseline diagnostics (REINFORCE/GRPO).
  double group_mean = 0.0;
  double group_std = 0.0;
};

namespace detail {

inline AdvantageBatch broadcast(std::span<const MaskedTrajectory> group,
                                std::span<const double> per_traj, Algorithm tag,
                                const RLConfig& cfg) {
  AdvantageBatch out;
  out.estimator = tag;
  out.per_token.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto mask = effective_mask(group[i], cfg);
    std::vector<double> adv(mask.size(), 0.0);
    for (std::size_t t = 0; t < mask.size(); ++t)
      if (mask[t]) adv[t] = per_traj[i];
    out.per_token.push_back(std::move(adv));
  }
  return out;
}

}  // namespace detail

// Terminal reward minus group mean, broadcast over each trajectory's policy
// tokens. The group-mean baseline keeps the estimator variance down without
// a learned value model.
inline AdvantageBatch advantages_reinforce(std::span<const MaskedTrajectory> group,
                                           const RLConfig& cfg = {}) {
  if (group.empty()) throw EmptyGroup();
  double mean = 0.0;
  for (const MaskedTrajectory& t : group) mean += t.reward.f1;
  mean /= static_cast<double>(group.size());
  std::vector<double> adv;
  adv.reserve(group.size());
  for (const MaskedTrajectory& t : group) adv.push_back(t.reward.f1 - mean);
  AdvantageBatch out = detail::broadcast(group, adv, Algorithm::Reinforce, cfg);
  out.group_mean = mean;
  return out;
}

// (reward - mean) / (population std + eps), broadcast per trajectory.
inline AdvantageBatch advantages_grpo(std::span<const MaskedTrajectory> group,
                                      double eps = 1e-6, const RLConfig& cfg = {}) {
  if (group.size() < 2) throw GroupTooSmall();
  double mean = 0.0;
  for (const MaskedTrajectory& t : group) mean += t.reward.f1;
  mean /= static_cast<double>(group.size());
  double var = 0.0;
  for (const MaskedTrajectory& t : group) {
    const double d = t.reward.f1 - mean;
    var += d * d;
  }
  var /= static_cast<double>(group.size());
  const double std_dev = std::sqrt(var);
  std::vector<double> adv;
  adv.reserve(group.size());
  for (const MaskedTrajectory& t : group)
    adv.push_back((t.reward.f1 - mean) / (std_dev + eps));
  AdvantageBatch out = detail::broadcast(group, adv, Algorithm::Grpo, cfg);
  out.group_mean = mean;
  out.group_std = std_dev;
  return out;
}

// Per-token state values at each policy-token prefix, PPO only.
class ValueFunction {
 public:
  virtual ~ValueFunction() = default;
  virtual double value(const std::string& context_prefix) = 0;
};

// Frozen reference policy for the KL term.
class ReferenceModel {
 public:
  virtual ~ReferenceModel() = default;
  virtual double logprob(const std::string& context, const std::string& token) = 0;
};

// GAE over the unmasked time axis with a terminal-only reward: masked tokens
// are removed from the time index, rewards are zero except the last step.
// With lambda = gamma = 1 this reduces to reward-to-go minus value.
inline std::vector<double> gae_on_values(std::span<const double> values,
                                         double terminal_reward, double lambda,
                                         double gamma) {
  for (double v : values)
    if (!std::isfinite(v)) throw NonFiniteValue();
  if (!std::isfinite(terminal_reward)) throw NonFiniteValue();
  const std::size_t n = values.size();
  std::vector<double> adv(n, 0.0);
  double carry = 0.0;
  for (std::size_t idx = n; idx-- > 0;) {
    const double next_value = (idx + 1 < n) ? values[idx + 1] : 0.0;
    const double reward_t = (idx + 1 == n) ? terminal_reward : 0.0;
    const double delta = reward_t + gamma * next_value - values[idx];
    carry = delta + gamma * lambda * carry;
    adv[idx] = carry;
  }
  return adv;
}

// Builds the per-step value sequence by evaluating vf at each unmasked-token
// prefix (prelude plus the token texts seen so far, space-joined).
inline std::vector<double> prefix_values(const MaskedTrajectory& traj, ValueFunction& vf,
                                         const RLConfig& cfg = {}) {
  const auto mask = effective_mask(traj, cfg);
  std::vector<double> values;
  std::string prefix = traj.transcript.prelude;
  for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
    if (mask[t]) values.push_back(vf.value(prefix));
    prefix += ' ';
    prefix += traj.tokens[t].text;
  }
  return values;
}

inline AdvantageBatch advantages_gae(const MaskedTrajectory& traj, ValueFunction& vf,
                                     double lambda, double gamma,
                                     const RLConfig& cfg = {}) {
  const auto mask = effective_mask(traj, cfg);
  const std::vector<double> values = prefix_values(traj, vf, cfg);
  const std::vector<double> steps =
      gae_on_values(values, traj.reward.f1, lambda, gamma);
  AdvantageBatch out;
  out.estimator = Algorithm::Ppo;
  std::vector<double> adv(mask.size(), 0.0);
  std::size_t step_idx = 0;
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) adv[t] = steps[step_idx++];
  out.per_token.push_back(std::move(adv));
  return out;
}

// Aligned ref logprobs for a trajectory, for backends exposing the
// (context, token) interface.
inline std::vector<double> reference_logprobs(const MaskedTrajectory& traj,
                                              ReferenceModel& ref) {
  std::vector<double> out;
  out.reserve(traj.tokens.size());
  std::string prefix = traj.transcript.prelude;
  for (const rollout::TokenRecord& tok : traj.tokens) {
    out.push_back(ref.logprob(prefix, tok.text));
    prefix += ' ';
    prefix += tok.text;
  }
  return out;
}

struct LossResult {
  double loss = 0.0;
  double pg_term = 0.0;  // policy-gradient part
  double kl_term = 0.0;  // beta-weighted KL part
  // d loss / d logprob per token; zero at masked positions. Chain through
  // the backend's d logprob / d parameter to get parameter gradients.
  std::vector<std::vector<double>> dloss_dlogprob;
  std::size_t unmasked_tokens = 0;
};

// Masked policy-gradient loss over a batch. policy/ref/old logprob arrays are
// aligned 1:1 with each trajectory's token stream; old_logprobs may be empty,
// meaning the policy has not moved since rollout (ratio one). Contributions
// from masked positions are exactly zero by construction.
inline LossResult masked_pg_loss(const AdvantageBatch& advantages,
                                 std::span<const MaskedTrajectory> trajectories,
                                 const std::vector<std::vector<double>>& policy_logprobs,
                                 const std::vector<std::vector<double>>& ref_logprobs,
                                 const std::vector<std::vector<double>>& old_logprobs,
                                 const RLConfig& cfg) {
  cfg.validate();
  const std::size_t n = trajectories.size();
  if (advantages.per_token.size() != n || policy_logprobs.size() != n ||
      ref_logprobs.size() != n || (!old_logprobs.empty() && old_logprobs.size() != n))
    throw AlignmentError("batch arrays disagree on trajectory count");

  // First pass: count unmasked tokens and check alignment.
  std::size_t total_unmasked = 0;
  std::vector<std::vector<std::uint8_t>> masks;
  masks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = trajectories[i].tokens.size();
    if (advantages.per_token[i].size() != len || policy_logprobs[i].size() != len ||
        ref_logprobs[i].size() != len ||
        (!old_logprobs.empty() && old_logprobs[i].size() != len))
      throw AlignmentError("token arrays disagree on length for trajectory " +
                           std::to_string(i));
    masks.push_back(effective_mask(trajectories[i], cfg));
    for (std::uint8_t b : masks.back()) total_unmasked += b;
  }
  if (total_unmasked == 0) throw EmptyMask();
  const double inv_n = 1.0 / static_cast<double>(total_unmasked);

  LossResult out;
  out.unmasked_tokens = total_unmasked;
  out.dloss_dlogprob.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    out.dloss_dlogprob[i].assign(trajectories[i].tokens.size(), 0.0);
    for (std::size_t t = 0; t < masks[i].size(); ++t) {
      if (!masks[i][t]) continue;
      const double lp = policy_logprobs[i][t];
      const double adv = advantages.per_token[i][t];
      if (!std::isfinite(lp) || !std::isfinite(adv)) throw NonFiniteValue();

      double pg, dpg_dlp;
      if (cfg.algorithm == Algorithm::Ppo) {
        const double lp_old = old_logprobs.empty() ? lp : old_logprobs[i][t];
        const double ratio = std::exp(lp - lp_old);
        const double clipped =
            std::min(std::max(ratio, 1.0 - cfg.clip_range), 1.0 + cfg.clip_range);
        const double surr = ratio * adv;
        const double surr_clip = clipped * adv;
        if (surr <= surr_clip) {
          pg = -surr;
          dpg_dlp = -adv * ratio;
        } else {
          pg = -surr_clip;
          dpg_dlp = 0.0;  // clipped branch is flat in lp
        }
      } else {
        pg = -adv * lp;
        dpg_dlp = -adv;
      }

      const double kl = lp - ref_logprobs[i][t];
      out.pg_term += pg * inv_n;
      out.kl_term += cfg.kl_coefficient * kl * inv_n;
      out.dloss_dlogprob[i][t] = (dpg_dlp + cfg.kl_coefficient) * inv_n;
    }
  }
  out.loss = out.pg_term + out.kl_term;
  return out;
}

}  // namespace zerosearch::rl
