#pragma once

// Noise-probability schedule for curriculum rollout. The probability of
// asking the simulator for noisy documents at step i out of m is
//
//     p(i) = p_s + (b^(i/m) - 1) / (b - 1) * (p_e - p_s)
//
// so p(0) = p_s, p(m) = p_e, with exponential base b (default 4) shaping how
// quickly difficulty ramps up. Quality is sampled independently per search
// call.

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "zerosearch/random.hpp"

namespace zerosearch::curriculum {

enum class QualityFlag { Useful, Noisy };

inline std::string_view quality_name(QualityFlag q) {
  return q == QualityFlag::Noisy ? "noisy" : "useful";
}

inline QualityFlag quality_from_name(std::string_view s) {
  if (s == "noisy") return QualityFlag::Noisy;
  if (s == "useful") return QualityFlag::Useful;
  throw std::invalid_argument("unknown quality flag: " + std::string(s));
}

struct CurriculumSchedule {
  double p_start = 0.0;
  double p_end = 0.25;
  double base = 4.0;
  int total_steps = 200;

  void validate() const {
    if (!(p_start >= 0.0 && p_start <= 1.0))
      throw std::invalid_argument("p_start must be in [0,1]");
    if (!(p_end >= 0.0 && p_end <= 1.0))
      throw std::invalid_argument("p_end must be in [0,1]");
    // base > 1; values within 1e-9 of 1 select the linear limit.
    if (!(base > 1.0 || std::abs(base - 1.0) < 1e-9))
      throw std::invalid_argument("base must be > 1");
    if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
  }
};

// Named presets matching the per-backbone noise settings.
inline CurriculumSchedule preset(std::string_view name) {
  if (name == "qwen7b") return {0.0, 0.75, 4.0, 200};
  if (name == "qwen3b") return {0.0, 0.25, 4.0, 200};
  if (name == "llama3b") return {0.25, 0.5, 4.0, 200};
  throw std::invalid_argument("unknown curriculum preset: " + std::string(name));
}

// p(i) as above. Throws when i is outside [0, total_steps]; callers that want
// saturation use noise_probability_clamped instead.
inline double noise_probability(const CurriculumSchedule& s, int step) {
  s.validate();
  if (step < 0 || step > s.total_steps)
    throw std::out_of_range("step " + std::to_string(step) + " outside [0, " +
                            std::to_string(s.total_steps) + "]");
  const double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
  double blend;
  if (std::abs(s.base - 1.0) < 1e-9) {
    blend = frac;  // analytic b->1 limit
  } else {
    blend = (std::pow(s.base, frac) - 1.0) / (s.base - 1.0);
  }
  return s.p_start + blend * (s.p_end - s.p_start);
}

inline double noise_probability_clamped(const CurriculumSchedule& s, int step) {
  if (step < 0) step = 0;
  if (step > s.total_steps) step = s.total_steps;
  return noise_probability(s, step);
}

// One quality draw for one search call. Deterministic for a fixed rng state.
inline QualityFlag sample_quality(const CurriculumSchedule& s, int step, Rng& rng) {
  return rng.bernoulli(noise_probability(s, step)) ? QualityFlag::Noisy
                                                   : QualityFlag::Useful;
}

}  // namespace zerosearch::curriculum
