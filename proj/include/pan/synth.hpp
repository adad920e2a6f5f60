#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pan/dataset.hpp"
#include "pan/error.hpp"
#include "pan/rng.hpp"

namespace pan {

/// How the four stimulus temperatures are spaced between pain threshold T_P
/// and tolerance T_T. "verbatim" uses gamma = (T_T - T_P) / 4, which leaves
/// T4 short of T_T; "endpoint" uses gamma = (T_T - T_P) / 3 so T4 == T_T.
enum class TempMode { kVerbatim, kEndpoint };

inline const char* temp_mode_name(TempMode mode) {
  return mode == TempMode::kVerbatim ? "verbatim" : "endpoint";
}

inline TempMode parse_temp_mode(const std::string& name) {
  if (name == "verbatim") return TempMode::kVerbatim;
  if (name == "endpoint") return TempMode::kEndpoint;
  throw ConfigError("temp-mode '" + name + "' not recognized (verbatim, endpoint)");
}

/// Five stage temperatures [T0..T4]. T0 is always the baseline; T1 is always
/// T_P; the remaining stages step by gamma as selected by the mode.
inline std::array<double, 5> temperature_stages(double t_p, double t_t, TempMode mode,
                                                double t_b = 32.0) {
  if (!(t_p < t_t)) {
    throw DomainError("temperature_stages: need T_P < T_T, got T_P=" + std::to_string(t_p) +
                      " T_T=" + std::to_string(t_t));
  }
  const double divisor = mode == TempMode::kVerbatim ? 4.0 : 3.0;
  const double gamma = (t_t - t_p) / divisor;
  return {t_b, t_p, t_p + gamma, t_p + 2.0 * gamma, t_p + 3.0 * gamma};
}

/// Stimulation protocol parameters. Defaults reproduce the BioVid layout:
/// 20 repetitions of each of 5 levels, 4 s stimuli separated by 8-12 s,
/// 512 Hz sampling, 5.5 s windows (4 s stimulus + 1.5 s tail) = 2816 samples.
struct ProtocolConfig {
  double baseline_c = 32.0;
  double pain_min_c = 40.0;
  double pain_max_c = 44.0;
  double tol_offset_min_c = 4.0;
  double tol_offset_max_c = 8.0;
  std::size_t reps = 20;
  double stimulus_s = 4.0;
  double interval_min_s = 8.0;
  double interval_max_s = 12.0;
  std::uint32_t rate_hz = 512;
  double window_s = 5.5;

  std::size_t window_samples() const {
    return static_cast<std::size_t>(std::llround(window_s * rate_hz));
  }

  void validate() const {
    if (!(baseline_c < pain_min_c) || !(pain_min_c <= pain_max_c)) {
      throw ConfigError("protocol: need baseline < pain_min <= pain_max");
    }
    if (!(tol_offset_min_c > 0.0) || !(tol_offset_min_c <= tol_offset_max_c)) {
      throw ConfigError("protocol: need 0 < tol_offset_min <= tol_offset_max");
    }
    if (reps == 0) throw ConfigError("protocol: reps must be positive");
    if (!(stimulus_s > 0.0)) throw ConfigError("protocol: stimulus duration must be positive");
    if (!(interval_min_s > 0.0) || !(interval_min_s <= interval_max_s)) {
      throw ConfigError("protocol: need 0 < interval_min <= interval_max");
    }
    if (rate_hz == 0) throw ConfigError("protocol: sample rate must be positive");
    if (!(window_s > 0.0) || window_samples() == 0) {
      throw ConfigError("protocol: window length must be positive");
    }
  }
};

namespace detail {

// Double-exponential skin-conductance response, rise 0.75 s / decay 2.0 s,
// normalized to unit peak. The waveform itself is an invented stand-in for
// real EDA; the property the rest of the code relies on is only that the
// response amplitude grows with stimulus temperature.
inline constexpr double kScrRise = 0.75;
inline constexpr double kScrDecay = 2.0;

inline double scr_peak() {
  const double t_star =
      std::log(kScrDecay / kScrRise) / (1.0 / kScrRise - 1.0 / kScrDecay);
  return std::exp(-t_star / kScrDecay) - std::exp(-t_star / kScrRise);
}

inline constexpr double kTonicBase = 2.0;
inline constexpr double kTonicAmp = 0.05;
inline constexpr double kTonicPeriod = 300.0;
inline constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace detail

/// Simulates one subject's full stimulation session and cuts one window per
/// stimulus, anchored at stimulus onset. Pure function of its arguments:
/// the schedule (individual thresholds, stimulus order, intervals) and the
/// measurement noise come from two independent streams derived from `seed`,
/// so changing sigma rescales the same noise draws instead of reshuffling
/// the protocol.
inline std::vector<WindowRecord> generate_subject(const ProtocolConfig& cfg,
                                                  std::uint64_t seed,
                                                  std::uint16_t subject_id, double noise,
                                                  double gain, TempMode mode) {
  cfg.validate();
  if (!(noise >= 0.0)) throw DomainError("generate_subject: noise must be >= 0");
  if (!(gain > 0.0)) throw DomainError("generate_subject: gain must be > 0");

  Rng sched(derive_seed(seed, 0x7363686564ULL));
  Rng meas(derive_seed(seed, 0x6e6f697365ULL));

  const double t_p = sched.uniform(cfg.pain_min_c, cfg.pain_max_c);
  const double t_t = t_p + sched.uniform(cfg.tol_offset_min_c, cfg.tol_offset_max_c);
  const double tonic_phase = sched.uniform(0.0, detail::kTwoPi);

  std::vector<std::uint8_t> levels;
  levels.reserve(5 * cfg.reps);
  for (std::uint8_t lvl = 0; lvl < 5; ++lvl) {
    for (std::size_t r = 0; r < cfg.reps; ++r) levels.push_back(lvl);
  }
  sched.shuffle(levels);

  std::vector<double> onsets(levels.size());
  double t = sched.uniform(cfg.interval_min_s, cfg.interval_max_s);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    onsets[i] = t;
    t += cfg.stimulus_s + sched.uniform(cfg.interval_min_s, cfg.interval_max_s);
  }

  const std::array<double, 5> stages = temperature_stages(t_p, t_t, mode, cfg.baseline_c);
  std::array<double, 5> amplitude{};
  for (std::size_t lvl = 1; lvl < 5; ++lvl) {
    amplitude[lvl] = gain * (stages[lvl] - cfg.baseline_c) / (t_t - cfg.baseline_c);
  }

  const double dt = 1.0 / cfg.rate_hz;
  const std::size_t total = static_cast<std::size_t>(std::llround(t * cfg.rate_hz));
  std::vector<std::size_t> onset_idx(onsets.size());
  for (std::size_t i = 0; i < onsets.size(); ++i) {
    onset_idx[i] = static_cast<std::size_t>(std::llround(onsets[i] * cfg.rate_hz));
  }

  // The SCR sum is evaluated with two leaky accumulators (one per exponential),
  // which makes the whole trace O(total) regardless of how stimuli overlap.
  const double peak = detail::scr_peak();
  const double decay_d = std::exp(-dt / detail::kScrDecay);
  const double decay_r = std::exp(-dt / detail::kScrRise);

  std::vector<double> trace(total);
  double acc_d = 0.0;
  double acc_r = 0.0;
  std::size_t next_onset = 0;
  for (std::size_t i = 0; i < total; ++i) {
    acc_d *= decay_d;
    acc_r *= decay_r;
    while (next_onset < onset_idx.size() && onset_idx[next_onset] == i) {
      const double a = amplitude[levels[next_onset]] / peak;
      acc_d += a;
      acc_r += a;
      ++next_onset;
    }
    const double tonic =
        detail::kTonicBase +
        detail::kTonicAmp *
            std::sin(detail::kTwoPi * (i * dt) / detail::kTonicPeriod + tonic_phase);
    trace[i] = tonic + (acc_d - acc_r) + noise * meas.normal();
  }

  const std::size_t spw = cfg.window_samples();
  std::vector<WindowRecord> records;
  records.reserve(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    WindowRecord rec;
    rec.subject_id = subject_id;
    rec.level = levels[i];
    rec.samples.resize(spw);
    for (std::size_t k = 0; k < spw; ++k) {
      rec.samples[k] = static_cast<float>(trace[onset_idx[i] + k]);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

struct SynthConfig {
  std::size_t subjects = 5;
  std::uint64_t seed = 0;
  double noise = 0.1;
  double gain = 1.0;
  TempMode temp_mode = TempMode::kVerbatim;
  ProtocolConfig protocol;

  void validate() const {
    if (subjects == 0) throw ConfigError("synth: subjects must be positive");
    if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
    if (!(gain > 0.0)) throw ConfigError("synth: gain must be > 0");
    protocol.validate();
  }
};

/// Generates subjects 1..N. Each subject is derived independently from the
/// global seed, so the set of records for subject k does not depend on N.
inline Dataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.rate = cfg.protocol.rate_hz;
  ds.samples_per_window = static_cast<std::uint32_t>(cfg.protocol.window_samples());
  for (std::size_t s = 1; s <= cfg.subjects; ++s) {
    const std::uint16_t sid = static_cast<std::uint16_t>(s);
    std::vector<WindowRecord> recs = generate_subject(
        cfg.protocol, derive_seed(cfg.seed, sid), sid, cfg.noise, cfg.gain, cfg.temp_mode);
    for (WindowRecord& r : recs) ds.records.push_back(std::move(r));
  }
  ds.validate();
  return ds;
}

}  // namespace pan
