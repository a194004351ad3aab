// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gaitssl/data.hpp"
#include "gaitssl/rng.hpp"

namespace gaitssl::synth {

/// Parameters of a synthetic cohort. Generation is a pure function of this struct.
struct CohortSpec {
    int n_control = 6;
    int n_stroke = 6;
    int n_prosthesis = 0;
    int n_other = 0;

    double severity_min = 0.5;
    double severity_max = 1.0;

    int sessions_per_subject = 1;
    int trials_per_session = 3;
    int session_spacing_days = 7;

    std::size_t length_min = 150;
    std::size_t length_max = 300;

    double cadence_min_hz = 0.8;
    double cadence_max_hz = 1.1;
    int harmonics = 3;

    double noise_std_deg = 1.0;
    bool noiseless = false;

    /// Severity decays linearly from the subject's draw to `recovery_final_severity`
    /// across sessions (impaired subjects only).
    bool recovery = false;
    double recovery_final_severity = 0.1;

    // Impairment model; exposed so desk-scale difficulty can be tuned.
    double stroke_knee_ankle_factor = 0.7;
    double stroke_elbow_offset_deg = 20.0;
    double prosthesis_ankle_factor = 0.9;
    double other_knee_factor = 0.4;

    /// Relative spread of per-subject harmonic amplitudes.
    double subject_amplitude_spread = 0.2;
    double subject_phase_spread_rad = 0.3;
    double subject_baseline_spread_deg = 4.0;
    /// Relative per-trial jitter of cadence and overall amplitude.
    double trial_jitter = 0.04;

    std::uint64_t seed = 1;

    /// Throws ConfigError on out-of-range fields.
    void validate() const;
};

/// Joint groups; left/right channels of a group share one waveform.
enum class Joint { hip, knee, ankle, back, elbow };
inline constexpr std::size_t kNumJoints = 5;

struct SubjectSignature {
    std::string subject_id;
    data::Diagnosis diagnosis = data::Diagnosis::control;
    data::Laterality affected_side = data::Laterality::none;
    double severity = 0.0;  // first-session severity; 0 for controls
    double cadence_hz = 1.0;
    std::array<std::vector<double>, kNumJoints> amplitude;  // degrees, per harmonic
    std::array<std::vector<double>, kNumJoints> phase;      // radians, per harmonic
    std::array<double, kNumJoints> baseline{};              // degrees
};

/// Per-trial draw; everything `render_trial` needs besides the signature.
struct TrialPlan {
    std::size_t length = 0;
    double cadence_hz = 1.0;
    double cycle_phase = 0.0;
    double amplitude_scale = 1.0;
    double severity = 0.0;
};

/// Deterministic in (spec.seed, subject_index). The laterality and severity draws
/// happen for every diagnosis so a signature's waveform parameters do not depend
/// on the diagnosis it is paired with.
SubjectSignature draw_signature(const CohortSpec& spec, std::size_t subject_index, data::Diagnosis diagnosis,
                                const std::string& subject_id);

TrialPlan draw_trial_plan(const CohortSpec& spec, const SubjectSignature& sig, double severity, Rng& rng);

/// Channel j = baseline + sum_h A_h sin(2 pi h f t + phi_h + h * cycle_offset) (+ noise).
/// Right-side channels are offset by half a gait cycle. `noise` may be null.
data::FrameMatrix render_trial(const CohortSpec& spec, const SubjectSignature& sig, const TrialPlan& plan,
                               Rng* noise);

/// Severity of a subject at a given session index under the spec's recovery model.
double session_severity(const CohortSpec& spec, double initial_severity, int session);

data::Dataset generate_cohort(const CohortSpec& spec);

struct GroupSummary {
    std::size_t subjects = 0;
    std::size_t trials = 0;
    std::size_t length_min = 0;
    double length_mean = 0.0;
    std::size_t length_max = 0;
};

struct ChannelSummary {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double stddev = 0.0;
};

struct CohortSummary {
    std::map<std::string, GroupSummary> by_diagnosis;  // every diagnosis plus "all"
    std::array<ChannelSummary, data::kNumChannels> channels{};
};

CohortSummary describe_cohort(const data::Dataset& dataset);

/// Long-format CSV: section,name,statistic,value.
std::string cohort_summary_csv(const CohortSummary& summary);

}  // namespace gaitssl::synth
