// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "gaitssl/errors.hpp"
#include "gaitssl/io.hpp"

namespace gaitssl::synth {

using data::Diagnosis;
using data::Laterality;
namespace ch = data::channel;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Population template per joint: baseline and amplitude/phase of the first three
// harmonics of the gait cycle (degrees / radians).
struct JointTemplate {
    double baseline;
    std::array<double, 3> amplitude;
    std::array<double, 3> phase;
};

constexpr std::array<JointTemplate, kNumJoints> kTemplate = {{
    {15.0, {20.0, 4.0, 1.0}, {0.0, 0.5, 1.0}},   // hip
    {25.0, {22.0, 12.0, 3.0}, {1.2, -0.8, 0.3}},  // knee
    {2.0, {10.0, 6.0, 2.0}, {2.0, 1.0, 0.2}},     // ankle
    {5.0, {1.0, 2.0, 0.5}, {0.0, 0.3, 0.0}},      // back
    {35.0, {12.0, 3.0, 1.0}, {3.1, 0.4, 0.0}},    // elbow
}};

struct ChannelMap {
    Joint joint;
    double side_offset;  // radians of the gait cycle
    Laterality side;
};

// Legs: right side lags half a cycle. Arms swing opposite to the ipsilateral leg.
constexpr std::array<ChannelMap, data::kNumChannels> kChannelMap = {{
    {Joint::hip, 0.0, Laterality::left},
    {Joint::hip, std::numbers::pi, Laterality::right},
    {Joint::knee, 0.0, Laterality::left},
    {Joint::knee, std::numbers::pi, Laterality::right},
    {Joint::ankle, 0.0, Laterality::left},
    {Joint::ankle, std::numbers::pi, Laterality::right},
    {Joint::back, 0.0, Laterality::none},
    {Joint::elbow, std::numbers::pi, Laterality::left},
    {Joint::elbow, 0.0, Laterality::right},
}};

std::string prefix_of(Diagnosis d) {
    switch (d) {
        case Diagnosis::control:
            return "ctl";
        case Diagnosis::stroke:
            return "str";
        case Diagnosis::prosthesis:
            return "pro";
        case Diagnosis::other:
            return "oth";
    }
    return "oth";
}

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw ConfigError("cohort spec: " + what);
    }
}

}  // namespace

void CohortSpec::validate() const {
    require(n_control >= 0 && n_stroke >= 0 && n_prosthesis >= 0 && n_other >= 0, "subject counts must be >= 0");
    require(severity_min >= 0.0 && severity_max <= 1.0 && severity_min <= severity_max,
            "severity range must satisfy 0 <= min <= max <= 1");
    require(sessions_per_subject >= 1, "sessions_per_subject must be >= 1");
    require(trials_per_session >= 1, "trials_per_session must be >= 1");
    require(session_spacing_days >= 0, "session_spacing_days must be >= 0");
    require(length_min >= 1 && length_min <= length_max, "trial length range must satisfy 1 <= min <= max");
    require(cadence_min_hz >= 0.5 && cadence_max_hz <= 1.5 && cadence_min_hz <= cadence_max_hz,
            "cadence range must lie within [0.5, 1.5] Hz");
    require(harmonics >= 1, "harmonics must be >= 1");
    require(noise_std_deg >= 0.0, "noise_std_deg must be >= 0");
    require(recovery_final_severity >= 0.0 && recovery_final_severity <= 1.0,
            "recovery_final_severity must lie in [0, 1]");
    require(stroke_knee_ankle_factor >= 0.0 && stroke_knee_ankle_factor <= 1.0, "stroke_knee_ankle_factor in [0,1]");
    require(prosthesis_ankle_factor >= 0.0 && prosthesis_ankle_factor <= 1.0, "prosthesis_ankle_factor in [0,1]");
    require(other_knee_factor >= 0.0 && other_knee_factor <= 1.0, "other_knee_factor in [0,1]");
    require(subject_amplitude_spread >= 0.0 && subject_phase_spread_rad >= 0.0 && subject_baseline_spread_deg >= 0.0 &&
                trial_jitter >= 0.0,
            "variability parameters must be >= 0");
}

SubjectSignature draw_signature(const CohortSpec& spec, std::size_t subject_index, Diagnosis diagnosis,
                                const std::string& subject_id) {
    Rng rng(mix_seed(spec.seed, subject_index));
    SubjectSignature sig;
    sig.subject_id = subject_id;
    sig.diagnosis = diagnosis;

    const bool left = rng.bernoulli(0.5);
    const double severity = rng.uniform(spec.severity_min, spec.severity_max);
    const bool unilateral = diagnosis == Diagnosis::stroke || diagnosis == Diagnosis::prosthesis;
    sig.affected_side = unilateral ? (left ? Laterality::left : Laterality::right) : Laterality::none;
    sig.severity = diagnosis == Diagnosis::control ? 0.0 : severity;
    sig.cadence_hz = rng.uniform(spec.cadence_min_hz, spec.cadence_max_hz);

    for (std::size_t j = 0; j < kNumJoints; ++j) {
        const auto& tpl = kTemplate[j];
        sig.baseline[j] = tpl.baseline + rng.normal(0.0, spec.subject_baseline_spread_deg);
        sig.amplitude[j].resize(static_cast<std::size_t>(spec.harmonics));
        sig.phase[j].resize(static_cast<std::size_t>(spec.harmonics));
        for (std::size_t h = 0; h < static_cast<std::size_t>(spec.harmonics); ++h) {
            const double base_amp = h < 3 ? tpl.amplitude[h] : 0.5 / static_cast<double>(h + 1);
            const double base_phase = h < 3 ? tpl.phase[h] : 0.0;
            const double factor = std::clamp(1.0 + rng.normal(0.0, spec.subject_amplitude_spread), 0.4, 1.6);
            sig.amplitude[j][h] = base_amp * factor;
            sig.phase[j][h] = base_phase + rng.normal(0.0, spec.subject_phase_spread_rad);
        }
    }
    return sig;
}

double session_severity(const CohortSpec& spec, double initial_severity, int session) {
    if (!spec.recovery || spec.sessions_per_subject <= 1 || initial_severity <= 0.0) {
        return initial_severity;
    }
    const double final_severity = std::min(initial_severity, spec.recovery_final_severity);
    const double frac = static_cast<double>(session) / static_cast<double>(spec.sessions_per_subject - 1);
    return initial_severity + (final_severity - initial_severity) * frac;
}

TrialPlan draw_trial_plan(const CohortSpec& spec, const SubjectSignature& sig, double severity, Rng& rng) {
    TrialPlan plan;
    plan.length = spec.length_min + static_cast<std::size_t>(rng.uniform_int(spec.length_max - spec.length_min + 1));
    plan.cadence_hz = sig.cadence_hz * (1.0 + rng.normal(0.0, spec.trial_jitter));
    plan.cycle_phase = rng.uniform(0.0, kTwoPi);
    plan.amplitude_scale = 1.0 + rng.normal(0.0, spec.trial_jitter);
    plan.severity = severity;
    return plan;
}

data::FrameMatrix render_trial(const CohortSpec& spec, const SubjectSignature& sig, const TrialPlan& plan,
                               Rng* noise) {
    std::array<double, data::kNumChannels> gain{};
    std::array<double, data::kNumChannels> offset{};
    gain.fill(1.0);
    const double s = plan.severity;
    const std::size_t side_shift = sig.affected_side == Laterality::right ? 1 : 0;
    switch (sig.diagnosis) {
        case Diagnosis::control:
            break;
        case Diagnosis::stroke:
            gain[ch::kKneeL + side_shift] = 1.0 - spec.stroke_knee_ankle_factor * s;
            gain[ch::kAnkleL + side_shift] = 1.0 - spec.stroke_knee_ankle_factor * s;
            offset[ch::kElbowL + side_shift] = spec.stroke_elbow_offset_deg * s;
            break;
        case Diagnosis::prosthesis:
            gain[ch::kAnkleL + side_shift] = 1.0 - spec.prosthesis_ankle_factor * s;
            break;
        case Diagnosis::other:
            gain[ch::kKneeL] = 1.0 - spec.other_knee_factor * s;
            gain[ch::kKneeR] = 1.0 - spec.other_knee_factor * s;
            break;
    }

    const bool add_noise = noise != nullptr && !spec.noiseless && spec.noise_std_deg > 0.0;
    data::FrameMatrix frames(plan.length, data::kNumChannels);
    for (std::size_t f = 0; f < plan.length; ++f) {
        const double t = static_cast<double>(f) / data::kSampleRateHz;
        const double cycle = kTwoPi * plan.cadence_hz * t;
        for (std::size_t c = 0; c < data::kNumChannels; ++c) {
            const auto& map = kChannelMap[c];
            const auto j = static_cast<std::size_t>(map.joint);
            double wave = 0.0;
            for (std::size_t h = 0; h < sig.amplitude[j].size(); ++h) {
                const double order = static_cast<double>(h + 1);
                wave += sig.amplitude[j][h] *
                        std::sin(order * (cycle + plan.cycle_phase + map.side_offset) + sig.phase[j][h]);
            }
            double value = sig.baseline[j] + offset[c] + gain[c] * plan.amplitude_scale * wave;
            if (add_noise) {
                value += noise->normal(0.0, spec.noise_std_deg);
            }
            frames(f, c) = value;
        }
    }
    return frames;
}

data::Dataset generate_cohort(const CohortSpec& spec) {
    spec.validate();
    data::Dataset ds;
    const std::array<std::pair<Diagnosis, int>, 4> groups = {{
        {Diagnosis::control, spec.n_control},
        {Diagnosis::stroke, spec.n_stroke},
        {Diagnosis::prosthesis, spec.n_prosthesis},
        {Diagnosis::other, spec.n_other},
    }};
    std::size_t subject_index = 0;
    for (const auto& [diagnosis, count] : groups) {
        for (int i = 0; i < count; ++i, ++subject_index) {
            char id[32];
            std::snprintf(id, sizeof(id), "%s_%03d", prefix_of(diagnosis).c_str(), i);
            const auto sig = draw_signature(spec, subject_index, diagnosis, id);
            ds.subjects.push_back({sig.subject_id, diagnosis, sig.affected_side});

            Rng trial_rng(mix_seed(mix_seed(spec.seed, subject_index), "trials"));
            for (int session = 0; session < spec.sessions_per_subject; ++session) {
                const double severity = session_severity(spec, sig.severity, session);
                const int day = session * spec.session_spacing_days;
                for (int k = 0; k < spec.trials_per_session; ++k) {
                    const auto plan = draw_trial_plan(spec, sig, severity, trial_rng);
                    char trial_id[64];
                    std::snprintf(trial_id, sizeof(trial_id), "%s_d%03d_t%02d", id, day, k);
                    data::GaitTrial trial;
                    trial.trial_id = trial_id;
                    trial.subject_id = sig.subject_id;
                    trial.session_day = day;
                    trial.condition = "session" + std::to_string(session);
                    trial.frames = render_trial(spec, sig, plan, &trial_rng);
                    ds.trials.push_back(std::move(trial));
                }
            }
        }
    }
    std::sort(ds.subjects.begin(), ds.subjects.end(),
              [](const data::Subject& a, const data::Subject& b) { return a.subject_id < b.subject_id; });
    std::sort(ds.trials.begin(), ds.trials.end(), [](const data::GaitTrial& a, const data::GaitTrial& b) {
        return std::tie(a.subject_id, a.session_day, a.trial_id) < std::tie(b.subject_id, b.session_day, b.trial_id);
    });
    return ds;
}

CohortSummary describe_cohort(const data::Dataset& dataset) {
    CohortSummary out;
    for (auto d : {Diagnosis::control, Diagnosis::stroke, Diagnosis::prosthesis, Diagnosis::other}) {
        out.by_diagnosis[std::string(data::to_string(d))] = {};
    }
    out.by_diagnosis["all"] = {};
    for (const auto& s : dataset.subjects) {
        ++out.by_diagnosis[std::string(data::to_string(s.diagnosis))].subjects;
        ++out.by_diagnosis["all"].subjects;
    }

    std::map<std::string, double> length_sums;
    std::array<double, data::kNumChannels> sum{};
    std::array<double, data::kNumChannels> sum_sq{};
    std::size_t frame_count = 0;
    for (auto& c : out.channels) {
        c.min = std::numeric_limits<double>::infinity();
        c.max = -std::numeric_limits<double>::infinity();
    }
    for (const auto& t : dataset.trials) {
        const auto& subject = dataset.subject_of(t);
        for (const std::string key : {std::string(data::to_string(subject.diagnosis)), std::string("all")}) {
            auto& g = out.by_diagnosis[key];
            g.length_min = g.trials == 0 ? t.length() : std::min(g.length_min, t.length());
            g.length_max = std::max(g.length_max, t.length());
            ++g.trials;
            length_sums[key] += static_cast<double>(t.length());
        }
        for (std::size_t f = 0; f < t.frames.rows(); ++f) {
            for (std::size_t c = 0; c < data::kNumChannels; ++c) {
                const double v = t.frames(f, c);
                auto& cs = out.channels[c];
                cs.min = std::min(cs.min, v);
                cs.max = std::max(cs.max, v);
                sum[c] += v;
                sum_sq[c] += v * v;
            }
        }
        frame_count += t.frames.rows();
    }
    for (auto& [key, g] : out.by_diagnosis) {
        g.length_mean = g.trials == 0 ? 0.0 : length_sums[key] / static_cast<double>(g.trials);
    }
    for (std::size_t c = 0; c < data::kNumChannels; ++c) {
        auto& cs = out.channels[c];
        if (frame_count == 0) {
            cs = {};
            continue;
        }
        const double n = static_cast<double>(frame_count);
        cs.mean = sum[c] / n;
        cs.stddev = std::sqrt(std::max(0.0, sum_sq[c] / n - cs.mean * cs.mean));
    }
    return out;
}

std::string cohort_summary_csv(const CohortSummary& summary) {
    std::string out = "section,name,statistic,value\n";
    auto row = [&out](const std::string& section, const std::string& name, const std::string& stat,
                      const std::string& value) { out += section + "," + name + "," + stat + "," + value + "\n"; };
    for (const auto& [name, g] : summary.by_diagnosis) {
        row("diagnosis", name, "subjects", std::to_string(g.subjects));
        row("diagnosis", name, "trials", std::to_string(g.trials));
        row("diagnosis", name, "length_min", std::to_string(g.length_min));
        row("diagnosis", name, "length_mean", io::format_number(g.length_mean));
        row("diagnosis", name, "length_max", std::to_string(g.length_max));
    }
    for (std::size_t c = 0; c < data::kNumChannels; ++c) {
        const std::string name(data::kChannelNames[c]);
        const auto& cs = summary.channels[c];
        row("channel", name, "min", io::format_number(cs.min));
        row("channel", name, "max", io::format_number(cs.max));
        row("channel", name, "mean", io::format_number(cs.mean));
        row("channel", name, "std", io::format_number(cs.stddev));
    }
    return out;
}

}  // namespace gaitssl::synth
