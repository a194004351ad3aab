// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gaitssl/errors.hpp"
#include "gaitssl/io.hpp"

namespace gaitssl::data {

using nlohmann::json;

std::optional<std::size_t> channel_index(std::string_view name) {
    for (std::size_t i = 0; i < kChannelNames.size(); ++i) {
        if (kChannelNames[i] == name) {
            return i;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::control:
            return "control";
        case Diagnosis::stroke:
            return "stroke";
        case Diagnosis::prosthesis:
            return "prosthesis";
        case Diagnosis::other:
            return "other";
    }
    return "other";
}

std::string_view to_string(Laterality l) {
    switch (l) {
        case Laterality::none:
            return "none";
        case Laterality::left:
            return "left";
        case Laterality::right:
            return "right";
    }
    return "none";
}

Diagnosis parse_diagnosis(std::string_view text) {
    text = io::trim(text);
    if (text == "control") return Diagnosis::control;
    if (text == "stroke") return Diagnosis::stroke;
    if (text == "prosthesis") return Diagnosis::prosthesis;
    if (text == "other") return Diagnosis::other;
    throw DataError("unknown diagnosis '" + std::string(text) + "'");
}

Laterality parse_laterality(std::string_view text) {
    text = io::trim(text);
    if (text == "none" || text.empty()) return Laterality::none;
    if (text == "left") return Laterality::left;
    if (text == "right") return Laterality::right;
    throw DataError("unknown laterality '" + std::string(text) + "'");
}

FrameMatrix::FrameMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw std::invalid_argument("FrameMatrix: value count does not match shape");
    }
}

FrameMatrix FrameMatrix::slice_rows(std::size_t begin, std::size_t count) const {
    if (begin + count > rows_) {
        throw std::out_of_range("FrameMatrix::slice_rows out of range");
    }
    const auto first = values_.begin() + static_cast<std::ptrdiff_t>(begin * cols_);
    return FrameMatrix(count, cols_, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * cols_)));
}

FrameMatrix NormStats::standardize(const FrameMatrix& frames) const {
    if (frames.cols() != mean.size() || frames.cols() != stddev.size()) {
        throw std::invalid_argument("NormStats::standardize: channel count mismatch");
    }
    FrameMatrix out(frames.rows(), frames.cols());
    for (std::size_t r = 0; r < frames.rows(); ++r) {
        for (std::size_t c = 0; c < frames.cols(); ++c) {
            out(r, c) = (frames(r, c) - mean[c]) / stddev[c];
        }
    }
    return out;
}

const Subject* Dataset::find_subject(std::string_view subject_id) const {
    auto it = std::lower_bound(subjects.begin(), subjects.end(), subject_id,
                               [](const Subject& s, std::string_view id) { return s.subject_id < id; });
    if (it == subjects.end() || it->subject_id != subject_id) {
        return nullptr;
    }
    return &*it;
}

const Subject& Dataset::subject_of(const GaitTrial& trial) const {
    const Subject* s = find_subject(trial.subject_id);
    if (s == nullptr) {
        throw DataError("trial " + trial.trial_id + " references undeclared subject " + trial.subject_id);
    }
    return *s;
}

namespace {

void validate_subject(const Subject& s) {
    const bool unilateral = s.diagnosis == Diagnosis::stroke || s.diagnosis == Diagnosis::prosthesis;
    const bool sided = s.laterality != Laterality::none;
    if (unilateral != sided) {
        throw DataError("subject " + s.subject_id + ": laterality '" + std::string(to_string(s.laterality)) +
                        "' inconsistent with diagnosis '" + std::string(to_string(s.diagnosis)) + "'");
    }
}

std::vector<Subject> load_subjects(const std::filesystem::path& path) {
    const auto lines = io::read_lines(path);
    if (lines.empty() || io::trim(lines.front()) != "subject_id,diagnosis,laterality") {
        throw DataError(path.string() + ": expected header 'subject_id,diagnosis,laterality'");
    }
    std::vector<Subject> subjects;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (io::trim(lines[i]).empty()) {
            continue;
        }
        const auto fields = io::split(lines[i], ',');
        if (fields.size() != 3) {
            throw DataError(path.string() + ":" + std::to_string(i + 1) + ": expected 3 fields");
        }
        Subject s{std::string(io::trim(fields[0])), parse_diagnosis(fields[1]), parse_laterality(fields[2])};
        if (s.subject_id.empty()) {
            throw DataError(path.string() + ":" + std::to_string(i + 1) + ": empty subject_id");
        }
        validate_subject(s);
        subjects.push_back(std::move(s));
    }
    std::sort(subjects.begin(), subjects.end(),
              [](const Subject& a, const Subject& b) { return a.subject_id < b.subject_id; });
    for (std::size_t i = 1; i < subjects.size(); ++i) {
        if (subjects[i].subject_id == subjects[i - 1].subject_id) {
            throw DataError("duplicate subject " + subjects[i].subject_id);
        }
    }
    return subjects;
}

// Python's json module writes bare NaN/Infinity; quote them so the parser
// accepts the line and the finiteness check can report the exact frame.
std::string quote_nonfinite_tokens(const std::string& line) {
    std::string out;
    out.reserve(line.size());
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_string) {
            out.push_back(c);
            if (c == '\\' && i + 1 < line.size()) {
                out.push_back(line[++i]);
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            out.push_back(c);
            continue;
        }
        bool replaced = false;
        for (std::string_view token : {"-Infinity", "Infinity", "NaN"}) {
            if (line.compare(i, token.size(), token) == 0) {
                out += '"';
                out += token;
                out += '"';
                i += token.size() - 1;
                replaced = true;
                break;
            }
        }
        if (!replaced) {
            out.push_back(c);
        }
    }
    return out;
}

GaitTrial parse_trial(const std::string& line, const std::string& where) {
    json rec;
    try {
        rec = json::parse(quote_nonfinite_tokens(line));
    } catch (const json::parse_error& e) {
        throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    GaitTrial t;
    try {
        t.trial_id = rec.at("trial_id").get<std::string>();
        t.subject_id = rec.at("subject_id").get<std::string>();
        t.session_day = rec.at("session_day").get<int>();
        t.condition = rec.value("condition", std::string{});
    } catch (const json::exception& e) {
        throw DataError(where + ": " + e.what());
    }

    std::vector<std::size_t> column_of(kNumChannels);
    for (std::size_t j = 0; j < kNumChannels; ++j) {
        column_of[j] = j;
    }
    if (rec.contains("channels")) {
        const auto& names = rec.at("channels");
        if (!names.is_array() || names.size() != kNumChannels) {
            throw DataError(where + ": trial " + t.trial_id + ": expected " + std::to_string(kNumChannels) +
                            " channel names");
        }
        std::set<std::size_t> seen;
        for (std::size_t src = 0; src < names.size(); ++src) {
            const auto name = names[src].get<std::string>();
            const auto idx = channel_index(name);
            if (!idx) {
                throw DataError(where + ": trial " + t.trial_id + ": unknown channel '" + name + "'");
            }
            if (!seen.insert(*idx).second) {
                throw DataError(where + ": trial " + t.trial_id + ": duplicate channel '" + name + "'");
            }
            column_of[src] = *idx;
        }
    }

    const auto& frames = rec.at("frames");
    if (!frames.is_array() || frames.empty()) {
        throw DataError(where + ": trial " + t.trial_id + ": frames must be a non-empty array");
    }
    t.frames = FrameMatrix(frames.size(), kNumChannels);
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& row = frames[f];
        if (!row.is_array() || row.size() != kNumChannels) {
            throw DataError(where + ": trial " + t.trial_id + " frame " + std::to_string(f) + ": expected " +
                            std::to_string(kNumChannels) + " channels, got " +
                            std::to_string(row.is_array() ? row.size() : 0));
        }
        for (std::size_t src = 0; src < kNumChannels; ++src) {
            const auto& v = row[src];
            double value = std::numeric_limits<double>::quiet_NaN();
            if (v.is_number()) {
                value = v.get<double>();
            }
            if (!std::isfinite(value)) {
                throw DataError(where + ": trial " + t.trial_id + " frame " + std::to_string(f) + " channel " +
                                std::string(kChannelNames[column_of[src]]) + ": non-finite sample");
            }
            t.frames(f, column_of[src]) = value;
        }
    }
    return t;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.subjects = load_subjects(dir / "subjects.csv");

    const auto trials_path = dir / "trials.ndjson";
    const auto lines = io::read_lines(trials_path);
    std::set<std::string> trial_ids;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (io::trim(lines[i]).empty()) {
            continue;
        }
        GaitTrial t = parse_trial(lines[i], trials_path.string() + ":" + std::to_string(i + 1));
        if (ds.find_subject(t.subject_id) == nullptr) {
            throw DataError("trial " + t.trial_id + " references undeclared subject " + t.subject_id);
        }
        if (!trial_ids.insert(t.trial_id).second) {
            throw DataError("duplicate trial_id " + t.trial_id);
        }
        ds.trials.push_back(std::move(t));
    }
    std::sort(ds.trials.begin(), ds.trials.end(), [](const GaitTrial& a, const GaitTrial& b) {
        return std::tie(a.subject_id, a.session_day, a.trial_id) < std::tie(b.subject_id, b.session_day, b.trial_id);
    });
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::string subjects = "subject_id,diagnosis,laterality\n";
    for (const auto& s : dataset.subjects) {
        validate_subject(s);
        subjects += s.subject_id + "," + std::string(to_string(s.diagnosis)) + "," +
                    std::string(to_string(s.laterality)) + "\n";
    }
    io::write_text_file(dir / "subjects.csv", subjects);

    std::string trials;
    json channels = json::array();
    for (auto name : kChannelNames) {
        channels.push_back(std::string(name));
    }
    for (const auto& t : dataset.trials) {
        json frames = json::array();
        for (std::size_t f = 0; f < t.frames.rows(); ++f) {
            const auto row = t.frames.row(f);
            frames.push_back(json(std::vector<double>(row.begin(), row.end())));
        }
        json rec = {{"trial_id", t.trial_id},       {"subject_id", t.subject_id}, {"session_day", t.session_day},
                    {"condition", t.condition},     {"channels", channels},       {"frames", std::move(frames)}};
        trials += rec.dump();
        trials += '\n';
    }
    io::write_text_file(dir / "trials.ndjson", trials);
}

NormStats compute_norm_stats(std::span<const GaitTrial> trials) {
    std::size_t count = 0;
    std::size_t cols = kNumChannels;
    for (const auto& t : trials) {
        count += t.frames.rows();
        cols = t.frames.cols();
    }
    if (count < 2) {
        throw DataError("norm stats need at least 2 frames, got " + std::to_string(count));
    }
    NormStats stats{std::vector<double>(cols, 0.0), std::vector<double>(cols, 0.0)};
    for (const auto& t : trials) {
        if (t.frames.cols() != cols) {
            throw DataError("trial " + t.trial_id + ": channel count mismatch");
        }
        for (std::size_t r = 0; r < t.frames.rows(); ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                stats.mean[c] += t.frames(r, c);
            }
        }
    }
    for (auto& m : stats.mean) {
        m /= static_cast<double>(count);
    }
    for (const auto& t : trials) {
        for (std::size_t r = 0; r < t.frames.rows(); ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const double d = t.frames(r, c) - stats.mean[c];
                stats.stddev[c] += d * d;
            }
        }
    }
    for (std::size_t c = 0; c < cols; ++c) {
        stats.stddev[c] = std::sqrt(stats.stddev[c] / static_cast<double>(count));
        if (!(stats.stddev[c] > 0.0)) {
            const std::string name = c < kNumChannels ? std::string(kChannelNames[c]) : std::to_string(c);
            throw DataError("channel " + name + " has zero variance over the training frames");
        }
    }
    return stats;
}

TrialWindow make_window(const GaitTrial& trial, std::size_t start, std::size_t length) {
    if (length < 2) {
        throw std::invalid_argument("window length must be at least 2");
    }
    if (start + length > trial.length()) {
        throw DataError("trial " + trial.trial_id + ": window [" + std::to_string(start) + ", " +
                        std::to_string(start + length) + ") exceeds length " + std::to_string(trial.length()));
    }
    TrialWindow w;
    w.trial_id = trial.trial_id;
    w.start_frame = start;
    w.data = trial.frames.slice_rows(start, length);
    w.target = trial.frames.slice_rows(start + 1, length - 1);
    return w;
}

std::pair<TrialWindow, TrialWindow> sample_positive_pair(const GaitTrial& trial, Rng& rng, std::size_t length) {
    if (trial.length() < length) {
        throw DataError("trial " + trial.trial_id + " has " + std::to_string(trial.length()) +
                        " frames, shorter than the window length " + std::to_string(length));
    }
    const std::uint64_t choices = trial.length() - length + 1;
    const auto first = static_cast<std::size_t>(rng.uniform_int(choices));
    const auto second = static_cast<std::size_t>(rng.uniform_int(choices));
    return {make_window(trial, first, length), make_window(trial, second, length)};
}

TrialWindow center_window(const GaitTrial& trial, std::size_t length) {
    if (trial.length() < length) {
        throw DataError("trial " + trial.trial_id + " has " + std::to_string(trial.length()) +
                        " frames, shorter than the window length " + std::to_string(length));
    }
    return make_window(trial, (trial.length() - length) / 2, length);
}

Eligibility partition_eligible(std::span<const GaitTrial> trials, std::size_t min_length) {
    Eligibility out;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (trials[i].length() >= min_length) {
            out.eligible.push_back(i);
        } else {
            out.skipped.push_back({trials[i].trial_id, "length " + std::to_string(trials[i].length()) + " < " +
                                                           std::to_string(min_length) + " frames"});
        }
    }
    return out;
}

void write_skip_report(const std::filesystem::path& path, std::span<const SkipRecord> skipped) {
    std::string text;
    for (const auto& s : skipped) {
        text += json{{"trial_id", s.trial_id}, {"reason", s.reason}}.dump();
        text += '\n';
    }
    io::write_text_file(path, text);
}

std::optional<std::size_t> FoldSplit::fold(const std::string& subject_id) const {
    auto it = fold_of.find(subject_id);
    if (it == fold_of.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::vector<std::string> FoldSplit::members(std::size_t fold_index) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of) {
        if (f == fold_index) {
            out.push_back(id);
        }
    }
    return out;
}

FoldSplit make_stratified_folds(std::span<const std::string> subject_ids, std::span<const std::string> strata,
                                std::size_t k, Rng& rng) {
    if (subject_ids.size() != strata.size()) {
        throw std::invalid_argument("make_stratified_folds: ids and strata differ in length");
    }
    if (k < 2) {
        throw DataError("fold count must be at least 2, got " + std::to_string(k));
    }
    if (subject_ids.size() < k) {
        throw DataError("need at least " + std::to_string(k) + " subjects for " + std::to_string(k) +
                        " folds, got " + std::to_string(subject_ids.size()));
    }
    std::map<std::string, std::vector<std::string>> by_stratum;
    for (std::size_t i = 0; i < subject_ids.size(); ++i) {
        by_stratum[strata[i]].push_back(subject_ids[i]);
    }
    FoldSplit split;
    split.k = k;
    std::size_t next_fold = 0;
    for (auto& [stratum, ids] : by_stratum) {
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
            throw DataError("duplicate subject id in fold split");
        }
        if (ids.size() < k) {
            split.warnings.push_back("stratum " + stratum + " has " + std::to_string(ids.size()) +
                                     " subjects for " + std::to_string(k) + " folds");
        }
        rng.shuffle(std::span<std::string>(ids));
        for (const auto& id : ids) {
            if (!split.fold_of.emplace(id, next_fold).second) {
                throw DataError("subject " + id + " appears in more than one stratum");
            }
            next_fold = (next_fold + 1) % k;
        }
    }
    return split;
}

FoldSplit make_subject_folds(std::span<const Subject> subjects, std::size_t k, Rng& rng) {
    std::vector<std::string> ids;
    std::vector<std::string> strata;
    for (const auto& s : subjects) {
        if (!s.scoreable()) {
            continue;
        }
        ids.push_back(s.subject_id);
        strata.emplace_back(to_string(s.diagnosis));
    }
    return make_stratified_folds(ids, strata, k, rng);
}

}  // namespace gaitssl::data
