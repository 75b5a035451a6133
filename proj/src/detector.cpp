#include "lingbridge/detector.hpp"

#include "lingbridge/error.hpp"
#include "lingbridge/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

namespace lingbridge {

using json = nlohmann::json;

const LowResourceMapping& default_low_resource_mapping() {
    static const LowResourceMapping kMapping = {
        {"en", KnowledgeLabel::ch_specific},
        {"zh", KnowledgeLabel::en_specific},
    };
    return kMapping;
}

int label_to_binary(KnowledgeLabel label, const LanguageCode& source, const LowResourceMapping& mapping) {
    auto it = mapping.find(source.value());
    if (it == mapping.end()) {
        throw Error(ErrorCode::UnmappedLanguage, "no low-resource label mapping for source language " + source.value());
    }
    return label == it->second ? 1 : 0;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> code_points(std::string_view s) {
    std::vector<std::string_view> out;
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if (c >= 0xF0) {
            len = 4;
        } else if (c >= 0xE0) {
            len = 3;
        } else if (c >= 0xC0) {
            len = 2;
        }
        len = std::min(len, s.size() - i);
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Portable Fisher-Yates: std::shuffle's output is implementation-defined.
void seeded_shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

double uniform01(std::mt19937_64& rng) { return unit_interval(rng()); }

double standard_normal(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace

double FeatureVector::norm() const {
    double s = 0.0;
    for (double v : value) s += v * v;
    return std::sqrt(s);
}

std::string canonical_text(std::string_view text) { return ascii_lower(trim(text)); }

std::map<std::uint32_t, double> hashed_term_counts(std::string_view canonical, const FeaturizerConfig& config) {
    const std::uint32_t mask = config.dimension() - 1;
    std::map<std::uint32_t, double> counts;
    const auto cps = code_points(canonical);
    std::string gram;
    for (int n = config.min_ngram; n <= config.max_ngram; ++n) {
        if (n <= 0 || static_cast<std::size_t>(n) > cps.size()) continue;
        for (std::size_t i = 0; i + n <= cps.size(); ++i) {
            gram.assign("c");
            for (int k = 0; k < n; ++k) gram.append(cps[i + k]);
            counts[static_cast<std::uint32_t>(fnv1a64(gram)) & mask] += 1.0;
        }
    }
    if (config.word_unigrams) {
        std::size_t i = 0;
        while (i < canonical.size()) {
            while (i < canonical.size() && is_space(canonical[i])) ++i;
            std::size_t j = i;
            while (j < canonical.size() && !is_space(canonical[j])) ++j;
            if (j > i) {
                gram.assign("w");
                gram.append(canonical.substr(i, j - i));
                counts[static_cast<std::uint32_t>(fnv1a64(gram)) & mask] += 1.0;
            }
            i = j;
        }
    }
    return counts;
}

double InverseDocumentFrequency::weight(std::uint32_t bucket) const {
    auto it = df.find(bucket);
    const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(documents)) / (1.0 + d)) + 1.0;
}

FeatureVector featurize(std::string_view text, const FeaturizerConfig& config, const InverseDocumentFrequency& idf) {
    const auto canonical = canonical_text(text);
    if (canonical.empty()) throw Error(ErrorCode::EmptyText, "cannot featurize empty text");
    FeatureVector fv;
    for (const auto& [bucket, count] : hashed_term_counts(canonical, config)) {
        fv.index.push_back(bucket);
        fv.value.push_back((1.0 + std::log(count)) * idf.weight(bucket));
    }
    const double n = fv.norm();
    for (double& v : fv.value) v /= n;
    return fv;
}

// ---------------------------------------------------------------------------

DetectorModel::DetectorModel(LanguageCode language, FeaturizerConfig featurizer)
    : language_(std::move(language)), featurizer_(featurizer) {
    if (featurizer_.hash_bits < 4 || featurizer_.hash_bits > 26) {
        throw Error(ErrorCode::InvalidConfig, "hash_bits must be within [4, 26]");
    }
    if (featurizer_.min_ngram < 1 || featurizer_.max_ngram < featurizer_.min_ngram) {
        throw Error(ErrorCode::InvalidConfig, "invalid n-gram range");
    }
    weights_.assign(featurizer_.dimension(), 0.0);
}

void DetectorModel::set_threshold(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::InvalidInput, "threshold must lie in [0, 1]");
    threshold_ = t;
}

double DetectorModel::margin(const FeatureVector& x) const {
    double z = bias_;
    for (std::size_t k = 0; k < x.index.size(); ++k) z += weights_[x.index[k]] * x.value[k];
    return z;
}

DetectorModel train(const std::vector<std::pair<std::string, KnowledgeLabel>>& corpus, const LanguageCode& source,
                    const TrainingConfig& config, const LowResourceMapping& mapping) {
    if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "detector corpus is empty");
    if (config.epochs <= 0 || config.learning_rate <= 0.0 || config.l2 < 0.0) {
        throw Error(ErrorCode::InvalidConfig, "epochs and learning rate must be positive, l2 non-negative");
    }
    DetectorModel model(source, config.featurizer);
    model.set_threshold(config.threshold);

    const std::size_t n = corpus.size();
    std::vector<int> y(n);
    std::vector<std::map<std::uint32_t, double>> counts(n);
    std::string digest_input;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto canonical = canonical_text(corpus[i].first);
        if (canonical.empty()) throw Error(ErrorCode::EmptyText, "corpus item " + std::to_string(i) + " has empty text");
        y[i] = label_to_binary(corpus[i].second, source, mapping);
        positives += static_cast<std::size_t>(y[i]);
        counts[i] = hashed_term_counts(canonical, config.featurizer);
        digest_input.append(corpus[i].first).push_back('\t');
        digest_input.append(to_string(corpus[i].second)).push_back('\n');
    }
    if (positives == 0 || positives == n) {
        throw Error(ErrorCode::DegenerateCorpus, "corpus has a single binary class for source " + source.value());
    }

    auto& idf = model.idf_;
    idf.documents = n;
    for (const auto& c : counts) {
        for (const auto& [bucket, _] : c) ++idf.df[bucket];
    }
    std::vector<FeatureVector> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& fv = x[i];
        for (const auto& [bucket, count] : counts[i]) {
            fv.index.push_back(bucket);
            fv.value.push_back((1.0 + std::log(count)) * idf.weight(bucket));
        }
        const double norm = fv.norm();
        for (double& v : fv.value) v /= norm;
    }
    counts.clear();

    auto& w = model.weights_;
    auto& b = model.bias_;
    auto objective = [&] {
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double z = model.margin(x[i]);
            loss += softplus(y[i] ? -z : z);
        }
        double sq = 0.0;
        for (double v : w) sq += v * v;
        return loss / static_cast<double>(n) + 0.5 * config.l2 * sq;
    };

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    double lr = config.learning_rate;
    double previous = objective();
    std::vector<double> saved_w;
    auto& history = model.metadata_.loss_history;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        saved_w = w;
        const double saved_b = b;
        seeded_shuffle(order, rng);
        for (std::size_t i : order) {
            const double g = sigmoid(model.margin(x[i])) - static_cast<double>(y[i]);
            for (std::size_t k = 0; k < x[i].index.size(); ++k) {
                double& wk = w[x[i].index[k]];
                wk -= lr * (g * x[i].value[k] + config.l2 * wk);
            }
            b -= lr * g;
        }
        const double current = objective();
        if (current > previous) {
            w.swap(saved_w);
            b = saved_b;
            lr *= 0.5;
            history.push_back(previous);
        } else {
            previous = current;
            history.push_back(current);
        }
    }

    auto& meta = model.metadata_;
    meta.corpus_sha256 = sha256_hex(digest_input);
    meta.seed = config.seed;
    meta.epochs = config.epochs;
    meta.learning_rate = config.learning_rate;
    meta.l2 = config.l2;
    meta.examples = n;
    return model;
}

Prediction predict(const DetectorModel& model, std::string_view text) {
    if (canonical_text(text).empty()) throw Error(ErrorCode::EmptyText, "cannot classify empty text");
    const double score = sigmoid(model.margin(featurize(text, model.featurizer(), model.idf())));
    const double t = model.threshold();
    int label;
    if (t <= 0.0) {
        label = 1;
    } else if (t >= 1.0) {
        label = 0;
    } else {
        label = score >= t ? 1 : 0;
    }
    return Prediction{label, score};
}

// ---------------------------------------------------------------------------
// Model container: "LBDETECT" magic, u32 version, u64 header length, JSON header,
// then (u32 bucket, u64 df) idf pairs and (u32 index, f64 weight) non-zero weights.

namespace {

constexpr char kMagic[8] = {'L', 'B', 'D', 'E', 'T', 'E', 'C', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put_le(std::string& out, T v) {
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>) {
        static_assert(sizeof(T) == 8);
        std::memcpy(&bits, &v, 8);
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw Error(ErrorCode::InvalidInput, "truncated detector model");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    pos += sizeof(T);
    if constexpr (std::is_floating_point_v<T>) {
        T v;
        std::memcpy(&v, &bits, 8);
        return v;
    } else {
        return static_cast<T>(bits);
    }
}

}  // namespace

std::string DetectorModel::serialize() const {
    json header{{"language", language_.value()},
                {"hash_bits", featurizer_.hash_bits},
                {"min_ngram", featurizer_.min_ngram},
                {"max_ngram", featurizer_.max_ngram},
                {"word_unigrams", featurizer_.word_unigrams},
                {"threshold", threshold_},
                {"bias", bias_},
                {"documents", idf_.documents},
                {"metadata",
                 {{"corpus_sha256", metadata_.corpus_sha256},
                  {"seed", metadata_.seed},
                  {"epochs", metadata_.epochs},
                  {"learning_rate", metadata_.learning_rate},
                  {"l2", metadata_.l2},
                  {"examples", metadata_.examples},
                  {"loss_history", metadata_.loss_history}}}};
    const std::string h = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kFormatVersion);
    put_le<std::uint64_t>(out, h.size());
    out += h;
    put_le<std::uint64_t>(out, idf_.df.size());
    for (const auto& [bucket, df] : idf_.df) {
        put_le<std::uint32_t>(out, bucket);
        put_le<std::uint64_t>(out, df);
    }
    std::uint64_t nonzero = 0;
    for (double v : weights_) nonzero += v != 0.0 ? 1 : 0;
    put_le<std::uint64_t>(out, nonzero);
    for (std::uint32_t i = 0; i < weights_.size(); ++i) {
        if (weights_[i] == 0.0) continue;
        put_le<std::uint32_t>(out, i);
        put_le<double>(out, weights_[i]);
    }
    return out;
}

DetectorModel DetectorModel::deserialize(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw Error(ErrorCode::InvalidInput, "not a detector model file");
    }
    std::size_t pos = sizeof(kMagic);
    const auto version = get_le<std::uint32_t>(bytes, pos);
    if (version != kFormatVersion) {
        throw Error(ErrorCode::InvalidInput, "unsupported detector model version " + std::to_string(version));
    }
    const auto hlen = get_le<std::uint64_t>(bytes, pos);
    if (pos + hlen > bytes.size()) throw Error(ErrorCode::InvalidInput, "truncated detector model header");
    const auto header = json::parse(bytes.substr(pos, hlen));
    pos += hlen;
    FeaturizerConfig fc;
    fc.hash_bits = header.at("hash_bits").get<std::uint32_t>();
    fc.min_ngram = header.at("min_ngram").get<int>();
    fc.max_ngram = header.at("max_ngram").get<int>();
    fc.word_unigrams = header.at("word_unigrams").get<bool>();
    DetectorModel m(lang(header.at("language").get<std::string>()), fc);
    m.set_threshold(header.at("threshold").get<double>());
    m.bias_ = header.at("bias").get<double>();
    m.idf_.documents = header.at("documents").get<std::uint64_t>();
    const auto& meta = header.at("metadata");
    m.metadata_.corpus_sha256 = meta.at("corpus_sha256").get<std::string>();
    m.metadata_.seed = meta.at("seed").get<std::uint64_t>();
    m.metadata_.epochs = meta.at("epochs").get<int>();
    m.metadata_.learning_rate = meta.at("learning_rate").get<double>();
    m.metadata_.l2 = meta.at("l2").get<double>();
    m.metadata_.examples = meta.at("examples").get<std::size_t>();
    m.metadata_.loss_history = meta.at("loss_history").get<std::vector<double>>();
    const auto ndf = get_le<std::uint64_t>(bytes, pos);
    for (std::uint64_t i = 0; i < ndf; ++i) {
        const auto bucket = get_le<std::uint32_t>(bytes, pos);
        m.idf_.df[bucket] = get_le<std::uint64_t>(bytes, pos);
    }
    const auto nw = get_le<std::uint64_t>(bytes, pos);
    for (std::uint64_t i = 0; i < nw; ++i) {
        const auto idx = get_le<std::uint32_t>(bytes, pos);
        if (idx >= m.weights_.size()) throw Error(ErrorCode::InvalidInput, "weight index out of range");
        m.weights_[idx] = get_le<double>(bytes, pos);
    }
    if (pos != bytes.size()) throw Error(ErrorCode::InvalidInput, "trailing bytes in detector model");
    return m;
}

void DetectorModel::save(const std::filesystem::path& path) const {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp);
        const auto bytes = serialize();
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

DetectorModel DetectorModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read detector model " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

// ---------------------------------------------------------------------------

json DetectorMetrics::to_json() const {
    return {{"accuracy", accuracy},
            {"recall", recall},
            {"precision", precision},
            {"f1", f1},
            {"confusion",
             {{"tp", counts.true_positive},
              {"fp", counts.false_positive},
              {"tn", counts.true_negative},
              {"fn", counts.false_negative}}}};
}

DetectorMetrics compute_metrics(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.empty()) throw Error(ErrorCode::EmptyTestSet, "no items to evaluate");
    if (truth.size() != predicted.size()) throw Error(ErrorCode::InvalidInput, "truth/prediction size mismatch");
    DetectorMetrics m;
    auto& c = m.counts;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 1) {
            ++(predicted[i] == 1 ? c.true_positive : c.false_negative);
        } else {
            ++(predicted[i] == 1 ? c.false_positive : c.true_negative);
        }
    }
    const auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    m.accuracy = ratio(c.true_positive + c.true_negative, c.total());
    m.recall = ratio(c.true_positive, c.true_positive + c.false_negative);
    m.precision = ratio(c.true_positive, c.true_positive + c.false_positive);
    m.f1 = (m.precision + m.recall) == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

DetectorMetrics evaluate(const DetectorModel& model, const std::vector<std::pair<std::string, int>>& test) {
    if (test.empty()) throw Error(ErrorCode::EmptyTestSet, "detector test set is empty");
    std::vector<int> truth;
    std::vector<int> pred;
    truth.reserve(test.size());
    pred.reserve(test.size());
    for (const auto& [text, label] : test) {
        truth.push_back(label);
        pred.push_back(predict(model, text).label);
    }
    return compute_metrics(truth, pred);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                               double test_fraction,
                                                                               std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw Error(ErrorCode::InvalidInput, "test fraction must lie in (0, 1)");
    }
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (auto& [label, idx] : by_class) {
        seeded_shuffle(idx, rng);
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
        test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
        train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {train_idx, test_idx};
}

// ---------------------------------------------------------------------------

SequenceStats sequence_stats(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) throw Error(ErrorCode::InvalidInput, "no token logprobs");
    double surprisal = 0.0;
    for (double lp : token_logprobs) {
        if (!std::isfinite(lp) || lp > 0.0) throw Error(ErrorCode::InvalidInput, "logprob must be finite and <= 0");
        surprisal -= lp;
    }
    return SequenceStats{surprisal, std::exp(surprisal / static_cast<double>(token_logprobs.size()))};
}

namespace {

std::vector<double> flatten(const EntropySelector& model, const EntropyFeatures& f) {
    std::vector<double> x;
    x.reserve(model.languages.size() * 4);
    for (const auto& l : model.languages) {
        auto it = f.per_language.find(l);
        if (it == f.per_language.end()) throw Error(ErrorCode::InvalidInput, "features missing language " + l);
        x.insert(x.end(), it->second.begin(), it->second.end());
    }
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = (x[d] - model.mean[d]) / model.stdev[d];
    return x;
}

std::vector<double> class_scores(const EntropySelector& model, const std::vector<double>& x) {
    std::vector<double> s(model.languages.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
        double z = model.bias[k];
        for (std::size_t d = 0; d < x.size(); ++d) z += model.weights[k][d] * x[d];
        s[k] = z;
    }
    return s;
}

}  // namespace

EntropySelector entropy_selector_train(const std::vector<EntropyRow>& rows, const EntropySelectorConfig& config) {
    if (rows.empty()) throw Error(ErrorCode::EmptyCorpus, "no entropy rows");
    EntropySelector model;
    for (const auto& [l, _] : rows.front().features.per_language) model.languages.push_back(l);
    std::set<std::string> classes;
    for (const auto& r : rows) {
        if (std::find(model.languages.begin(), model.languages.end(), r.correct_language) == model.languages.end()) {
            throw Error(ErrorCode::InvalidInput, "correct language " + r.correct_language + " has no features");
        }
        classes.insert(r.correct_language);
    }
    if (classes.size() < 2) throw Error(ErrorCode::DegenerateCorpus, "entropy selector needs at least two classes");

    const std::size_t dims = model.languages.size() * 4;
    const std::size_t k_classes = model.languages.size();
    std::vector<std::vector<double>> raw;
    raw.reserve(rows.size());
    for (const auto& r : rows) {
        std::vector<double> x;
        for (const auto& l : model.languages) {
            const auto& v = r.features.per_language.at(l);
            x.insert(x.end(), v.begin(), v.end());
        }
        raw.push_back(std::move(x));
    }
    model.mean.assign(dims, 0.0);
    model.stdev.assign(dims, 0.0);
    for (const auto& x : raw) {
        for (std::size_t d = 0; d < dims; ++d) model.mean[d] += x[d];
    }
    for (double& m : model.mean) m /= static_cast<double>(raw.size());
    for (const auto& x : raw) {
        for (std::size_t d = 0; d < dims; ++d) model.stdev[d] += (x[d] - model.mean[d]) * (x[d] - model.mean[d]);
    }
    for (double& s : model.stdev) {
        s = std::sqrt(s / static_cast<double>(raw.size()));
        if (s < 1e-12) s = 1.0;
    }
    for (auto& x : raw) {
        for (std::size_t d = 0; d < dims; ++d) x[d] = (x[d] - model.mean[d]) / model.stdev[d];
    }
    std::vector<std::size_t> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        y[i] = static_cast<std::size_t>(
            std::find(model.languages.begin(), model.languages.end(), rows[i].correct_language) - model.languages.begin());
    }

    model.weights.assign(k_classes, std::vector<double>(dims, 0.0));
    model.bias.assign(k_classes, 0.0);
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::vector<double>> gw(k_classes, std::vector<double>(dims, 0.0));
        std::vector<double> gb(k_classes, 0.0);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            auto s = class_scores(model, raw[i]);
            const double mx = *std::max_element(s.begin(), s.end());
            double z = 0.0;
            for (double& v : s) z += (v = std::exp(v - mx));
            for (std::size_t k = 0; k < k_classes; ++k) {
                const double g = s[k] / z - (k == y[i] ? 1.0 : 0.0);
                gb[k] += g;
                for (std::size_t d = 0; d < dims; ++d) gw[k][d] += g * raw[i][d];
            }
        }
        for (std::size_t k = 0; k < k_classes; ++k) {
            model.bias[k] -= config.learning_rate * gb[k] * inv_n;
            for (std::size_t d = 0; d < dims; ++d) {
                model.weights[k][d] -= config.learning_rate * (gw[k][d] * inv_n + config.l2 * model.weights[k][d]);
            }
        }
    }
    return model;
}

LanguageCode entropy_selector_predict(const EntropySelector& model, const EntropyFeatures& features) {
    const auto s = class_scores(model, flatten(model, features));
    const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    return lang(model.languages[best]);
}

double entropy_selector_accuracy(const EntropySelector& model, const std::vector<EntropyRow>& rows) {
    if (rows.empty()) throw Error(ErrorCode::EmptyTestSet, "no entropy rows to score");
    std::size_t correct = 0;
    for (const auto& r : rows) {
        const auto s = class_scores(model, flatten(model, r.features));
        const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
        correct += model.languages[best] == r.correct_language ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

std::vector<EntropyRow> synthetic_entropy_rows(std::size_t n, const std::vector<std::string>& languages,
                                               double separation_nats, std::uint64_t seed) {
    if (languages.size() < 2) throw Error(ErrorCode::InvalidInput, "need at least two languages");
    std::mt19937_64 rng(seed);
    std::vector<EntropyRow> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        EntropyRow row;
        row.correct_language = languages[rng() % languages.size()];
        for (const auto& l : languages) {
            const double query_tokens = 8.0 + static_cast<double>(rng() % 17);
            const double response_tokens = 20.0 + static_cast<double>(rng() % 61);
            double eq = std::max(0.0, 25.0 + 4.0 * standard_normal(rng));
            const double er = std::max(0.0, 60.0 + 8.0 * standard_normal(rng));
            if (l == row.correct_language) eq = std::max(0.0, eq - separation_nats);
            row.features.per_language[l] = {eq, er, std::exp(eq / query_tokens), std::exp(er / response_tokens)};
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace lingbridge
