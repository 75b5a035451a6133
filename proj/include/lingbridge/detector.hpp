#pragma once

#include "lingbridge/core.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lingbridge {

// ---------------------------------------------------------------------------
// Label mapping

/// source language -> the 3-way label that is low-resource for it.
using LowResourceMapping = std::map<std::string, KnowledgeLabel>;

/// en -> ch_specific, zh -> en_specific.
const LowResourceMapping& default_low_resource_mapping();

/// 1 iff `label` is the other language's specific class for `source`.
int label_to_binary(KnowledgeLabel label, const LanguageCode& source,
                    const LowResourceMapping& mapping = default_low_resource_mapping());

// ---------------------------------------------------------------------------
// Featurization

struct FeaturizerConfig {
    std::uint32_t hash_bits = 20;
    int min_ngram = 1;
    int max_ngram = 3;
    bool word_unigrams = true;

    std::uint32_t dimension() const { return 1u << hash_bits; }
};

/// Sparse, index-sorted, L2-normalized TF-IDF vector.
struct FeatureVector {
    std::vector<std::uint32_t> index;
    std::vector<double> value;

    double norm() const;
};

/// Trimmed, ASCII-lowercased text the featurizer and predictor operate on.
std::string canonical_text(std::string_view text);

/// Raw hashed term counts (character n-grams over code points plus whitespace tokens).
std::map<std::uint32_t, double> hashed_term_counts(std::string_view canonical, const FeaturizerConfig& config);

struct InverseDocumentFrequency {
    std::uint64_t documents = 0;
    std::map<std::uint32_t, std::uint64_t> df;

    /// Smoothed: ln((1 + N) / (1 + df)) + 1.
    double weight(std::uint32_t bucket) const;
};

FeatureVector featurize(std::string_view text, const FeaturizerConfig& config, const InverseDocumentFrequency& idf);

// ---------------------------------------------------------------------------
// Model

struct TrainingConfig {
    std::uint64_t seed = 7;
    int epochs = 12;
    double learning_rate = 0.5;
    double l2 = 1e-6;
    double threshold = 0.5;
    FeaturizerConfig featurizer;
};

struct TrainingMetadata {
    std::string corpus_sha256;
    std::uint64_t seed = 0;
    int epochs = 0;
    double learning_rate = 0.0;
    double l2 = 0.0;
    std::size_t examples = 0;
    /// Full-set objective after each epoch; non-increasing.
    std::vector<double> loss_history;
};

class DetectorModel {
public:
    DetectorModel(LanguageCode language, FeaturizerConfig featurizer);

    const LanguageCode& language() const { return language_; }
    const FeaturizerConfig& featurizer() const { return featurizer_; }
    double threshold() const { return threshold_; }
    void set_threshold(double t);
    double bias() const { return bias_; }
    const TrainingMetadata& metadata() const { return metadata_; }
    const InverseDocumentFrequency& idf() const { return idf_; }
    const std::vector<double>& weights() const { return weights_; }

    /// Raw linear score before the sigmoid.
    double margin(const FeatureVector& x) const;

    void save(const std::filesystem::path& path) const;
    static DetectorModel load(const std::filesystem::path& path);
    std::string serialize() const;
    static DetectorModel deserialize(const std::string& bytes);

private:
    friend DetectorModel train(const std::vector<std::pair<std::string, KnowledgeLabel>>&, const LanguageCode&,
                               const TrainingConfig&, const LowResourceMapping&);

    LanguageCode language_;
    FeaturizerConfig featurizer_;
    InverseDocumentFrequency idf_;
    std::vector<double> weights_;
    double bias_ = 0.0;
    double threshold_ = 0.5;
    TrainingMetadata metadata_;
};

/// Logistic regression by seeded SGD. An epoch whose full-set loss would rise is
/// rolled back and the step size halved, so the recorded loss never increases.
DetectorModel train(const std::vector<std::pair<std::string, KnowledgeLabel>>& corpus, const LanguageCode& source,
                    const TrainingConfig& config = {},
                    const LowResourceMapping& mapping = default_low_resource_mapping());

struct Prediction {
    int label = 0;
    double score = 0.0;
};

Prediction predict(const DetectorModel& model, std::string_view text);

struct ConfusionCounts {
    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t true_negative = 0;
    std::size_t false_negative = 0;

    std::size_t total() const { return true_positive + false_positive + true_negative + false_negative; }
};

/// Positive class is "low-resource" (1). Undefined ratios (0/0) are reported as 0.
struct DetectorMetrics {
    double accuracy = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    ConfusionCounts counts;

    nlohmann::json to_json() const;
};

DetectorMetrics compute_metrics(std::span<const int> truth, std::span<const int> predicted);

DetectorMetrics evaluate(const DetectorModel& model, const std::vector<std::pair<std::string, int>>& test);

/// Stratified split by binary label; returns (train indices, test indices), each sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                               double test_fraction,
                                                                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Entropy / perplexity selector baseline

enum EntropyStat { kQueryEntropy = 0, kResponseEntropy = 1, kQueryPerplexity = 2, kResponsePerplexity = 3 };

struct EntropyFeatures {
    /// language code -> {E_Q, E_R, P_Q, P_R}
    std::map<std::string, std::array<double, 4>> per_language;
};

struct SequenceStats {
    double entropy = 0.0;     // total surprisal, nats
    double perplexity = 1.0;  // exp(mean negative logprob)
};

/// Statistics of one token sequence from its (finite, <= 0) log-probabilities.
SequenceStats sequence_stats(std::span<const double> token_logprobs);

struct EntropyRow {
    EntropyFeatures features;
    std::string correct_language;
};

struct EntropySelectorConfig {
    int epochs = 300;
    double learning_rate = 0.5;
    double l2 = 1e-4;
};

/// Standardized softmax regression over the concatenated per-language statistics.
struct EntropySelector {
    std::vector<std::string> languages;
    std::vector<double> mean;
    std::vector<double> stdev;
    std::vector<std::vector<double>> weights;  // class x feature
    std::vector<double> bias;
};

EntropySelector entropy_selector_train(const std::vector<EntropyRow>& rows, const EntropySelectorConfig& config = {});
LanguageCode entropy_selector_predict(const EntropySelector& model, const EntropyFeatures& features);
double entropy_selector_accuracy(const EntropySelector& model, const std::vector<EntropyRow>& rows);

/// Synthetic rows: the correct language's query entropy (and so its query perplexity)
/// is lowered by `separation_nats`; the response statistics are drawn identically.
std::vector<EntropyRow> synthetic_entropy_rows(std::size_t n, const std::vector<std::string>& languages,
                                               double separation_nats, std::uint64_t seed);

}  // namespace lingbridge
