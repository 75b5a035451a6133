#pragma once

#include "lingbridge/backends.hpp"
#include "lingbridge/core.hpp"
#include "lingbridge/templates.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lingbridge {

enum class LabelProvenance { llm_agreed, human_reviewed, generated };

std::string_view to_string(LabelProvenance p);
LabelProvenance parse_label_provenance(std::string_view s);

struct LabeledRecord {
    explicit LabeledRecord(Query q) : query(std::move(q)) {}

    Query query;
    std::optional<KnowledgeLabel> label;
    std::optional<LabelProvenance> label_provenance;
    std::optional<std::string> pass1;
    std::optional<std::string> pass2;
    bool machine_translated = false;
};

nlohmann::json record_to_json(const LabeledRecord& r);
LabeledRecord record_from_json(const nlohmann::json& j);

struct LabelCounts {
    std::size_t ch_specific = 0;
    std::size_t common = 0;
    std::size_t en_specific = 0;
    std::size_t unlabeled = 0;

    std::size_t total() const { return ch_specific + common + en_specific + unlabeled; }
    void add(const std::optional<KnowledgeLabel>& label);
    nlohmann::json to_json() const;
};

struct IngestResult {
    std::vector<LabeledRecord> records;
    LabelCounts counts;
    std::map<std::string, LabelCounts> per_dataset;
};

struct IngestOptions {
    bool require_label = true;
};

/// JSON Lines, one record per line; blank lines are skipped. Throws SchemaViolation
/// naming the offending line.
IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options = {});
IngestResult ingest_text(const std::string& text, const IngestOptions& options = {});

/// Canonical JSON Lines; written to a temporary file and renamed into place.
void write_records(const std::filesystem::path& path, const std::vector<LabeledRecord>& records);
std::string records_to_jsonl(const std::vector<LabeledRecord>& records);

/// Write-temp-then-rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// ---------------------------------------------------------------------------
// Translation augmentation

struct RecordFailure {
    std::string id;
    std::string message;
};

struct AugmentResult {
    /// Inputs followed by their translations, in input order.
    std::vector<LabeledRecord> records;
    std::size_t translated = 0;
    std::size_t skipped = 0;
    std::vector<RecordFailure> failures;
};

AugmentResult translate_augment(const std::vector<LabeledRecord>& records, const LanguageCode& target,
                                const TranslationClient& translator, std::size_t parallelism = 1);

// ---------------------------------------------------------------------------
// Two-pass labeling and the review queue

/// Maps category names (English and Chinese surface forms, or label names) to labels.
std::optional<KnowledgeLabel> parse_category(std::string_view raw);

enum class ReviewStatus { pending, resolved, discarded };

std::string_view to_string(ReviewStatus s);
ReviewStatus parse_review_status(std::string_view s);

struct ReviewQueueItem {
    LabeledRecord record;
    std::string pass1;
    std::string pass2;
    ReviewStatus status = ReviewStatus::pending;
    /// Set by the reviewer when status is resolved.
    std::optional<KnowledgeLabel> resolved_label;
    std::optional<std::string> note;
};

nlohmann::json review_item_to_json(const ReviewQueueItem& item);
ReviewQueueItem review_item_from_json(const nlohmann::json& j);

void write_review_queue(const std::filesystem::path& path, const std::vector<ReviewQueueItem>& items);
std::vector<ReviewQueueItem> read_review_queue(const std::filesystem::path& path);

struct LabelingConfig {
    int passes = 2;
    std::string model_id;
    std::size_t parallelism = 1;
};

struct LabelingResult {
    std::vector<LabeledRecord> agreed;
    std::vector<ReviewQueueItem> queue;
    CallLedger ledger;
};

/// Each record is labeled `passes` times at temperature 1.0. Unanimous parsable labels
/// are accepted; everything else, including backend failures, is queued for review.
LabelingResult llm_label(const std::vector<LabeledRecord>& records, const ChatClient& labeler,
                         const TemplateSet& templates, const LabelingConfig& config = {});

struct MergeResult {
    std::vector<LabeledRecord> records;
    std::size_t resolved = 0;
    std::size_t discarded = 0;
    std::size_t pending = 0;
};

/// Resolved queue items join the agreed set (by id, replacing any earlier record);
/// discarded items are dropped; pending ones are left out and counted.
MergeResult merge_review(const std::vector<LabeledRecord>& agreed, const std::vector<ReviewQueueItem>& queue);

// ---------------------------------------------------------------------------
// Attribute-guided synthetic generation

/// The thirty topic words of the generation setup.
const std::vector<std::string>& default_topics();

struct GenerationResult {
    std::vector<LabeledRecord> records;
    std::size_t malformed = 0;
};

/// Parses a generation reply: a JSON object of question -> category. Broken JSON is
/// salvaged entry by entry. Throws UnparseableGeneration when nothing is usable.
GenerationResult parse_generation_reply(std::string_view reply, const std::string& topic, const LanguageCode& lang);

struct GenerationConfig {
    std::vector<std::string> topics = default_topics();
    /// Language the questions are requested in.
    std::string lang = "zh";
    std::string model_id;
};

GenerationResult generate_synthetic(const std::string& topic, const ChatClient& generator,
                                    const TemplateSet& templates, const GenerationConfig& config = {},
                                    CallLedger* ledger = nullptr);

}  // namespace lingbridge
