#pragma once

/**
 * Sample store: the run file and its in-memory index.
 *
 * A run file is UTF-8, one JSON object per line, each carrying a `kind`
 * discriminator. Kinds: manifest, question, sample, label, embedding,
 * entailment, probe, grounding, cluster, signal. Text fields are NFC
 * normalized at ingest. Record order in the file is irrelevant; the index
 * is keyed by question_id and written back in canonical order, so permuting
 * lines yields an identical store.
 *
 * A log-probability of -infinity is written as JSON null.
 */

#include "scrkit/errors.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scrkit::store {

inline constexpr int kFormatVersion = 1;
inline constexpr std::size_t kMaxAlternatives = 20;

enum class DecodingMode { Greedy, Temperature, Nucleus };

struct Decoding {
  DecodingMode mode = DecodingMode::Temperature;
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 40;
  std::int64_t seed = 0;

  /// Identity of the decoding configuration, seed excluded. Greedy ignores
  /// temperature and top_p.
  std::string signature() const;
  bool operator==(const Decoding&) const = default;
};

struct TokenAlternative {
  std::string token;
  double logprob = 0.0;
  bool operator==(const TokenAlternative&) const = default;
};

struct TokenLogprob {
  std::string token;
  double chosen_logprob = 0.0;
  std::vector<TokenAlternative> top_alternatives;
  bool operator==(const TokenLogprob&) const = default;
};

using Date = std::chrono::year_month_day;

struct QuestionRecord {
  std::string question_id;
  std::string text;
  std::optional<std::string> category;
  std::optional<std::vector<std::string>> gold_answers;
  std::optional<Date> timestamp_query;
  bool operator==(const QuestionRecord&) const = default;
};

struct ResponseSample {
  std::string question_id;
  int sample_index = 0;
  std::string text;
  Decoding decoding;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
  bool operator==(const ResponseSample&) const = default;
};

enum class Label { Correct, Incorrect, Ambiguous };
enum class Judge { WordOverlap, LlmJudge, GoldTemplate, Human };

struct LabelRecord {
  std::string question_id;
  Label label = Label::Ambiguous;
  Judge judge = Judge::LlmJudge;
  std::string judge_detail;
  bool operator==(const LabelRecord&) const = default;
};

enum class EmbeddingTarget { Question, Sample, Greedy, EntityA, EntityB };

struct EmbeddingRecord {
  std::string question_id;
  EmbeddingTarget target = EmbeddingTarget::Question;
  int sample_index = 0;          // meaningful for Sample only
  std::string model;
  std::string source_text;       // entity string for EntityA/EntityB
  std::vector<double> vector;
  bool operator==(const EmbeddingRecord&) const = default;
};

/// Directional entailment probabilities, entry (i, j) = P(sample i entails j).
struct EntailmentRecord {
  std::string question_id;
  std::vector<std::vector<double>> directional;
  bool operator==(const EntailmentRecord&) const = default;
};

struct ProbeRecord {
  std::string question_id;
  bool available = true;
  std::string text;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
  bool operator==(const ProbeRecord&) const = default;
};

/// P(reference entails answer) for each gold reference, greedy answer as hypothesis.
struct GroundingRecord {
  std::string question_id;
  std::vector<double> reference_scores;
  bool operator==(const GroundingRecord&) const = default;
};

struct ClusterRecord {
  std::string question_id;
  std::string method;
  double threshold = 0.0;
  std::vector<int> assignment;
  int num_clusters = 0;
  bool operator==(const ClusterRecord&) const = default;
};

struct SignalRecord {
  std::string question_id;
  std::string name;
  double value = 0.0;
  std::string config_hash;
  bool operator==(const SignalRecord&) const = default;
};

struct RunManifest {
  int format_version = kFormatVersion;
  std::string run_id;
  std::string model_name;
  std::string endpoint_url;
  Decoding decoding;
  int n = 1;
  std::string created_at;
  std::string dataset_name;
  std::optional<int> embedding_dim;
  bool operator==(const RunManifest&) const = default;
};

/// Everything the store holds about one question.
struct QuestionData {
  QuestionRecord question;
  /// Keyed by Decoding::signature(), each sorted by sample_index.
  std::map<std::string, std::vector<ResponseSample>> samples;
  std::map<Judge, LabelRecord> labels;
  std::vector<EmbeddingRecord> embeddings;
  std::optional<EntailmentRecord> entailment;
  std::optional<ProbeRecord> probe;
  std::optional<GroundingRecord> grounding;
  std::vector<ClusterRecord> clusters;
  std::vector<SignalRecord> signals;

  bool operator==(const QuestionData&) const = default;
};

struct Counts {
  std::size_t questions = 0;
  std::size_t samples = 0;
  std::size_t labels = 0;
  bool operator==(const Counts&) const = default;
};

/// Orphan records (referencing a question_id with no question record) are
/// kept so validate_run can report them instead of failing ingest.
class Run {
public:
  RunManifest manifest;
  std::map<std::string, QuestionData> questions;

  Counts counts() const;

  const QuestionData& at(const std::string& question_id) const;
  QuestionData* find(const std::string& question_id);
  const QuestionData* find(const std::string& question_id) const;

  /// Samples drawn with the manifest's default decoding, by sample_index.
  const std::vector<ResponseSample>& stochastic_samples(const QuestionData& q) const;
  /// First greedy-mode sample, if any.
  const ResponseSample* greedy(const QuestionData& q) const;

  /// Most authoritative label present: human > gold-template > llm-judge > word-overlap.
  std::optional<LabelRecord> best_label(const QuestionData& q) const;

  bool operator==(const Run&) const = default;
};

struct Violation {
  std::string locator;   // e.g. "q1/sample 3/token 5"
  std::string message;
};

// Enum <-> wire strings.
std::string to_string(DecodingMode);
std::string to_string(Label);
std::string to_string(Judge);
std::string to_string(EmbeddingTarget);
DecodingMode parse_decoding_mode(const std::string&);
Label parse_label(const std::string&);
Judge parse_judge(const std::string&);
EmbeddingTarget parse_embedding_target(const std::string&);

std::string format_date(const Date& d);
Date parse_date(const std::string& iso);

/// Parse a run file stream. Throws ParseError (with 1-based line) on
/// malformed lines and IntegrityError on duplicate keys.
Run ingest_run(std::istream& in);
Run ingest_run(const std::filesystem::path& path);

/// Write every record in canonical order.
void write_run(const Run& run, std::ostream& out);
void write_run(const Run& run, const std::filesystem::path& path);

/// Attach labels from a line-delimited file; the given judge overrides any
/// judge in the file. Relabeling with the same judge overwrites. Throws
/// ReferenceError naming the first unknown question_id, leaving `run`
/// untouched.
Counts merge_labels(Run& run, std::istream& labels, Judge judge);
Counts merge_labels(Run& run, const std::filesystem::path& labels, Judge judge);

std::vector<Violation> validate_run(const Run& run);

/// Read a dataset: one QuestionRecord per line (`kind` optional).
std::vector<QuestionRecord> read_questions(const std::filesystem::path& path);

// Single-record serialization, shared with the gateway's incremental writer.
std::string serialize(const RunManifest&);
std::string serialize(const QuestionRecord&);
std::string serialize(const ResponseSample&);
std::string serialize(const LabelRecord&);
std::string serialize(const EmbeddingRecord&);
std::string serialize(const EntailmentRecord&);
std::string serialize(const ProbeRecord&);
std::string serialize(const GroundingRecord&);
std::string serialize(const ClusterRecord&);
std::string serialize(const SignalRecord&);

/// Lines belonging to one question, in canonical order.
std::vector<std::string> serialize_question(const QuestionData& q);

/// Insert a record into a run with the same checks as ingest. Used when
/// appending computed records (clusters, signals) or merging runs.
void add_record(Run& run, const std::string& json_line, std::size_t line_no = 0);

}  // namespace scrkit::store
