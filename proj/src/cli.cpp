#include "scrkit/cli.hpp"

#include "scrkit/analysis.hpp"
#include "scrkit/errors.hpp"
#include "scrkit/gateway.hpp"
#include "scrkit/pointer.hpp"
#include "scrkit/report.hpp"
#include "scrkit/sampling.hpp"
#include "scrkit/store.hpp"
#include "scrkit/stub.hpp"
#include "scrkit/text.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace scrkit::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kStubOrigin = "stub://stub";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw PreconditionError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

store::Run load_run(const fs::path& p) {
  if (!fs::exists(p)) throw PreconditionError("run file not found: " + p.string());
  return store::ingest_run(p);
}

void save_run(const store::Run& run, const fs::path& p) {
  const fs::path tmp = p.string() + ".tmp";
  store::write_run(run, tmp);
  fs::rename(tmp, p);
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string quote_arg(const std::string& a) {
  if (!a.empty() && a.find_first_of(" \t\"'") == std::string::npos) return a;
  std::string out = "'";
  for (char c : a) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

// Advisory exclusive lock on a sidecar file next to the run file.
class RunLock {
public:
  explicit RunLock(const fs::path& run_file) {
    const auto path = run_file.string() + ".lock";
    if (run_file.has_parent_path()) fs::create_directories(run_file.parent_path());
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw PreconditionError("cannot open lock file " + path + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw PreconditionError("run file " + run_file.string() + " is being written by another scrkit process");
    }
  }
  ~RunLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

private:
  int fd_ = -1;
};

// Starts the built-in stub and routes the logical stub origin to it, so
// run files and cache keys do not depend on the ephemeral port.
struct StubSession {
  std::unique_ptr<stub::StubServer> server;
  std::string base;

  // Chat model name for a fixture: distinct fixtures never share cached responses.
  static std::string model_for(const fs::path& fixture) {
    return "stub-" + text::sha256_hex(slurp(fixture)).substr(0, 12);
  }

  explicit StubSession(const fs::path& fixture) {
    server = std::make_unique<stub::StubServer>(stub::read_fixture(fixture));
    server->start();
    base = server->base_url();
  }
  ~StubSession() { server->stop(); }

  gateway::HttpPost post() const {
    return [base = base](const std::string& url, const std::string& body,
                         const std::vector<std::pair<std::string, std::string>>& headers, double timeout) {
      std::string target = url;
      if (target.rfind(kStubOrigin, 0) == 0) target = base + target.substr(std::strlen(kStubOrigin));
      return gateway::http_post(target, body, headers, timeout);
    };
  }

  static void configure(gateway::GatewayConfig& cfg, const fs::path& fixture) {
    cfg.chat = {std::string(kStubOrigin) + "/v1/chat/completions", model_for(fixture)};
    cfg.protocol = gateway::ChatProtocol::ChatCompletions;
    cfg.embedding = {std::string(kStubOrigin) + "/v1/embeddings", "stub-embed"};
    cfg.entailment = {std::string(kStubOrigin) + "/entailment", "stub-nli"};
  }
};

struct Options {
  // Shared
  std::string format = "table";
  std::string output;
  bool deterministic = false;
  std::string labels;
  std::string judge = "human";
  std::uint64_t seed = 42;

  // Inputs
  std::string run;
  std::string run_a;
  std::string run_b;
  std::string dataset;
  std::string dataset_name;
  std::string config;
  std::string stub;
  std::string cache_dir;
  std::string fixture;
  std::string cascade_config;
  std::string model_out;

  // Sampling
  int n = 10;
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 40;
  bool greedy = false;
  bool probe = false;
  bool embed = false;
  bool entail = false;
  int workers = 0;

  // Analysis
  std::vector<std::string> methods;
  std::vector<double> thresholds;
  double advisory_scr = 0.05;
  std::string method = "jaccard";
  std::optional<double> threshold;
  std::string alternative = "greater";
  std::size_t bootstrap = 10000;
  bool median_threshold = false;
  std::vector<std::string> pairs;
  std::size_t permutations = 500;
  std::string signal = "b1_mean";
  int folds = 5;
  int bins = 10;
  bool write = false;
  std::string knowledge_cutoff = "2024-01-01";
  std::size_t density_k = 10;
  double lambda = 0.0;

  // serve-stub
  std::string host = "127.0.0.1";
  int port = 8089;
};

void add_output_options(CLI::App* sub, Options& o) {
  sub->add_option("--format", o.format, "Terminal rendering: csv or table")->check(CLI::IsMember({"csv", "table"}));
  sub->add_option("--output", o.output, "Also write the report as CSV to this file");
  sub->add_flag("--deterministic", o.deterministic, "Omit the generation timestamp from the report");
}

void add_label_options(CLI::App* sub, Options& o) {
  sub->add_option("--labels", o.labels, "Label file (one JSON object per line) merged in memory");
  sub->add_option("--judge", o.judge, "Judge recorded for --labels")
      ->check(CLI::IsMember({"human", "gold-template", "llm-judge", "word-overlap"}));
}

void add_signal_options(CLI::App* sub, Options& o) {
  sub->add_option("--knowledge-cutoff", o.knowledge_cutoff, "B3 knowledge date (YYYY-MM-DD)");
  sub->add_option("--density-k", o.density_k, "B2 neighbour count")->check(CLI::PositiveNumber);
  sub->add_option("--lambda", o.lambda, "B3 decay per day (0 selects a one-year half-life)")->check(CLI::NonNegativeNumber);
}

void add_gateway_options(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "Gateway config (JSON)");
  sub->add_option("--stub", o.stub, "Serve this fixture from a built-in stub instead of a real endpoint");
  sub->add_option("--cache-dir", o.cache_dir, "Response cache directory");
  sub->add_option("--workers", o.workers, "Questions processed concurrently (0: max_in_flight)");
}

analysis::SignalOptions signal_options(const Options& o) {
  analysis::SignalOptions s;
  s.knowledge_cutoff = store::parse_date(o.knowledge_cutoff);
  s.density_k = o.density_k;
  s.lambda = o.lambda;
  return s;
}

stats::Alternative parse_alternative(const std::string& s) {
  if (s == "greater") return stats::Alternative::Greater;
  if (s == "less") return stats::Alternative::Less;
  return stats::Alternative::TwoSided;
}

store::Run load_labeled(const Options& o) {
  auto run = load_run(o.run);
  if (!o.labels.empty()) store::merge_labels(run, fs::path(o.labels), store::parse_judge(o.judge));
  return run;
}

gateway::GatewayConfig gateway_config(const Options& o) {
  auto cfg = o.config.empty() ? gateway::GatewayConfig{} : gateway::load_gateway_config(o.config);
  if (!o.stub.empty()) StubSession::configure(cfg, o.stub);
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  cfg.validate();
  return cfg;
}

// Hash of every effective option value plus the contents of config files.
std::string config_hash(const CLI::App* sub, const Options& o) {
  nlohmann::json j;
  for (const auto* opt : sub->get_options()) {
    const auto name = opt->get_name();
    if (name == "--help" || name == "--output" || name == "--format" || name == "--deterministic") continue;
    if (opt->count() > 0) {
      j[name] = opt->results();
    } else {
      j[name] = opt->get_default_str();
    }
  }
  for (const auto& f : {o.config, o.cascade_config}) {
    if (!f.empty()) j["file:" + f] = text::sha256_hex(slurp(f));
  }
  return text::sha256_hex(j.dump()).substr(0, 16);
}

void emit(report::Report& r, const Options& o, std::ostream& out) {
  out << report::render(r, report::parse_format(o.format));
  if (!o.output.empty()) {
    const fs::path p(o.output);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw PreconditionError("cannot write " + o.output);
    f << report::render_csv(r);
  }
}

int sampling_exit(const sampling::SamplingReport& rep, std::ostream& err) {
  for (const auto& f : rep.failures) err << "question " << f.question_id << " failed: " << f.message << '\n';
  if (!rep.partial()) return kExitOk;
  // Nothing got through at all: report the transport failure rather than partial progress.
  return rep.completed == 0 && rep.skipped == 0 ? kExitTransport : kExitPartial;
}

report::Report sampling_report(const std::string& command, const sampling::SamplingReport& rep) {
  report::Report r;
  r.command = command;
  auto& t = r.table("sampling", {"metric", "value"});
  using report::cell;
  t.add({cell("questions"), cell(rep.questions)});
  t.add({cell("completed"), cell(rep.completed)});
  t.add({cell("already_complete"), cell(rep.skipped)});
  t.add({cell("failed"), cell(rep.failures.size())});
  t.add({cell("network_calls"), cell(rep.gateway.network_calls)});
  t.add({cell("cache_hits"), cell(rep.gateway.cache_hits)});
  t.add({cell("retries"), cell(rep.gateway.retries)});
  if (!rep.failures.empty()) {
    auto& f = r.table("failures", {"question_id", "message"});
    for (const auto& x : rep.failures) f.add({cell(x.question_id), cell(x.message)});
  }
  return r;
}

int exit_code_for(const Error& e) { return e.kind() == ErrorKind::Transport ? kExitTransport : kExitData; }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semantic-collapse diagnostics for language-model uncertainty", "scrkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", SCRKIT_VERSION);

  Options o;
  std::map<CLI::App*, std::function<int(CLI::App*, report::Report&)>> actions;
  // Extra provenance entries: input files whose bytes are hashed.
  std::map<CLI::App*, std::vector<std::pair<std::string, const std::string*>>> inputs;
  std::map<CLI::App*, bool> seeded;

  // sample
  auto* sample = app.add_subcommand("sample", "Draw N samples per question into a run file (resumable)");
  sample->add_option("--dataset", o.dataset, "Questions, one JSON object per line")->required();
  sample->add_option("--run", o.run, "Run file to create or resume")->required();
  sample->add_option("--dataset-name", o.dataset_name, "Name recorded in the manifest (default: file stem)");
  add_gateway_options(sample, o);
  sample->add_option("-n", o.n, "Samples per question")->check(CLI::PositiveNumber);
  sample->add_option("--temperature", o.temperature, "Sampling temperature")->check(CLI::NonNegativeNumber);
  sample->add_option("--top-p", o.top_p, "Nucleus mass; below 1 selects nucleus sampling")->check(CLI::Range(0.0, 1.0));
  sample->add_option("--max-tokens", o.max_tokens, "Tokens per sample")->check(CLI::PositiveNumber);
  sample->add_flag("--greedy", o.greedy, "Also decode greedily with token logprobs (B1)");
  sample->add_flag("--probe", o.probe, "Also ask the P(True) probe");
  sample->add_flag("--embed", o.embed, "Also embed question, samples, greedy answer and entities");
  sample->add_flag("--entail", o.entail, "Also score pairwise entailment and gold grounding");
  sample->add_option("--seed", o.seed, "Run seed (overrides the config's run_seed)");
  add_output_options(sample, o);
  inputs[sample] = {{"dataset", &o.dataset}, {"stub_fixture", &o.stub}};
  seeded[sample] = true;
  actions[sample] = [&](CLI::App* self, report::Report& r) {
    RunLock lock(o.run);
    const auto questions = store::read_questions(o.dataset);
    sampling::SamplingOptions so;
    so.n = o.n;
    so.decoding.mode = o.top_p < 1.0 ? store::DecodingMode::Nucleus : store::DecodingMode::Temperature;
    so.decoding.temperature = o.temperature;
    so.decoding.top_p = o.top_p;
    so.decoding.max_tokens = o.max_tokens;
    so.greedy = o.greedy;
    so.probe = o.probe;
    so.embed = o.embed;
    so.entail = o.entail;
    so.workers = o.workers;
    so.deterministic = o.deterministic;
    so.dataset_name = o.dataset_name.empty() ? fs::path(o.dataset).stem().string() : o.dataset_name;
    auto cfg = gateway_config(o);
    // The run seed lives in the gateway config; --seed replaces it.
    if (self->count("--seed") > 0) cfg.run_seed = o.seed;
    o.seed = cfg.run_seed;
    const auto rep = [&] {
      if (!o.stub.empty()) {
        StubSession session(o.stub);
        gateway::Gateway gw(cfg, session.post());
        return sampling::run_sampling(questions, gw, so, o.run);
      }
      gateway::Gateway gw(cfg);
      return sampling::run_sampling(questions, gw, so, o.run);
    }();
    r = sampling_report("sample", rep);
    return sampling_exit(rep, err);
  };

  // embed / entail: enrich an existing run with the manifest's settings
  auto enrich = [&](const char* name, const char* help, bool embed) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--run", o.run, "Run file to enrich")->required();
    add_gateway_options(sub, o);
    add_output_options(sub, o);
    actions[sub] = [&o, &err, embed, name](CLI::App*, report::Report& r) {
      RunLock lock(o.run);
      const auto existing = load_run(o.run);
      std::vector<store::QuestionRecord> questions;
      for (const auto& [id, q] : existing.questions) questions.push_back(q.question);
      sampling::SamplingOptions so;
      so.n = existing.manifest.n;
      so.decoding = existing.manifest.decoding;
      so.embed = embed;
      so.entail = !embed;
      so.workers = o.workers;
      so.deterministic = existing.manifest.created_at.empty();
      so.dataset_name = existing.manifest.dataset_name;
      so.run_id = existing.manifest.run_id;
      auto cfg = gateway_config(o);
      cfg.run_seed = static_cast<std::uint64_t>(existing.manifest.decoding.seed);
      cfg.chat.model = existing.manifest.model_name;
      sampling::SamplingReport rep;
      if (!o.stub.empty()) {
        StubSession session(o.stub);
        gateway::Gateway gw(cfg, session.post());
        rep = sampling::run_sampling(questions, gw, so, o.run);
      } else {
        gateway::Gateway gw(cfg);
        rep = sampling::run_sampling(questions, gw, so, o.run);
      }
      r = sampling_report(name, rep);
      return sampling_exit(rep, err);
    };
  };
  enrich("embed", "Add embeddings to an existing run", true);
  enrich("entail", "Add pairwise entailment and gold grounding to an existing run", false);

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Single-cluster rate, cluster counts and entropy per method");
  diag->add_option("--run", o.run, "Run file")->required();
  diag->add_option("--methods", o.methods, "jaccard, embedding, entailment (comma separated)")->delimiter(',');
  diag->add_option("--thresholds", o.thresholds, "Similarity thresholds to sweep (comma separated)")->delimiter(',');
  diag->add_option("--advisory-scr", o.advisory_scr, "SCR above which the advisory is printed")->check(CLI::Range(0.0, 1.0));
  add_output_options(diag, o);
  actions[diag] = [&](CLI::App*, report::Report& r) {
    analysis::DiagnoseOptions d;
    if (!o.methods.empty()) {
      d.methods.clear();
      for (const auto& m : o.methods) d.methods.push_back(clustering::parse_method(m));
    }
    d.thresholds = o.thresholds;
    d.advisory_scr = o.advisory_scr;
    r = analysis::diagnose(load_run(o.run), d);
    return kExitOk;
  };

  // compare
  auto* cmp = app.add_subcommand("compare", "Compare cluster counts of two runs on the same questions");
  cmp->add_option("--run-a", o.run_a, "First run file")->required();
  cmp->add_option("--run-b", o.run_b, "Second run file")->required();
  cmp->add_option("--method", o.method, "Clustering method")->check(CLI::IsMember({"jaccard", "embedding", "entailment"}));
  cmp->add_option("--threshold", o.threshold, "Similarity threshold (default: the method's default)");
  cmp->add_option("--alternative", o.alternative, "Wilcoxon alternative for NC(A) - NC(B)")
      ->check(CLI::IsMember({"greater", "less", "two-sided"}));
  add_output_options(cmp, o);
  inputs[cmp] = {{"run_a", &o.run_a}, {"run_b", &o.run_b}};
  actions[cmp] = [&](CLI::App*, report::Report& r) {
    analysis::CompareOptions c;
    c.method = clustering::parse_method(o.method);
    c.threshold = o.threshold;
    c.alternative = parse_alternative(o.alternative);
    r = analysis::compare(load_run(o.run_a), load_run(o.run_b), "A", "B", c);
    return kExitOk;
  };

  // baselines
  auto* base = app.add_subcommand("baselines", "AUROC of uncertainty baselines with bootstrap CIs and DeLong tests");
  base->add_option("--run", o.run, "Run file")->required();
  add_label_options(base, o);
  base->add_option("--methods", o.methods, "Signal columns to score (comma separated)")->delimiter(',');
  base->add_option("--bootstrap", o.bootstrap, "Bootstrap resamples")->check(CLI::PositiveNumber);
  base->add_option("--seed", o.seed, "Bootstrap seed");
  add_signal_options(base, o);
  add_output_options(base, o);
  seeded[base] = true;
  actions[base] = [&](CLI::App*, report::Report& r) {
    analysis::BaselineOptions b;
    b.methods = o.methods;
    b.bootstrap.resamples = o.bootstrap;
    b.bootstrap.seed = o.seed;
    b.signal = signal_options(o);
    r = analysis::baselines(load_labeled(o), b);
    return kExitOk;
  };

  // cascade
  auto* cas = app.add_subcommand("cascade", "Evaluate the boundary cascade on a labeled run");
  cas->add_option("--run", o.run, "Run file")->required();
  cas->add_option("--cascade-config", o.cascade_config, "Cascade stages (JSON); default: every boundary present");
  cas->add_flag("--median-threshold", o.median_threshold, "Single median threshold per stage instead of quartiles");
  add_label_options(cas, o);
  add_signal_options(cas, o);
  add_output_options(cas, o);
  inputs[cas] = {{"run", &o.run}, {"cascade_config", &o.cascade_config}};
  actions[cas] = [&](CLI::App*, report::Report& r) {
    analysis::CascadeOptions c;
    if (!o.cascade_config.empty()) c.spec = cascade::parse_cascade_spec(o.cascade_config);
    c.mode = o.median_threshold ? cascade::ThresholdMode::Median : cascade::ThresholdMode::Quartiles;
    c.signal = signal_options(o);
    r = analysis::cascade_report(load_labeled(o), c);
    return kExitOk;
  };

  // independence
  auto* ind = app.add_subcommand("independence", "Pairwise dependence between boundary signals");
  ind->add_option("--run", o.run, "Run file")->required();
  ind->add_option("--pairs", o.pairs, "Signal pairs as x:y (comma separated)")->delimiter(',');
  ind->add_option("--permutations", o.permutations, "Permutations per test")->check(CLI::PositiveNumber);
  ind->add_option("--seed", o.seed, "Permutation seed");
  add_signal_options(ind, o);
  add_output_options(ind, o);
  seeded[ind] = true;
  actions[ind] = [&](CLI::App*, report::Report& r) {
    analysis::IndependenceOptions i;
    for (const auto& p : o.pairs) {
      const auto colon = p.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == p.size()) {
        throw PreconditionError("--pairs expects x:y, got '" + p + "'");
      }
      i.pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
    }
    i.permutations.permutations = o.permutations;
    i.permutations.seed = o.seed;
    i.signal = signal_options(o);
    r = analysis::independence(load_run(o.run), i);
    return kExitOk;
  };

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Platt scaling, reliability and risk-coverage for one signal");
  cal->add_option("--run", o.run, "Run file")->required();
  cal->add_option("--signal", o.signal, "Signal column");
  cal->add_option("--folds", o.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  cal->add_option("--bins", o.bins, "Reliability bins")->check(CLI::PositiveNumber);
  cal->add_option("--seed", o.seed, "Fold assignment seed");
  add_label_options(cal, o);
  add_signal_options(cal, o);
  add_output_options(cal, o);
  seeded[cal] = true;
  actions[cal] = [&](CLI::App*, report::Report& r) {
    analysis::CalibrateOptions c;
    c.signal = o.signal;
    c.folds = o.folds;
    c.bins = o.bins;
    c.seed = o.seed;
    c.signal_options = signal_options(o);
    r = analysis::calibrate(load_labeled(o), c);
    return kExitOk;
  };

  // train-pointer
  auto* ptr = app.add_subcommand("train-pointer", "Fit the logistic pointer model on entropy and text features");
  ptr->add_option("--run", o.run, "Run file")->required();
  ptr->add_option("--folds", o.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  ptr->add_option("--seed", o.seed, "Fold assignment seed");
  ptr->add_option("--model-out", o.model_out, "Write the fitted model (plain text) here");
  add_label_options(ptr, o);
  add_output_options(ptr, o);
  seeded[ptr] = true;
  actions[ptr] = [&](CLI::App*, report::Report& r) {
    analysis::PointerOptions p;
    p.folds = o.folds;
    p.seed = o.seed;
    auto res = analysis::train_pointer(load_labeled(o), p);
    if (!o.model_out.empty()) {
      std::ofstream f(o.model_out, std::ios::binary | std::ios::trunc);
      if (!f) throw PreconditionError("cannot write " + o.model_out);
      f << pointer::serialize(res.model);
    }
    r = std::move(res.report);
    return kExitOk;
  };

  // signals
  auto* sig = app.add_subcommand("signals", "Per-question signal table");
  sig->add_option("--run", o.run, "Run file")->required();
  sig->add_flag("--write", o.write, "Store the values in the run file as signal records");
  add_label_options(sig, o);
  add_signal_options(sig, o);
  add_output_options(sig, o);
  actions[sig] = [&](CLI::App* self, report::Report& r) {
    std::optional<RunLock> lock;
    if (o.write) lock.emplace(o.run);
    auto run = load_labeled(o);
    const auto so = signal_options(o);
    r = analysis::signals_report(run, so);
    if (o.write) {
      const auto table = analysis::compute_signals(run, so);
      const auto hash = config_hash(self, o);
      auto stored = load_run(o.run);
      for (std::size_t i = 0; i < table.question_ids.size(); ++i) {
        auto* q = stored.find(table.question_ids[i]);
        q->signals.clear();
        for (const auto& c : analysis::signal_columns()) {
          if (const auto& v = table.values.at(c)[i]) q->signals.push_back({q->question.question_id, c, *v, hash});
        }
      }
      save_run(stored, o.run);
    }
    return kExitOk;
  };

  // label
  auto* lab = app.add_subcommand("label", "Attach labels to a run file");
  lab->add_option("--run", o.run, "Run file")->required();
  lab->add_option("--labels", o.labels, "Label file (one JSON object per line)")->required();
  lab->add_option("--judge", o.judge, "Judge recorded for every label")
      ->check(CLI::IsMember({"human", "gold-template", "llm-judge", "word-overlap"}));
  add_output_options(lab, o);
  inputs[lab] = {{"run", &o.run}, {"labels", &o.labels}};
  actions[lab] = [&](CLI::App*, report::Report& r) {
    RunLock lock(o.run);
    auto run = load_run(o.run);
    const auto counts = store::merge_labels(run, fs::path(o.labels), store::parse_judge(o.judge));
    save_run(run, o.run);
    r.command = "label";
    using report::cell;
    auto& t = r.table("labels", {"metric", "value"});
    t.add({cell("labels_merged"), cell(counts.labels)});
    t.add({cell("judge"), cell(o.judge)});
    return kExitOk;
  };

  // validate
  auto* val = app.add_subcommand("validate", "Check a run file's invariants");
  val->add_option("--run", o.run, "Run file")->required();
  add_output_options(val, o);
  actions[val] = [&](CLI::App*, report::Report& r) {
    const auto run = load_run(o.run);
    const auto violations = store::validate_run(run);
    const auto counts = run.counts();
    r.command = "validate";
    using report::cell;
    auto& s = r.table("summary", {"metric", "value"});
    s.add({cell("questions"), cell(counts.questions)});
    s.add({cell("samples"), cell(counts.samples)});
    s.add({cell("labels"), cell(counts.labels)});
    s.add({cell("violations"), cell(violations.size())});
    auto& v = r.table("violations", {"locator", "message"});
    for (const auto& x : violations) v.add({cell(x.locator), cell(x.message)});
    return violations.empty() ? kExitOk : kExitData;
  };

  // serve-stub
  auto* srv = app.add_subcommand("serve-stub", "Serve a fixture over HTTP with the gateway's wire shapes");
  srv->add_option("--fixture", o.fixture, "Stub fixture (one JSON object per line)")->required();
  srv->add_option("--host", o.host, "Bind address");
  srv->add_option("--port", o.port, "Port")->check(CLI::Range(1, 65535));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (srv->parsed()) {
      stub::StubServer server(stub::read_fixture(o.fixture));
      out << "serving " << o.fixture << " on http://" << o.host << ':' << o.port << std::endl;
      server.listen(o.host, o.port);
      return kExitOk;
    }
    CLI::App* sub = app.get_subcommands().front();
    report::Report r;
    const int code = actions.at(sub)(sub, r);

    // Provenance: everything needed to reproduce the report.
    std::string invocation = "scrkit";
    for (const auto& a : args) invocation += " " + quote_arg(a);
    std::vector<std::pair<std::string, std::string>> prov = {
        {"version", SCRKIT_VERSION}, {"command", sub->get_name()}, {"invocation", invocation},
        {"config_hash", config_hash(sub, o)}};
    auto files = inputs.count(sub) ? inputs.at(sub) : std::vector<std::pair<std::string, const std::string*>>{};
    if (files.empty()) files.push_back({"run", &o.run});
    if (!o.labels.empty() && sub != lab) files.push_back({"labels", &o.labels});
    for (const auto& [key, path] : files) {
      if (!path->empty() && fs::exists(*path)) prov.emplace_back(key + "_sha256", text::sha256_hex(slurp(*path)));
    }
    if (seeded.count(sub)) prov.emplace_back("seed", std::to_string(o.seed));
    if (!o.deterministic) prov.emplace_back("generated_at", utc_now());
    r.provenance.insert(r.provenance.begin(), prov.begin(), prov.end());
    emit(r, o, out);
    return code;
  } catch (const Error& e) {
    err << "scrkit: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "scrkit: file error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "scrkit: unexpected error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace scrkit::cli
