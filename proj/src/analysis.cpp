#include "scrkit/analysis.hpp"

#include "scrkit/boundary.hpp"
#include "scrkit/signals.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace scrkit::analysis {

using clustering::Method;
using report::cell;
using report::Cell;

namespace {

const char* kOracleNote = "b5 uses gold references (oracle mode); it is not available at inference time.";

std::string percent(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << v * 100.0 << "%";
  return os.str();
}

std::string join(const std::vector<std::string>& v, const std::string& sep = ", ") {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : sep) + s;
  return out;
}

std::vector<std::vector<double>> embeddings_of(const store::Run& run, const store::QuestionData& q,
                                               store::EmbeddingTarget target) {
  std::vector<std::pair<int, const std::vector<double>*>> found;
  for (const auto& e : q.embeddings)
    if (e.target == target) found.emplace_back(e.sample_index, &e.vector);
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  if (target == store::EmbeddingTarget::Sample) {
    // Keep only embeddings of the stochastic samples, in sample order.
    const auto& samples = run.stochastic_samples(q);
    if (found.size() < samples.size()) return {};
    std::vector<std::vector<double>> out;
    for (const auto& s : samples) {
      auto it = std::find_if(found.begin(), found.end(), [&](const auto& f) { return f.first == s.sample_index; });
      if (it == found.end()) return {};
      out.push_back(*it->second);
    }
    return out;
  }
  std::vector<std::vector<double>> out;
  for (const auto& f : found) out.push_back(*f.second);
  return out;
}

std::vector<std::string> sample_texts(const store::Run& run, const store::QuestionData& q) {
  std::vector<std::string> out;
  for (const auto& s : run.stochastic_samples(q)) out.push_back(s.text);
  return out;
}

double default_threshold(Method m) {
  switch (m) {
    case Method::Jaccard: return clustering::kDefaultJaccardThreshold;
    case Method::Embedding: return clustering::kDefaultEmbeddingThreshold;
    case Method::Entailment: return clustering::kDefaultEntailmentThreshold;
  }
  return 0.0;
}

std::string assignment_string(const std::vector<int>& labels) {
  std::string out;
  for (int l : labels) out += (out.empty() ? "" : " ") + std::to_string(l);
  return out;
}

struct Labeled {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::size_t> rows;
  bool two_classes() const {
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    return pos > 0 && pos < static_cast<long>(labels.size());
  }
};

Labeled labeled_column(const SignalTable& t, const std::string& column, const std::vector<bool>* mask = nullptr) {
  Labeled out;
  const auto& col = t.column(column);
  for (std::size_t i = 0; i < col.size(); ++i) {
    if (!col[i] || !t.labels[i] || (mask && !(*mask)[i])) continue;
    out.scores.push_back(*col[i]);
    out.labels.push_back(*t.labels[i]);
    out.rows.push_back(i);
  }
  return out;
}

void require_labels(const SignalTable& t) {
  if (t.labeled() == 0) {
    throw PreconditionError(
        "the run has no correct/incorrect labels; attach them with --labels FILE or `scrkit label --run RUN "
        "--labels FILE`");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Signal table

std::vector<std::string> signal_columns() {
  return {"b1_mean",       "b1_max",       "b1_std",       "b1_hi_ratio", "b1_first",     "b1_last_quarter",
          "se_jaccard",    "nc_jaccard",   "at_jaccard",   "se_embedding", "nc_embedding", "at_embedding",
          "se_entailment", "nc_entailment", "at_entailment", "sindex",     "selfcheck",    "ptrue",
          "b2",            "b3",           "b4",           "b5"};
}

std::vector<std::string> baseline_columns() {
  return {"b1_mean", "b1_max", "b1_std", "b1_hi_ratio", "se_jaccard", "se_embedding", "se_entailment",
          "sindex",  "selfcheck", "ptrue"};
}

std::string signal_hint(const std::string& column) {
  if (column.rfind("b1", 0) == 0) {
    return "'" + column + "' needs greedy responses with token logprobs: run `scrkit sample --greedy`";
  }
  if (column.find("jaccard") != std::string::npos) return "'" + column + "' needs sampled responses: run `scrkit sample`";
  if (column.find("embedding") != std::string::npos || column == "sindex") {
    return "'" + column + "' needs sample embeddings: run `scrkit embed --run RUN --config GATEWAY`";
  }
  if (column.find("entailment") != std::string::npos) {
    return "'" + column + "' needs pairwise entailment: run `scrkit entail --run RUN --config GATEWAY`";
  }
  if (column == "selfcheck") {
    return "'selfcheck' needs greedy and sample embeddings: run `scrkit sample --greedy` then `scrkit embed`";
  }
  if (column == "ptrue") return "'ptrue' needs the P(True) probe: run `scrkit sample --probe`";
  if (column == "b2") return "'b2' needs question embeddings: run `scrkit embed --run RUN --config GATEWAY`";
  if (column == "b3") return "'b3' is computed from question text and timestamps";
  if (column == "b4") return "'b4' needs entity embeddings (questions with two capitalized entities): run `scrkit embed`";
  if (column == "b5") {
    return "'b5' needs gold answers and grounding scores: run `scrkit entail --run RUN --config GATEWAY`";
  }
  return "unknown signal '" + column + "'; known signals: " + join(signal_columns());
}

bool SignalTable::has(const std::string& c) const {
  const auto it = values.find(c);
  return it != values.end() && std::any_of(it->second.begin(), it->second.end(), [](const auto& v) { return v.has_value(); });
}

const std::vector<std::optional<double>>& SignalTable::column(const std::string& name) const {
  const auto it = values.find(name);
  if (it == values.end()) throw PreconditionError(signal_hint(name));
  return it->second;
}

std::size_t SignalTable::labeled() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); }));
}

std::optional<int> label_value(const store::Run& run, const store::QuestionData& q) {
  const auto l = run.best_label(q);
  if (!l || l->label == store::Label::Ambiguous) return std::nullopt;
  return l->label == store::Label::Incorrect ? 1 : 0;
}

std::vector<clustering::QuestionSimilarity> similarities(const store::Run& run, Method method) {
  std::vector<clustering::QuestionSimilarity> out;
  for (const auto& [qid, q] : run.questions) {
    const auto& samples = run.stochastic_samples(q);
    if (samples.empty()) continue;
    clustering::QuestionSimilarity qs;
    qs.question_id = qid;
    qs.method = method;
    switch (method) {
      case Method::Jaccard: qs.sim = clustering::jaccard_matrix(sample_texts(run, q)); break;
      case Method::Embedding: {
        const auto e = embeddings_of(run, q, store::EmbeddingTarget::Sample);
        if (e.empty()) {
          throw PreconditionError("question '" + qid + "' has no sample embeddings; " + signal_hint("se_embedding"));
        }
        qs.sim = clustering::cosine_matrix(e);
        break;
      }
      case Method::Entailment: {
        if (!q.entailment || q.entailment->directional.size() != samples.size()) {
          throw PreconditionError("question '" + qid + "' has no entailment matrix; " + signal_hint("se_entailment"));
        }
        qs.sim = clustering::entailment_pair_scores(q.entailment->directional);
        break;
      }
    }
    out.push_back(std::move(qs));
  }
  return out;
}

SignalTable compute_signals(const store::Run& run, const SignalOptions& options) {
  SignalTable t;
  for (const auto& c : signal_columns()) t.values[c];
  const double median_h = signals::run_median_entropy(run);
  const double lambda = options.lambda > 0.0 ? options.lambda : boundary::kDefaultLambda;
  const auto lexicon = options.lexicon.empty() ? boundary::default_temporal_lexicon() : options.lexicon;

  boundary::EmbeddingPool pool;
  for (const auto& [qid, q] : run.questions) {
    const auto e = embeddings_of(run, q, store::EmbeddingTarget::Question);
    if (!e.empty()) pool.add(qid, e.front());
  }

  auto put = [&](const std::string& c, std::optional<double> v) { t.values[c].push_back(v); };

  for (const auto& [qid, q] : run.questions) {
    t.question_ids.push_back(qid);
    t.labels.push_back(label_value(run, q));

    // B1 token entropy on the greedy response.
    const auto* greedy = run.greedy(q);
    if (greedy && greedy->token_logprobs) {
      const auto f = signals::entropy_features(*greedy, median_h);
      put("b1_mean", f.mean);
      put("b1_max", f.max);
      put("b1_std", f.std);
      put("b1_hi_ratio", f.hi_ratio);
      put("b1_first", f.first_token);
      put("b1_last_quarter", f.last_quartile_mean);
    } else {
      for (const char* c : {"b1_mean", "b1_max", "b1_std", "b1_hi_ratio", "b1_first", "b1_last_quarter"}) put(c, {});
    }

    // Sampling-based scores per clustering method.
    const auto texts = sample_texts(run, q);
    const auto sample_emb = embeddings_of(run, q, store::EmbeddingTarget::Sample);
    auto cluster_cols = [&](const std::string& suffix, std::optional<clustering::ClusterAssignment> a) {
      if (!a) {
        put("se_" + suffix, {});
        put("nc_" + suffix, {});
        put("at_" + suffix, {});
        return;
      }
      put("se_" + suffix, signals::semantic_entropy(*a).se);
      put("nc_" + suffix, static_cast<double>(a->num_clusters));
      put("at_" + suffix, signals::alignment_tax(*a).value);
    };
    cluster_cols("jaccard", texts.empty() ? std::nullopt
                                          : std::optional(clustering::cluster_jaccard(texts, options.jaccard_tau)));
    cluster_cols("embedding", sample_emb.empty() ? std::nullopt
                                                 : std::optional(clustering::cluster_agglomerative(
                                                       sample_emb, options.embedding_tau)));
    std::optional<clustering::ClusterAssignment> ent;
    if (q.entailment && !texts.empty() && q.entailment->directional.size() == texts.size()) {
      ent = clustering::cluster_from_similarity(
          {qid, Method::Entailment, clustering::entailment_pair_scores(q.entailment->directional)},
          options.entailment_tau);
    }
    cluster_cols("entailment", ent);

    put("sindex", sample_emb.empty() ? std::nullopt : std::optional(signals::sindex(sample_emb)));
    const auto greedy_emb = embeddings_of(run, q, store::EmbeddingTarget::Greedy);
    put("selfcheck", greedy_emb.empty() || sample_emb.empty()
                         ? std::nullopt
                         : std::optional(signals::selfcheck_score(greedy_emb.front(), sample_emb).score));

    std::optional<double> ptrue;
    if (q.probe && q.probe->available) {
      try {
        ptrue = signals::ptrue_score(*q.probe).uncertainty();
      } catch (const AmbiguousProbeError&) {
        ++t.ambiguous_probes;
      }
    }
    put("ptrue", ptrue);

    // B2: one minus mean cosine to the nearest other questions.
    std::optional<double> b2;
    const auto q_emb = embeddings_of(run, q, store::EmbeddingTarget::Question);
    if (!q_emb.empty() && pool.size() >= 2) {
      const auto k = std::min(options.density_k, pool.size() - 1);
      b2 = 1.0 - boundary::b2_density(q_emb.front(), pool, k, qid).rho;
    }
    put("b2", b2);

    // B3: decayed freshness, counted only when the question carries a temporal cue.
    double freshness = 1.0;
    if (q.question.timestamp_query && store::format_date(*q.question.timestamp_query) >=
                                          store::format_date(options.knowledge_cutoff)) {
      freshness = boundary::b3_freshness(options.knowledge_cutoff, *q.question.timestamp_query, lambda).freshness;
    }
    const auto trig = boundary::b3_trigger(q.question.text, options.knowledge_cutoff, lexicon);
    put("b3", trig.triggered ? 1.0 - freshness : 0.0);

    const auto ea = embeddings_of(run, q, store::EmbeddingTarget::EntityA);
    const auto eb = embeddings_of(run, q, store::EmbeddingTarget::EntityB);
    put("b4", ea.empty() || eb.empty() ? std::nullopt : std::optional(boundary::b4_rupture(ea.front(), eb.front()).score));

    put("b5", q.grounding && !q.grounding->reference_scores.empty()
                  ? std::optional(boundary::grounding_from_scores(q.grounding->reference_scores).uncertainty())
                  : std::nullopt);
  }
  return t;
}

report::Report signals_report(const store::Run& run, const SignalOptions& options) {
  const auto t = compute_signals(run, options);
  report::Report r;
  r.command = "signals";
  auto cols = signal_columns();
  std::vector<std::string> header = {"question_id", "label"};
  header.insert(header.end(), cols.begin(), cols.end());
  auto& tab = r.table("signals", header);
  for (std::size_t i = 0; i < t.question_ids.size(); ++i) {
    std::vector<Cell> row = {cell(t.question_ids[i]), t.labels[i] ? cell(*t.labels[i]) : Cell()};
    for (const auto& c : cols) row.push_back(cell(t.values.at(c)[i]));
    tab.add(std::move(row));
  }
  if (t.ambiguous_probes) r.notes.push_back(std::to_string(t.ambiguous_probes) + " P(True) probe(s) were ambiguous");
  if (t.has("b5")) r.notes.push_back(kOracleNote);
  return r;
}

// ---------------------------------------------------------------------------
// diagnose

report::Report diagnose(const store::Run& run, const DiagnoseOptions& options) {
  if (options.methods.empty()) throw PreconditionError("diagnose needs at least one clustering method");
  report::Report r;
  r.command = "diagnose";
  auto& summary = r.table("summary", {"method", "threshold", "questions", "single_cluster", "scr", "mean_nc", "mean_se",
                                      "mean_at", "advisory"});
  auto& hist = r.table("cluster_histogram", {"method", "threshold", "clusters", "questions"});
  auto& per_q = r.table("per_question", {"question_id", "method", "threshold", "clusters", "se", "at", "assignment"});

  for (const auto m : options.methods) {
    const auto sims = similarities(run, m);
    if (sims.empty()) throw PreconditionError("the run has no sampled responses; run `scrkit sample` first");
    std::vector<double> thresholds = options.thresholds;
    if (thresholds.empty()) thresholds.push_back(default_threshold(m));
    for (const double tau : thresholds) {
      std::vector<clustering::ClusterAssignment> assigns;
      double se_sum = 0.0, at_sum = 0.0;
      for (const auto& qs : sims) {
        auto a = clustering::cluster_from_similarity(qs, tau);
        const double se = signals::semantic_entropy(a).se;
        const double at = signals::alignment_tax(a).value;
        se_sum += se;
        at_sum += at;
        per_q.add({cell(qs.question_id), cell(clustering::to_string(m)), cell(tau), cell(a.num_clusters), cell(se),
                   cell(at), cell(assignment_string(a.labels))});
        assigns.push_back(std::move(a));
      }
      const auto st = clustering::homogenization_stats(assigns);
      const double n = static_cast<double>(st.questions);
      const auto single = st.histogram.count(1) ? st.histogram.at(1) : 0;
      const bool advise = st.scr > options.advisory_scr;
      summary.add({cell(clustering::to_string(m)), cell(tau), cell(st.questions), cell(single), cell(st.scr),
                   cell(st.mean_nc), cell(se_sum / n), cell(at_sum / n), cell(advise ? "yes" : "no")});
      for (const auto& [clusters, count] : st.histogram) {
        hist.add({cell(clustering::to_string(m)), cell(tau), cell(clusters), cell(count)});
      }
      if (advise) {
        std::ostringstream tau_s;
        tau_s << tau;
        r.notes.push_back(clustering::to_string(m) + " at threshold " + tau_s.str() + ": SCR " + percent(st.scr) +
                          " exceeds " + percent(options.advisory_scr) +
                          "; sampling-based uncertainty is unreliable on this run, so prefer token-entropy (B1) "
                          "scoring.");
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// compare

report::Report compare(const store::Run& a, const store::Run& b, const std::string& name_a, const std::string& name_b,
                       const CompareOptions& options) {
  std::vector<std::string> only_a, only_b;
  for (const auto& [id, q] : a.questions)
    if (!b.questions.count(id)) only_a.push_back(id);
  for (const auto& [id, q] : b.questions)
    if (!a.questions.count(id)) only_b.push_back(id);
  if (!only_a.empty() || !only_b.empty()) {
    throw AlignmentError("runs cover different questions; only in " + name_a + ": [" + join(only_a) + "]; only in " +
                         name_b + ": [" + join(only_b) + "]");
  }
  const double tau = options.threshold.value_or(default_threshold(options.method));
  auto measure = [&](const store::Run& run) {
    std::map<std::string, std::pair<int, double>> out;  // clusters, SE
    for (const auto& qs : similarities(run, options.method)) {
      const auto asg = clustering::cluster_from_similarity(qs, tau);
      out[qs.question_id] = {asg.num_clusters, signals::semantic_entropy(asg).se};
    }
    return out;
  };
  const auto ma = measure(a);
  const auto mb = measure(b);
  std::vector<std::string> ids;
  for (const auto& [id, v] : ma)
    if (mb.count(id)) ids.push_back(id);
  if (ids.empty()) throw PreconditionError("the runs share no question with sampled responses");

  report::Report r;
  r.command = "compare";
  auto& runs = r.table("runs", {"run", "method", "threshold", "questions", "scr", "mean_nc", "mean_se"});
  std::vector<double> diffs;
  double nc_a = 0, nc_b = 0, se_a = 0, se_b = 0, single_a = 0, single_b = 0;
  auto& per_q = r.table("per_question", {"question_id", "clusters_a", "clusters_b", "difference"});
  for (const auto& id : ids) {
    const auto [ca, sa] = ma.at(id);
    const auto [cb, sb] = mb.at(id);
    nc_a += ca;
    nc_b += cb;
    se_a += sa;
    se_b += sb;
    single_a += ca == 1;
    single_b += cb == 1;
    diffs.push_back(static_cast<double>(ca - cb));
    per_q.add({cell(id), cell(ca), cell(cb), cell(ca - cb)});
  }
  const double n = static_cast<double>(ids.size());
  const auto method = clustering::to_string(options.method);
  runs.add({cell(name_a), cell(method), cell(tau), cell(ids.size()), cell(single_a / n), cell(nc_a / n), cell(se_a / n)});
  runs.add({cell(name_b), cell(method), cell(tau), cell(ids.size()), cell(single_b / n), cell(nc_b / n), cell(se_b / n)});

  auto& test = r.table("wilcoxon", {"delta_nc", "alternative", "statistic", "p_value", "n_used", "method", "status"});
  const char* alt = options.alternative == stats::Alternative::Greater ? "greater"
                    : options.alternative == stats::Alternative::Less  ? "less"
                                                                       : "two-sided";
  try {
    const auto w = stats::wilcoxon_signed_rank(diffs, options.alternative);
    test.add({cell((nc_a - nc_b) / n), cell(alt), cell(w.estimate), cell(w.p_value), cell(w.extra.at("n_used")),
              cell(w.method), cell("ok")});
  } catch (const DegenerateInputError& e) {
    test.add({cell((nc_a - nc_b) / n), cell(alt), Cell(), Cell(), cell(0), cell("Wilcoxon signed-rank"),
              cell(std::string("degenerate: ") + e.what())});
    r.notes.push_back("Wilcoxon test is degenerate: every per-question cluster-count difference is zero.");
  }
  return r;
}

// ---------------------------------------------------------------------------
// baselines

report::Report baselines(const store::Run& run, const BaselineOptions& options) {
  const auto t = compute_signals(run, options.signal);
  require_labels(t);
  std::vector<std::string> methods = options.methods;
  report::Report r;
  r.command = "baselines";
  if (methods.empty()) {
    for (const auto& c : baseline_columns()) {
      if (t.has(c)) {
        methods.push_back(c);
      } else {
        r.notes.push_back("skipped " + signal_hint(c));
      }
    }
    if (methods.empty()) throw PreconditionError("no baseline signal is available in this run; " + signal_hint("b1_mean"));
  } else {
    for (const auto& m : methods) {
      if (!t.values.count(m) || !t.has(m)) throw PreconditionError("missing signal column: " + signal_hint(m));
    }
  }

  auto& tab = r.table("auroc", {"method", "n", "n_incorrect", "auroc", "ci_low", "ci_high", "ci_method", "seed"});
  std::vector<std::string> scored;
  for (const auto& m : methods) {
    const auto d = labeled_column(t, m);
    const auto pos = static_cast<std::size_t>(std::count(d.labels.begin(), d.labels.end(), 1));
    if (!d.two_classes()) {
      tab.add({cell(m), cell(d.labels.size()), cell(pos), Cell(), Cell(), Cell(), cell("needs both classes"), Cell()});
      continue;
    }
    const auto samples = stats::make_samples(d.scores, d.labels);
    const auto ci = stats::bootstrap_ci(samples, stats::Statistic::Auroc, options.bootstrap);
    tab.add({cell(m), cell(d.labels.size()), cell(pos), cell(ci.estimate), cell(ci.ci_low), cell(ci.ci_high),
             cell(ci.method), cell(static_cast<long long>(ci.seed))});
    scored.push_back(m);
  }

  auto& pairs = r.table("pairwise", {"method_a", "method_b", "n", "auroc_a", "auroc_b", "difference", "p_delong",
                                     "p_holm", "test"});
  struct Pair {
    std::string a, b;
    std::size_t n;
    double auc_a, auc_b, diff, p;
    std::string test;
  };
  std::vector<Pair> found;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    for (std::size_t j = i + 1; j < scored.size(); ++j) {
      const auto& ca = t.column(scored[i]);
      const auto& cb = t.column(scored[j]);
      std::vector<double> sa, sb;
      std::vector<int> lab;
      for (std::size_t k = 0; k < t.question_ids.size(); ++k) {
        if (!ca[k] || !cb[k] || !t.labels[k]) continue;
        sa.push_back(*ca[k]);
        sb.push_back(*cb[k]);
        lab.push_back(*t.labels[k]);
      }
      const auto pos = std::count(lab.begin(), lab.end(), 1);
      if (pos == 0 || pos == static_cast<long>(lab.size())) continue;
      const auto rep = stats::auroc_diff_test(stats::make_samples(sa, lab), stats::make_samples(sb, lab), true,
                                              options.bootstrap);
      found.push_back({scored[i], scored[j], lab.size(), rep.extra.at("auroc_a"), rep.extra.at("auroc_b"), rep.estimate,
                       *rep.p_value, rep.method});
    }
  }
  std::vector<double> ps;
  for (const auto& p : found) ps.push_back(p.p);
  const auto holm = stats::holm_bonferroni(ps);
  for (std::size_t i = 0; i < found.size(); ++i) {
    const auto& p = found[i];
    pairs.add({cell(p.a), cell(p.b), cell(p.n), cell(p.auc_a), cell(p.auc_b), cell(p.diff), cell(p.p), cell(holm[i]),
               cell(p.test)});
  }

  // Single-cluster versus multi-cluster questions under Jaccard clustering.
  if (t.has("nc_jaccard")) {
    auto& sub = r.table("subsets", {"method", "subset", "n", "n_incorrect", "auroc"});
    const auto& nc = t.column("nc_jaccard");
    std::vector<bool> single(nc.size()), multi(nc.size());
    for (std::size_t i = 0; i < nc.size(); ++i) {
      single[i] = nc[i] && *nc[i] == 1.0;
      multi[i] = nc[i] && *nc[i] > 1.0;
    }
    for (const auto& m : scored) {
      for (const auto& [name, mask] : {std::pair{"single_cluster", &single}, std::pair{"multi_cluster", &multi}}) {
        const auto d = labeled_column(t, m, mask);
        const auto pos = static_cast<std::size_t>(std::count(d.labels.begin(), d.labels.end(), 1));
        sub.add({cell(m), cell(name), cell(d.labels.size()), cell(pos),
                 d.two_classes() ? cell(stats::auroc(stats::make_samples(d.scores, d.labels))) : Cell()});
      }
    }
    r.notes.push_back(
        "On single-cluster questions every semantic-entropy score is 0, so SE-based AUROC there is exactly 0.5.");
  }
  if (t.ambiguous_probes) r.notes.push_back(std::to_string(t.ambiguous_probes) + " P(True) probe(s) were ambiguous");
  return r;
}

// ---------------------------------------------------------------------------
// cascade

cascade::CascadeSpec default_cascade_spec(const SignalTable& table) {
  cascade::CascadeSpec spec;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"b1", "b1_mean"}, {"b2", "b2"}, {"b3", "b3"}, {"b4", "b4"}, {"b5", "b5"}};
  for (const auto& [name, signal] : stages) {
    if (!table.has(signal)) continue;
    cascade::StageSpec s;
    s.name = name;
    s.signal = signal;
    spec.stages.push_back(std::move(s));
  }
  if (spec.stages.empty()) throw PreconditionError("no boundary signal is available; " + signal_hint("b1_mean"));
  return spec;
}

report::Report cascade_report(const store::Run& run, const CascadeOptions& options) {
  const auto t = compute_signals(run, options.signal);
  require_labels(t);
  report::Report r;
  r.command = "cascade";
  const auto spec = options.spec ? *options.spec : default_cascade_spec(t);
  if (!options.spec) r.notes.push_back("no cascade config given; stages are the boundary signals present in the run");

  std::map<std::string, std::vector<double>> scores;
  for (const auto& st : spec.stages) {
    const auto signal = st.signal.empty() ? st.name : st.signal;
    if (!t.values.count(signal)) throw PreconditionError("cascade stage '" + st.name + "': " + signal_hint(signal));
    for (const auto& v : t.column(signal))
      if (v) scores[signal].push_back(*v);
  }
  const auto config = cascade::resolve(spec, scores, options.mode);
  for (const auto& d : config.defaulted) r.notes.push_back("default applied: " + d);

  std::vector<cascade::QueryRow> rows;
  for (std::size_t i = 0; i < t.question_ids.size(); ++i) {
    cascade::QueryRow row;
    row.question_id = t.question_ids[i];
    row.label = t.labels[i];
    for (const auto& st : config.stages) {
      if (const auto& v = t.column(st.signal)[i]) row.signals[st.signal] = *v;
    }
    rows.push_back(std::move(row));
  }
  const auto ev = cascade::evaluate_cascade(rows, config);

  const auto correct = static_cast<double>(std::count(ev.labels.begin(), ev.labels.end(), 0));
  const double n = static_cast<double>(ev.labels.size());
  auto& summary = r.table("summary", {"metric", "value"});
  summary.add({cell("labeled_questions"), cell(ev.labels.size())});
  summary.add({cell("excluded_unlabeled"), cell(ev.excluded_unlabeled)});
  summary.add({cell("combined_auroc"), cell(ev.combined_auroc)});
  summary.add({cell("tau_global"), cell(config.tau_global)});
  summary.add({cell("mean_incurred_cost"), cell(ev.mean_incurred_cost)});
  summary.add({cell("full_coverage_accuracy"), cell(n > 0 ? correct / n : 0.0)});

  auto& stages = r.table("stages", {"stage", "signal", "cost", "weight", "tau_low", "tau_high", "reached", "exited",
                                    "flagged", "unavailable", "exit_share", "beta", "provider_calls"});
  for (std::size_t i = 0; i < ev.stage_stats.size(); ++i) {
    const auto& s = ev.stage_stats[i];
    const bool global = i == config.stages.size();
    const double share = n > 0 ? static_cast<double>(s.exited) / n : 0.0;
    if (global) {
      stages.add({cell(s.name), Cell(), Cell(), Cell(), cell(config.tau_global), cell(config.tau_global), cell(s.reached),
                  cell(s.exited), cell(s.flagged), cell(s.unavailable), cell(share), Cell(), Cell()});
    } else {
      const auto& b = config.stages[i];
      stages.add({cell(s.name), cell(b.signal), cell(b.cost), cell(b.weight), cell(b.tau_low), cell(b.tau_high),
                  cell(s.reached), cell(s.exited), cell(s.flagged), cell(s.unavailable), cell(share), cell(s.beta),
                  cell(ev.provider_calls.at(s.name))});
    }
  }

  auto& cost = r.table("cost", {"metric", "value"});
  cost.add({cell("c_cascade"), cell(ev.cost.c_cascade)});
  cost.add({cell("c_parallel"), cell(ev.cost.c_parallel)});
  cost.add({cell("cost_ratio"), ev.cost.c_parallel > 0 ? cell(ev.cost.c_cascade / ev.cost.c_parallel) : Cell()});
  cost.add({cell("savings"), cell(ev.cost.savings)});

  if (ev.combined_auroc) {
    auto& sel = r.table("selective", {"coverage", "accuracy", "risk"});
    const auto samples = stats::make_samples(ev.combined_scores, ev.labels);
    const auto curve = stats::risk_coverage(samples);
    for (const double c : {0.3, 0.5, 0.8, 1.0}) {
      const double risk = stats::selective_risk(samples, c);
      sel.add({cell(c), cell(1.0 - risk), cell(risk)});
    }
    summary.add({cell("aurc"), cell(curve.aurc)});
    summary.add({cell("prr"), cell(curve.prr)});
  } else {
    r.notes.push_back("combined AUROC needs both correct and incorrect labels");
  }

  auto& per_q = r.table("per_question", {"question_id", "label", "exit_stage", "flag", "exit_score", "combined_score",
                                         "incurred_cost"});
  for (std::size_t i = 0; i < ev.outcomes.size(); ++i) {
    const auto& o = ev.outcomes[i];
    per_q.add({cell(ev.question_ids[i]), cell(ev.labels[i]), cell(o.exit_stage), cell(o.flag), cell(o.score),
               cell(ev.combined_scores[i]), cell(o.incurred_cost)});
  }
  for (const auto& st : config.stages) {
    if (st.signal == "b5") r.notes.push_back(kOracleNote);
  }
  r.notes.push_back(
      "Reference point: two unit-cost stages with beta_1 = 0.426 give a cost ratio of 0.713; 0.716 is sometimes "
      "quoted for that setting but does not follow from it.");
  return r;
}

// ---------------------------------------------------------------------------
// independence

report::Report independence(const store::Run& run, const IndependenceOptions& options) {
  const auto t = compute_signals(run, options.signal);
  auto pairs = options.pairs;
  report::Report r;
  r.command = "independence";
  if (pairs.empty()) {
    std::vector<std::string> present;
    for (const char* c : {"b1_mean", "b2", "b3", "b4", "b5"})
      if (t.has(c)) present.push_back(c);
    for (std::size_t i = 0; i < present.size(); ++i)
      for (std::size_t j = i + 1; j < present.size(); ++j) pairs.emplace_back(present[i], present[j]);
    if (pairs.empty()) throw PreconditionError("fewer than two boundary signals are available; " + signal_hint("b2"));
  }
  auto& tab = r.table("pairs", {"signal_x", "signal_y", "n", "pearson_r", "pearson_p", "dcor", "dcor_p", "hsic_p",
                                "mi_bits", "mi_null_mean", "mi_p", "status"});
  for (const auto& [x, y] : pairs) {
    const auto& cx = t.column(x);
    const auto& cy = t.column(y);
    std::vector<double> vx, vy;
    for (std::size_t i = 0; i < cx.size(); ++i) {
      if (cx[i] && cy[i]) {
        vx.push_back(*cx[i]);
        vy.push_back(*cy[i]);
      }
    }
    std::vector<std::string> problems;
    auto attempt = [&](auto fn) -> std::optional<stats::StatReport> {
      try {
        return fn();
      } catch (const DegenerateInputError& e) {
        problems.push_back(e.what());
      } catch (const PreconditionError& e) {
        problems.push_back(e.what());
      }
      return std::nullopt;
    };
    const auto pr = attempt([&] { return stats::pearson_r(vx, vy, options.permutations); });
    const auto dc = attempt([&] { return stats::distance_correlation(vx, vy, options.permutations); });
    const auto hs = attempt([&] { return stats::hsic_test(vx, vy, options.permutations); });
    const auto mi = attempt([&] { return stats::mutual_information_fd(vx, vy, options.permutations); });
    std::set<std::string> unique(problems.begin(), problems.end());
    const std::string status =
        unique.empty() ? "ok" : "degenerate: " + join(std::vector<std::string>(unique.begin(), unique.end()), "; ");
    tab.add({cell(x), cell(y), cell(vx.size()), pr ? cell(pr->estimate) : Cell(), pr ? cell(pr->p_value) : Cell(),
             dc ? cell(dc->estimate) : Cell(), dc ? cell(dc->p_value) : Cell(), hs ? cell(hs->p_value) : Cell(),
             mi ? cell(mi->estimate) : Cell(), mi ? cell(mi->extra.at("null_mean")) : Cell(),
             mi ? cell(mi->p_value) : Cell(), cell(status)});
  }
  return r;
}

// ---------------------------------------------------------------------------
// calibrate

report::Report calibrate(const store::Run& run, const CalibrateOptions& options) {
  const auto t = compute_signals(run, options.signal_options);
  require_labels(t);
  if (!t.values.count(options.signal) || !t.has(options.signal)) {
    throw PreconditionError("missing signal column: " + signal_hint(options.signal));
  }
  const auto d = labeled_column(t, options.signal);
  const auto res = stats::platt_fit(d.scores, d.labels, options.folds, options.seed, options.bins);

  report::Report r;
  r.command = "calibrate";
  auto& s = r.table("summary", {"metric", "value"});
  s.add({cell("signal"), cell(options.signal)});
  s.add({cell("n"), cell(d.scores.size())});
  s.add({cell("ece_raw"), cell(res.ece_before)});
  s.add({cell("ece_platt"), cell(res.ece_after)});
  s.add({cell("brier_raw"), cell(res.brier_before)});
  s.add({cell("brier_platt"), cell(res.brier_after)});
  s.add({cell("auroc_raw"), cell(res.auroc_before)});
  s.add({cell("auroc_platt"), cell(res.auroc_after)});
  s.add({cell("auroc_out_of_fold"), cell(res.auroc_oof)});
  s.add({cell("platt_a"), cell(res.full_map.a)});
  s.add({cell("platt_b"), cell(res.full_map.b)});
  s.add({cell("folds"), cell(options.folds)});
  s.add({cell("seed"), cell(static_cast<long long>(options.seed))});

  const auto samples = stats::make_samples(d.scores, d.labels);
  const auto curve = stats::risk_coverage(samples);
  s.add({cell("aurc"), cell(curve.aurc)});
  s.add({cell("prr"), cell(curve.prr)});

  std::vector<int> correct;
  for (int l : d.labels) correct.push_back(1 - l);
  auto confidence = [](const std::vector<double>& p_incorrect) {
    std::vector<double> c;
    for (double p : p_incorrect) c.push_back(1.0 - p);
    return c;
  };
  auto& rel = r.table("reliability", {"scores", "bin_low", "bin_high", "count", "mean_confidence", "accuracy"});
  const auto raw = stats::raw_incorrect_probability(d.scores);
  for (const auto& [name, probs] : {std::pair{"raw", &raw}, std::pair{"platt", &res.oof_p_incorrect}}) {
    for (const auto& b : stats::reliability_table(confidence(*probs), correct, options.bins)) {
      rel.add({cell(name), cell(b.lo), cell(b.hi), cell(b.count), b.count ? cell(b.mean_confidence) : Cell(),
               b.count ? cell(b.accuracy) : Cell()});
    }
  }
  auto& sel = r.table("selective", {"coverage", "accuracy"});
  for (const double c : {0.3, 0.5, 0.8, 1.0}) sel.add({cell(c), cell(1.0 - stats::selective_risk(samples, c))});

  if (res.slope_sign_flipped) r.notes.push_back("raw AUROC is below 0.5, so the Platt slope was allowed to be negative");
  if (std::abs(res.auroc_before - 0.5) < 0.05) {
    r.notes.push_back("AUROC is near 0.5: the signal barely separates correct from incorrect answers, and calibration "
                      "cannot add discrimination.");
  }
  return r;
}

// ---------------------------------------------------------------------------
// pointer model

PointerResult train_pointer(const store::Run& run, const PointerOptions& options) {
  std::set<std::string> cats;
  for (const auto& [id, q] : run.questions)
    if (q.question.category) cats.insert(*q.question.category);
  const std::vector<std::string> categories(cats.begin(), cats.end());
  const double median_h = signals::run_median_entropy(run);

  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (const auto& [id, q] : run.questions) {
    const auto label = label_value(run, q);
    const auto* g = run.greedy(q);
    if (!label || !g || !g->token_logprobs) continue;
    x.push_back(pointer::features(signals::entropy_features(*g, median_h), q.question.text, g->text,
                                  q.question.category, categories));
    y.push_back(*label);
  }
  if (x.empty()) {
    throw PreconditionError("the pointer model needs labeled questions with greedy logprobs; " +
                            signal_hint("b1_mean") + " and attach labels with --labels");
  }
  auto training = pointer::train_pointer(x, y, pointer::feature_names(categories), options.folds, options.seed);

  PointerResult out;
  auto& r = out.report;
  r.command = "pointer";
  auto& s = r.table("summary", {"metric", "value"});
  s.add({cell("n"), cell(x.size())});
  s.add({cell("features"), cell(training.model.feature_names.size())});
  s.add({cell("feature_set"), cell(pointer::kFeatureSetVersion)});
  s.add({cell("cv_auc"), cell(training.cv_auc)});
  s.add({cell("pooled_out_of_fold_auc"), cell(training.pooled_oof_auc)});
  s.add({cell("folds"), cell(options.folds)});
  s.add({cell("seed"), cell(static_cast<long long>(options.seed))});
  auto& f = r.table("folds", {"fold", "auc"});
  for (std::size_t i = 0; i < training.fold_auc.size(); ++i) f.add({cell(i), cell(training.fold_auc[i])});
  auto& c = r.table("coefficients", {"feature", "coefficient", "center", "scale"});
  c.add({cell("(intercept)"), cell(training.model.intercept), Cell(), Cell()});
  for (std::size_t i = 0; i < training.model.feature_names.size(); ++i) {
    c.add({cell(training.model.feature_names[i]), cell(training.model.coefficients[i]), cell(training.model.center[i]),
           cell(training.model.scale[i])});
  }
  out.model = std::move(training.model);
  return out;
}

}  // namespace scrkit::analysis
