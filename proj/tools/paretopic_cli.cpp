// paretopic: command-line front end for the topic model pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "paretopic/llm.hpp"
#include "paretopic/paretopic.hpp"

using namespace paretopic;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
};

// Per-subcommand flag that maps onto a config key. Set only when the flag was
// given, so it can win over the config file and --set.
struct KeyFlag {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

class Command {
 public:
  Command(CLI::App& app, const char* name, const char* description, CommonOptions& common)
      : sub_(app.add_subcommand(name, description)), common_(common) {}

  CLI::App* app() { return sub_; }

  void key_flag(const std::string& flag, const std::string& key, const std::string& help) {
    flags_.push_back(std::make_unique<KeyFlag>());
    auto& f = *flags_.back();
    f.key = key;
    f.option = sub_->add_option(flag, f.value, help + " (" + key + ")");
  }

  Config resolve() const {
    Config c;
    if (!common_.config_file.empty()) c.load(common_.config_file);
    for (const auto& kv : common_.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& f : flags_)
      if (f->option->count()) c.set(f->key, f->value);
    std::cerr << "# resolved config (" << sub_->get_name() << ")\n" << c.dump();
    return c;
  }

 private:
  CLI::App* sub_;
  CommonOptions& common_;
  std::vector<std::unique_ptr<KeyFlag>> flags_;
};

CorpusLoad read_corpus(const std::string& path) {
  auto load = load_corpus(path);
  for (const auto& m : load.malformed)
    std::cerr << "warning: " << path << " line " << m.line_number << ": " << m.reason << '\n';
  for (const auto& w : load.warnings) std::cerr << "warning: " << w << '\n';
  return load;
}

std::vector<std::string> texts_of(const std::vector<RawDocument>& docs) {
  std::vector<std::string> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.text);
  return out;
}

// Writes through a temporary file so a crash never leaves a partial file.
template <typename WriteFn>
void write_atomically(const std::string& path, WriteFn&& write) {
  const std::string tmp = path + ".tmp";
  write(tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot replace " + path + ": " + ec.message());
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

std::string help_footer() {
  std::ostringstream os;
  os << "Configuration keys (set in --config files as key=value, or with --set key=value;\n"
        "subcommand flags override both):\n";
  for (const auto& k : known_keys()) {
    os << "  " << std::left << std::setw(30) << k.key << " default "
       << (k.default_value.empty() ? "(none)" : k.default_value) << "  " << k.help << '\n';
  }
  os << "\nThe built-in classifier of `classify` is a multinomial logistic-regression proxy\n"
        "(L2 1e-4, 500 full-batch steps), not a random forest. The exported CSV of document\n"
        "topic mixtures can be fed to any external classifier.\n"
        "\nExit codes: 0 success, 1 usage or configuration error, 2 data error,\n"
        "3 runtime, numeric or remote error.\n";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Setwise contrastive neural topic model with Pareto-balanced training"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(help_footer());
  CommonOptions common;
  app.add_option("--config", common.config_file, "key=value configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--set", common.overrides, "configuration override key=value (repeatable)");

  // build-vocab
  Command build_vocab(app, "build-vocab", "Build a vocabulary file from a JSONL corpus", common);
  std::string bv_corpus, bv_out;
  build_vocab.app()->add_option("--corpus", bv_corpus, "training corpus (JSONL)")->required();
  build_vocab.app()->add_option("--out", bv_out, "vocabulary file to write")->required();
  build_vocab.key_flag("--min-df", "corpus.min_df", "minimum document frequency");
  build_vocab.key_flag("--max-df-frac", "corpus.max_df_frac", "maximum document frequency fraction");
  build_vocab.key_flag("--max-size", "corpus.max_size", "maximum vocabulary size");

  // augment
  Command augment_cmd(app, "augment", "Create positive/negative views of every document", common);
  std::string au_corpus, au_vocab, au_out;
  augment_cmd.app()->add_option("--corpus", au_corpus, "training corpus (JSONL)")->required();
  augment_cmd.app()->add_option("--vocab", au_vocab, "vocabulary file")->required();
  augment_cmd.app()->add_option("--out", au_out, "augmentation cache to write (JSONL)")->required();
  augment_cmd.key_flag("--method", "augment.method", "llm|tfidf|dropout");
  augment_cmd.key_flag("--seed", "augment.seed", "seed of the deterministic augmenters");
  augment_cmd.key_flag("--endpoint", "augment.endpoint", "LLM endpoint URL");

  // train
  Command train_cmd(app, "train", "Train a model; checkpoints after every epoch", common);
  std::string tr_corpus, tr_vocab, tr_cache, tr_checkpoint, tr_log, tr_resume;
  train_cmd.app()->add_option("--corpus", tr_corpus, "training corpus (JSONL)")->required();
  train_cmd.app()->add_option("--vocab", tr_vocab, "vocabulary file")->required();
  train_cmd.app()->add_option("--cache", tr_cache, "augmentation cache (JSONL)")->required();
  train_cmd.app()->add_option("--checkpoint", tr_checkpoint, "checkpoint file to write")->required();
  train_cmd.app()->add_option("--log", tr_log, "per-step training log (JSONL)");
  train_cmd.app()->add_option("--resume", tr_resume, "checkpoint to continue from");
  train_cmd.key_flag("--seed", "train.seed", "random seed (required)");
  train_cmd.key_flag("--epochs", "train.epochs", "training epochs");
  train_cmd.key_flag("--strategy", "moo.strategy", "mgda|linear|random|pcgrad");
  train_cmd.key_flag("--topics", "model.T", "number of topics");

  // topics
  Command topics_cmd(app, "topics", "Write the top words of every topic", common);
  std::string tp_checkpoint, tp_vocab, tp_out;
  topics_cmd.app()->add_option("--checkpoint", tp_checkpoint, "trained checkpoint")->required();
  topics_cmd.app()->add_option("--vocab", tp_vocab, "vocabulary file")->required();
  topics_cmd.app()->add_option("--out", tp_out, "topics file to write")->required();
  topics_cmd.key_flag("--top-n", "eval.top_n", "words per topic");

  // eval
  Command eval_cmd(app, "eval", "NPMI and topic diversity of a topics file", common);
  std::string ev_topics, ev_vocab, ev_corpus, ev_out;
  eval_cmd.app()->add_option("--topics", ev_topics, "topics file")->required();
  eval_cmd.app()->add_option("--vocab", ev_vocab, "vocabulary file")->required();
  eval_cmd.app()->add_option("--corpus", ev_corpus, "reference corpus, usually the test split (JSONL)")
      ->required();
  eval_cmd.app()->add_option("--out", ev_out, "metrics JSON to write (default: stdout)");
  eval_cmd.key_flag("--npmi-eps", "eval.npmi_eps", "NPMI smoothing");

  // align
  Command align_cmd(app, "align", "Match the topics of two checkpoints by JS divergence", common);
  std::string al_a, al_b, al_vocab, al_out;
  align_cmd.app()->add_option("--a", al_a, "first checkpoint")->required();
  align_cmd.app()->add_option("--b", al_b, "second checkpoint")->required();
  align_cmd.app()->add_option("--vocab", al_vocab, "vocabulary file; adds top words to the report");
  align_cmd.app()->add_option("--out", al_out, "report JSON to write (default: stdout)");
  align_cmd.key_flag("--threshold", "eval.align_threshold", "JS divergence cut-off");

  // classify
  Command classify_cmd(app, "classify", "Export topic-mixture features and score a proxy classifier",
                       common);
  std::string cl_checkpoint, cl_vocab, cl_corpus, cl_out;
  double cl_test_frac = 0.2;
  std::uint64_t cl_seed = 0;
  classify_cmd.app()->add_option("--checkpoint", cl_checkpoint, "trained checkpoint")->required();
  classify_cmd.app()->add_option("--vocab", cl_vocab, "vocabulary file")->required();
  classify_cmd.app()->add_option("--corpus", cl_corpus, "labeled corpus (JSONL)")->required();
  classify_cmd.app()->add_option("--out", cl_out, "features CSV to write")->required();
  classify_cmd.app()
      ->add_option("--test-frac", cl_test_frac, "held-out fraction for the proxy classifier")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  classify_cmd.app()->add_option("--split-seed", cl_seed, "seed of the train/held-out split")
      ->capture_default_str();

  // probe
  Command probe_cmd(app, "probe", "Cosine similarity of the topic mixtures of two texts", common);
  std::string pr_checkpoint, pr_vocab, pr_a, pr_b;
  probe_cmd.app()->add_option("--checkpoint", pr_checkpoint, "trained checkpoint")->required();
  probe_cmd.app()->add_option("--vocab", pr_vocab, "vocabulary file")->required();
  probe_cmd.app()->add_option("--text-a", pr_a, "first text")->required();
  probe_cmd.app()->add_option("--text-b", pr_b, "second text")->required();

  // selftest
  Command selftest_cmd(app, "selftest", "Gradient checks and min-norm solver oracle", common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (build_vocab.app()->parsed()) {
      const auto cfg = build_vocab.resolve();
      const auto load = read_corpus(bv_corpus);
      const auto vocab =
          build_vocabulary(texts_of(load.documents), static_cast<std::uint32_t>(cfg.count("corpus.min_df")),
                           cfg.real("corpus.max_df_frac"), cfg.count("corpus.max_size"));
      vocab.save(bv_out);
      std::cout << "vocabulary: " << vocab.size() << " words from " << load.documents.size()
                << " documents, hash " << vocab.hash() << '\n';

    } else if (augment_cmd.app()->parsed()) {
      const auto cfg = augment_cmd.resolve();
      const auto vocab = Vocabulary::load(au_vocab);
      const auto load = read_corpus(au_corpus);
      const auto corpus = make_corpus(load.documents, vocab, Split::train);
      const auto method = augment::parse_method(cfg.str("augment.method"));
      augment::FallbackOptions fb;
      fb.replace_frac = cfg.real("augment.replace_frac");
      fb.drop_frac = cfg.real("augment.drop_frac");
      fb.seed = static_cast<std::uint64_t>(cfg.integer("augment.seed"));
      std::vector<augment::AugmentedTriple> triples;
      if (method == augment::Method::llm) {
        llm::LlmConfig lc;
        lc.endpoint = cfg.str("augment.endpoint");
        lc.model = cfg.str("augment.model");
        lc.temperature = cfg.real("augment.temperature");
        lc.max_tokens = static_cast<int>(cfg.count("augment.max_tokens"));
        lc.timeout_seconds = cfg.real("augment.timeout");
        lc.parallelism = cfg.count("augment.parallelism");
        if (cfg.has_value("augment.request_template"))
          lc.request_template = cfg.str("augment.request_template");
        lc.response_pointer = cfg.str("augment.response_pointer");
        if (const char* key = std::getenv(llm::kApiKeyEnv)) {
          lc.api_key = key;
        } else {
          std::cerr << "warning: " << llm::kApiKeyEnv << " is not set; sending no Authorization header\n";
        }
        triples = llm::augment_corpus(corpus, texts_of(load.documents), lc, fb);
      } else {
        const auto tfidf = augment::TfidfModel::fit(corpus.documents, vocab.size());
        triples = augment::augment_fallback(corpus, tfidf, method, fb);
      }
      write_atomically(au_out, [&](const std::string& p) { augment::save_cache(triples, p); });
      std::cout << "augmented " << triples.size() << " of " << corpus.documents.size()
                << " documents (" << augment::to_string(method) << ")\n";

    } else if (train_cmd.app()->parsed()) {
      const auto cfg = train_cmd.resolve();
      if (!cfg.has_value("train.seed")) {
        throw ConfigError("train requires a seed: pass --seed or set train.seed");
      }
      const auto tc = trainer::TrainConfig::from(cfg);
      const auto vocab = Vocabulary::load(tr_vocab);
      const auto load = read_corpus(tr_corpus);
      const auto corpus = make_corpus(load.documents, vocab, Split::train);
      const auto cache = augment::load_cache(tr_cache, corpus.documents.size());
      const auto views = trainer::prepare_views(corpus, cache, cfg.real("augment.drop_frac"),
                                                static_cast<std::uint64_t>(cfg.integer("augment.seed")));
      trainer::TrainState state;
      if (tr_resume.empty()) {
        state = trainer::initial_state(vocab.size(), tc);
      } else {
        state = trainer::load_checkpoint(tr_resume, vocab.hash());
        if (state.model.hidden() != tc.H || state.model.topics() != tc.T) {
          throw ConfigError("resume checkpoint has H=" + std::to_string(state.model.hidden()) +
                            ", T=" + std::to_string(state.model.topics()) +
                            " but the configuration asks for H=" + std::to_string(tc.H) +
                            ", T=" + std::to_string(tc.T));
        }
        std::cerr << "resuming at epoch " << state.epoch << ", step " << state.step << '\n';
      }
      std::ofstream log;
      if (!tr_log.empty()) {
        log.open(tr_log, tr_resume.empty() ? std::ios::binary | std::ios::trunc
                                           : std::ios::binary | std::ios::app);
        if (!log) throw DataError("cannot write training log " + tr_log);
      }
      const auto hash = vocab.hash();
      bool saved = false;
      trainer::FitCallbacks cb;
      cb.on_step = [&](const trainer::TrainRecord& r) {
        if (log.is_open()) log << trainer::to_json(r).dump() << '\n';
      };
      cb.on_epoch_end = [&](const trainer::TrainState& s) {
        if (log.is_open()) log.flush();
        saved = true;
        write_atomically(tr_checkpoint,
                         [&](const std::string& p) { trainer::save_checkpoint(s, hash, p); });
        std::cerr << "epoch " << s.epoch << "/" << tc.epochs << " done, step " << s.step << '\n';
      };
      trainer::fit(views, tc, state, cb);
      if (!saved) {
        write_atomically(tr_checkpoint,
                         [&](const std::string& p) { trainer::save_checkpoint(state, hash, p); });
      }
      std::cout << "trained " << state.epoch << " epochs, " << state.step << " steps on "
                << views.size() << " documents\n";

    } else if (topics_cmd.app()->parsed()) {
      const auto cfg = topics_cmd.resolve();
      const auto vocab = Vocabulary::load(tp_vocab);
      const auto state = trainer::load_checkpoint(tp_checkpoint, vocab.hash());
      const auto topics = ntm::top_words(state.model.dec, cfg.count("eval.top_n"), &vocab);
      eval::save_topics(topics, vocab, tp_out);
      std::cout << "wrote " << topics.topics.size() << " topics of " << topics.n << " words\n";

    } else if (eval_cmd.app()->parsed()) {
      const auto cfg = eval_cmd.resolve();
      const auto vocab = Vocabulary::load(ev_vocab);
      const auto topics = eval::load_topics(ev_topics, vocab);
      const auto load = read_corpus(ev_corpus);
      const auto corpus = make_corpus(load.documents, vocab, Split::test);
      const eval::CooccurrenceStats stats(corpus.documents, vocab.size());
      const auto n = eval::npmi(topics, stats, cfg.real("eval.npmi_eps"));
      const auto j = eval::metrics_json(n, eval::topic_diversity(topics), topics.topics.size());
      if (ev_out.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        write_json(j, ev_out);
        std::cout << "npmi " << n.mean << ", td " << j["td"].get<double>() << '\n';
      }

    } else if (align_cmd.app()->parsed()) {
      const auto cfg = align_cmd.resolve();
      std::optional<Vocabulary> vocab;
      if (!al_vocab.empty()) vocab = Vocabulary::load(al_vocab);
      const auto hash = vocab ? std::optional<std::string>(vocab->hash()) : std::nullopt;
      const auto a = trainer::load_checkpoint(al_a, hash);
      const auto b = trainer::load_checkpoint(al_b, hash);
      if (a.model.vocab_size() != b.model.vocab_size()) {
        throw DataError("checkpoints are over different vocabularies (V=" +
                        std::to_string(a.model.vocab_size()) + " vs " +
                        std::to_string(b.model.vocab_size()) + ")");
      }
      const double threshold = cfg.real("eval.align_threshold");
      const auto pairs = eval::align_topics(eval::topic_distributions(a.model.dec),
                                            eval::topic_distributions(b.model.dec), threshold);
      const auto n_words = cfg.count("eval.top_n");
      const auto ta = ntm::top_words(a.model.dec, n_words, vocab ? &*vocab : nullptr);
      const auto tb = ntm::top_words(b.model.dec, n_words, vocab ? &*vocab : nullptr);
      auto words = [&](const ntm::TopicList& t, std::size_t k) {
        std::vector<std::string> out;
        for (const auto w : t.topics[k]) out.push_back(vocab->word(w));
        return out;
      };
      nlohmann::json report = {{"threshold", threshold},
                               {"topics_a", a.model.topics()},
                               {"topics_b", b.model.topics()},
                               {"pairs", nlohmann::json::array()}};
      for (const auto& p : pairs) {
        nlohmann::json e = {{"i", p.i}, {"j", p.j}, {"js", p.js}};
        if (vocab) {
          e["words_a"] = words(ta, p.i);
          e["words_b"] = words(tb, p.j);
        }
        report["pairs"].push_back(e);
      }
      if (al_out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        write_json(report, al_out);
        std::cout << "aligned " << pairs.size() << " topic pairs\n";
      }

    } else if (classify_cmd.app()->parsed()) {
      classify_cmd.resolve();
      const auto vocab = Vocabulary::load(cl_vocab);
      const auto state = trainer::load_checkpoint(cl_checkpoint, vocab.hash());
      const auto load = read_corpus(cl_corpus);
      const auto corpus = make_corpus(load.documents, vocab, Split::test);
      const auto thetas = eval::document_thetas(corpus.documents, state.model.enc);
      std::vector<std::optional<std::string>> labels;
      std::size_t labeled = 0, empty = 0;
      for (const auto& d : corpus.documents) {
        labels.push_back(d.label);
        labeled += d.label.has_value();
        empty += d.empty();
      }
      if (empty) {
        std::cerr << "warning: " << empty
                  << " documents have no in-vocabulary words; their features are uniform\n";
      }
      eval::write_features_csv(thetas, labels, cl_out);
      std::cout << "wrote " << thetas.rows() << " feature rows to " << cl_out << '\n';
      if (labeled < 2) {
        std::cout << "notice: corpus has fewer than two labeled documents; classifier skipped\n";
      } else {
        const auto rep = eval::classify(thetas, labels, cl_test_frac, cl_seed);
        std::cout << "proxy classifier (logistic regression): " << rep.num_classes << " classes, "
                  << rep.train_size << " train / " << rep.test_size << " held out, macro-F1 "
                  << rep.macro_f1 << '\n';
      }

    } else if (probe_cmd.app()->parsed()) {
      probe_cmd.resolve();
      const auto vocab = Vocabulary::load(pr_vocab);
      const auto state = trainer::load_checkpoint(pr_checkpoint, vocab.hash());
      std::cout << std::setprecision(6) << eval::similarity_probe(pr_a, pr_b, state.model.enc, vocab)
                << '\n';

    } else if (selftest_cmd.app()->parsed()) {
      selftest_cmd.resolve();
      return selftest::report(selftest::run_all(), std::cout) ? 0 : kExitRuntime;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
