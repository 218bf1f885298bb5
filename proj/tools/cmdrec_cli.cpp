// cmdrec: synth | preprocess | train | eval | serve | stats
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cmdrec/checkpoint.hpp"
#include "cmdrec/metrics.hpp"
#include "cmdrec/preprocess.hpp"
#include "cmdrec/service.hpp"
#include "cmdrec/synthgen.hpp"
#include "cmdrec/training.hpp"

namespace fs = std::filesystem;
using namespace cmdrec;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  out << text;
}

// Files as given; directories contribute their *.log files, sorted.
std::vector<fs::path> expand_logs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".log") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

struct PipelineFiles {
  std::string lexicon, removal, denylist;

  void add(CLI::App* cmd) {
    cmd->add_option("--lexicon", lexicon, "translation lexicon (loc_id, language, name, english)");
    cmd->add_option("--removal", removal, "removal list for ambiguous events (JSON)");
    cmd->add_option("--denylist", denylist, "noise denylist (JSON); built-in defaults otherwise");
  }
  PipelineConfig load(const fs::path& fallback_dir = {}) const {
    PipelineConfig c;
    auto pick = [&](const std::string& given, const char* name) -> fs::path {
      if (!given.empty()) return given;
      if (!fallback_dir.empty() && fs::exists(fallback_dir / name)) return fallback_dir / name;
      return {};
    };
    if (auto p = pick(lexicon, "lexicon.tsv"); !p.empty()) c.lexicon = TranslationLexicon::load(p);
    if (auto p = pick(removal, "removal.json"); !p.empty()) c.removal = Denylist::load(p);
    if (auto p = pick(denylist, "denylist.json"); !p.empty()) c.denylist = Denylist::load(p);
    return c;
  }
};

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec, out;
  std::optional<std::size_t> sessions, commands, files;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  GeneratorSpec spec = a.spec.empty() ? GeneratorSpec{} : GeneratorSpec::from_json_text(slurp(a.spec));
  if (a.sessions) spec.sessions = *a.sessions;
  if (a.commands) spec.n_commands = *a.commands;
  if (a.files) spec.files = *a.files;
  if (a.seed) spec.seed = *a.seed;
  auto corpus = generate(spec);
  write_corpus(corpus, spec, a.out);
  std::cout << "wrote " << corpus.files.size() << " log file(s), " << corpus.truth.clean.size() << " sessions to "
            << a.out << "\n"
            << "bayes recall@5 " << bayes_recall(corpus.truth.chain, 5) << "\n";
  return 0;
}

struct PreprocessArgs {
  std::vector<std::string> logs;
  PipelineFiles files;
  std::string reviewed_map, out;
  double p_min = 0.5;
  std::size_t n_min = 20, min_len = 5, max_len = 100;
  double train_frac = 0.8;
  std::uint64_t seed = 0;
};

int run_preprocess(const PreprocessArgs& a) {
  auto config = a.files.load();
  config.trigger.p_min = a.p_min;
  config.trigger.n_min = a.n_min;
  auto loaded = load_sessions(expand_logs(a.logs));
  std::cout << loaded.report.summary();
  std::optional<TriggerMap> reviewed;
  if (!a.reviewed_map.empty()) {
    reviewed = TriggerMap::load(a.reviewed_map);
    decide_triggers(*reviewed, config.trigger);
  }
  auto result = run_pipeline(loaded.sessions, config, reviewed ? &*reviewed : nullptr);
  auto gaps = lexicon_gaps(loaded.sessions, config.lexicon);
  if (!gaps.empty()) std::cerr << "warning: " << gaps.size() << " loc id(s) carry several names but no lexicon entry\n";

  SplitOptions so;
  so.min_len = a.min_len;
  so.max_len = a.max_len;
  so.train_frac = a.train_frac;
  so.seed = a.seed;
  auto split = sessionize_and_split(result.sequences, so);

  fs::create_directories(a.out);
  fs::path out(a.out);
  result.trigger_map.save(out / "trigger_map.tsv");
  save_sequences(out / "clean.tsv", result.sequences);
  save_sequences(out / "train.tsv", split.train);
  save_sequences(out / "validation.tsv", split.validation);
  spit(out / "lexicon.tsv", config.lexicon.to_text());
  spit(out / "removal.json", config.removal.to_json_text());
  spit(out / "denylist.json", config.denylist.to_json_text());
  auto stats = dataset_stats(result.sequences);
  spit(out / "stats.tsv", stats.to_table());

  std::size_t decided = 0;
  for (const auto& [k, e] : result.trigger_map.entries) decided += e.decision == TriggerDecisionKind::TriggersEvent;
  const auto& r = result.report;
  std::cout << "aborted " << r.filter.aborted << ", undone " << r.undo.undone << ", redone " << r.undo.redone
            << ", translated " << r.align.translated << ", substituted " << r.substitute.substituted << "\n"
            << "triggers " << decided << " of " << result.trigger_map.entries.size() << " tool/menu commands\n"
            << "train " << split.train.size() << " / validation " << split.validation.size() << " sequences\n"
            << stats.to_table();
  return 0;
}

struct TrainArgs {
  std::string data, out, preset = "mistral", train_config;
  int d_model = 64;
  std::optional<int> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::size_t d_text = 16;
  int lora_rank = 0;
  std::string init;
};

int run_train(const TrainArgs& a) {
  fs::path data(a.data);
  SplitDataset split;
  split.train = load_sequences(data / "train.tsv");
  split.validation = load_sequences(data / "validation.tsv");

  TrainConfig tc = a.train_config.empty() ? TrainConfig{} : TrainConfig::from_json_text(slurp(a.train_config));
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.lr) tc.lr = *a.lr;
  if (a.seed) tc.seed = *a.seed;

  FeatureEncoder enc;
  Model model;
  if (!a.init.empty()) {
    // Fine-tune an existing run; its vocabulary and feature statistics are kept.
    auto run = load_run(a.init);
    enc = std::move(run.encoder);
    model = std::move(run.model);
  } else {
    enc.vocab = Vocabulary::build(split.train);
    enc.embedder = TextEmbedder(a.d_text);
    enc.time = TimeNormStats::fit(split.train);
    auto cfg = preset_config(a.preset, static_cast<int>(enc.vocab.size()), a.d_model);
    cfg.d_text = static_cast<int>(a.d_text);
    model = Model(cfg, tc.seed);
  }
  if (a.lora_rank > 0) {
    LoraSpec ls;
    ls.rank = a.lora_rank;
    model.inject_lora(ls, tc.seed + 1);
  }
  std::cout << "preset " << model.config().preset << ", " << model.parameter_count() << " parameters ("
            << model.trainable_count() << " trainable), vocab " << enc.vocab.size() << "\n";
  auto result = train(model, enc, split, tc, [](const EpochRecord& r) { std::cout << r.to_json_text() << "\n"; });
  write_run(a.out, model, enc, tc, result);
  std::cout << "run written to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string run, data;
  std::vector<std::size_t> ks = {5, 10};
  bool json = false;
};

int run_eval(const EvalArgs& a) {
  auto run = load_run(a.run);
  fs::path data(a.data);
  if (fs::is_directory(data)) data /= "validation.tsv";
  auto seqs = load_sequences(data);
  auto report = evaluate(run.model, run.encoder, seqs, a.ks);
  std::cout << (a.json ? report.to_json_text() + "\n" : report.to_table());
  return 0;
}

struct StatsArgs {
  std::vector<std::string> sequences, logs;
  PipelineFiles files;
};

int run_stats(const StatsArgs& a) {
  std::vector<CleanSequence> seqs;
  for (const auto& f : a.sequences) {
    auto s = load_sequences(f);
    seqs.insert(seqs.end(), s.begin(), s.end());
  }
  if (!a.logs.empty()) {
    auto loaded = load_sessions(expand_logs(a.logs));
    std::cout << loaded.report.summary();
    auto r = run_pipeline(loaded.sessions, a.files.load());
    seqs.insert(seqs.end(), r.sequences.begin(), r.sequences.end());
  }
  std::cout << dataset_stats(seqs).to_table();
  return 0;
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

struct ServeArgs {
  std::string run, pipeline, trigger_map, host = "127.0.0.1", tag;
  PipelineFiles files;
  std::vector<std::string> watch;
  std::optional<int> port;
  int poll_ms = 500;
  int idle_s = 1800;
};

int run_serve(const ServeArgs& a) {
  std::shared_ptr<const Recommender> model;
  if (!a.run.empty()) {
    auto tag = a.tag.empty() ? fs::path(a.run).filename().string() : a.tag;
    model = std::make_shared<Recommender>(load_run(a.run), tag);
  } else {
    std::cerr << "warning: no --run given; /predict answers 503\n";
  }
  fs::path pdir(a.pipeline);
  auto config = a.files.load(pdir);
  TriggerMap tm;
  if (!a.trigger_map.empty())
    tm = TriggerMap::load(a.trigger_map);
  else if (!a.pipeline.empty() && fs::exists(pdir / "trigger_map.tsv"))
    tm = TriggerMap::load(pdir / "trigger_map.tsv");
  decide_triggers(tm, config.trigger);

  ServiceOptions opts;
  opts.poll_interval = std::chrono::milliseconds(a.poll_ms);
  opts.idle_timeout = std::chrono::seconds(a.idle_s);
  Service service(model, OnlinePreprocessor(config, tm, opts.max_len), opts);
  for (const auto& w : a.watch) service.watch(w);
  int port = service.start(a.host, a.port ? *a.port : port_from_env());
  std::cout << "listening on http://" << a.host << ":" << port << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Next-command recommendation for BIM event logs"};
  app.set_config("--config", "", "INI/TOML file with option values");
  app.require_subcommand(1);

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with ground truth");
  synth->add_option("--spec", sy.spec, "generator spec (JSON)");
  synth->add_option("--sessions", sy.sessions);
  synth->add_option("--commands", sy.commands);
  synth->add_option("--files", sy.files);
  synth->add_option("--seed", sy.seed);
  synth->add_option("-o,--out", sy.out)->required();

  PreprocessArgs pp;
  auto* prep = app.add_subcommand("preprocess", "clean raw logs and split into train/validation");
  prep->add_option("logs", pp.logs, "log files or directories")->required();
  pp.files.add(prep);
  prep->add_option("--trigger-map", pp.reviewed_map, "reviewed trigger map to use instead of estimating one");
  prep->add_option("--p-min", pp.p_min);
  prep->add_option("--n-min", pp.n_min);
  prep->add_option("--min-len", pp.min_len);
  prep->add_option("--max-len", pp.max_len);
  prep->add_option("--train-frac", pp.train_frac);
  prep->add_option("--seed", pp.seed);
  prep->add_option("-o,--out", pp.out)->required();

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "train a recommender on preprocessed data");
  trn->add_option("--data", tr.data, "directory with train.tsv and validation.tsv")->required();
  trn->add_option("--preset", tr.preset)->check(CLI::IsMember(preset_names()));
  trn->add_option("--d-model", tr.d_model);
  trn->add_option("--d-text", tr.d_text);
  trn->add_option("--train-config", tr.train_config, "training config (JSON)");
  trn->add_option("--epochs", tr.epochs);
  trn->add_option("--batch-size", tr.batch_size);
  trn->add_option("--lr", tr.lr);
  trn->add_option("--seed", tr.seed);
  trn->add_option("--lora-rank", tr.lora_rank, "adapt attention projections with LoRA of this rank");
  trn->add_option("--init", tr.init, "start from an existing run directory");
  trn->add_option("-o,--out", tr.out)->required();

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Recall@K / NDCG@K on held-out sequences");
  evl->add_option("--run", ev.run)->required();
  evl->add_option("--data", ev.data, "validation.tsv or its directory")->required();
  evl->add_option("--ks", ev.ks);
  evl->add_flag("--json", ev.json);

  ServeArgs sv;
  auto* srv = app.add_subcommand("serve", "tail logs and serve predictions over HTTP");
  srv->add_option("--run", sv.run, "trained run directory");
  srv->add_option("--pipeline", sv.pipeline, "preprocess output directory (trigger map, lexicon, lists)");
  srv->add_option("--trigger-map", sv.trigger_map);
  sv.files.add(srv);
  srv->add_option("--watch", sv.watch, "log file to tail (repeatable)");
  srv->add_option("--host", sv.host);
  srv->add_option("--port", sv.port, "listen port; default $CMDREC_PORT or 8080");
  srv->add_option("--poll-ms", sv.poll_ms);
  srv->add_option("--idle-timeout", sv.idle_s, "seconds before an idle session is dropped");
  srv->add_option("--tag", sv.tag, "model tag reported by /health");

  StatsArgs st;
  auto* sts = app.add_subcommand("stats", "session/command/category counts");
  sts->add_option("--sequences", st.sequences, "clean sequence files");
  sts->add_option("--logs", st.logs, "raw logs, run through the pipeline first");
  st.files.add(sts);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return run_synth(sy);
    if (*prep) return run_preprocess(pp);
    if (*trn) return run_train(tr);
    if (*evl) return run_eval(ev);
    if (*srv) return run_serve(sv);
    if (*sts) return run_stats(st);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
