#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bingear/bingear.hpp"

namespace fs = std::filesystem;
using namespace bingear;

namespace {

constexpr const char* kDatasetFile = "dataset.bgds";
constexpr const char* kReportFile = "report.txt";
constexpr const char* kTeacherFile = "teacher.bgtc";
constexpr const char* kStudentFile = "student.bger";
constexpr const char* kPseudoFile = "pseudo_positives.bgpp";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::data, "cannot write " + path.string());
  f << text;
}

std::uint64_t file_digest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return fnv1a64(ss.str());
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path require_dataset(const std::string& dir) {
  const fs::path p = fs::path(dir) / kDatasetFile;
  if (!fs::exists(p)) fail(ErrorKind::usage, "no dataset cache at " + p.string() + " (run ingest first)");
  return p;
}

int cmd_ingest(const std::string& train, const std::string& test, const std::string& out) {
  Dataset ds = load_dataset(train, test);
  const ValidationReport rep = validate_dataset(ds);
  fs::create_directories(out);
  save_dataset_cache(ds, (fs::path(out) / kDatasetFile).string());
  write_text(fs::path(out) / kReportFile, rep.to_text());
  std::cout << rep.to_text();
  return 0;
}

int cmd_gen_data(const std::string& out, const std::string& ratings, Id users, Id items, std::uint64_t seed) {
  Dataset ds;
  if (!ratings.empty()) {
    ds = subsample_ratings(ratings, users, items, 0.2, seed);
  } else {
    SurrogateSpec s;
    s.users = users;
    s.items = items;
    s.seed = seed;
    ds = generate_surrogate(s);
  }
  fs::create_directories(out);
  write_interaction_file((fs::path(out) / "train.txt").string(), ds.train);
  write_interaction_file((fs::path(out) / "test.txt").string(), ds.test);
  std::cout << validate_dataset(ds).to_text();
  return 0;
}

void log_phase(const fs::path& path, const std::vector<MetricsRecord>& log, std::uint64_t hash, std::uint64_t seed) {
  std::ofstream f(path, std::ios::binary);
  for (const auto& r : log) f << metrics_json(r, hash, seed) << '\n';
}

int cmd_train(const std::string& config_path, const std::string& phase, unsigned cli_threads, bool cli_deterministic) {
  RunConfig rc = load_run_config(config_path);
  if (cli_deterministic) rc.train.deterministic = true;
  if (rc.data.empty()) fail(ErrorKind::usage, "config: key 'data' is required");
  if (rc.out.empty()) fail(ErrorKind::usage, "config: key 'out' is required");
  if (cli_threads == 0 && rc.threads > 0) set_threads(rc.threads);
  const TrainConfig& cfg = rc.train;
  const fs::path data_file = require_dataset(rc.data);
  const Dataset ds = load_dataset_cache(data_file.string());
  const std::uint64_t hash = config_hash(cfg, file_digest(data_file));
  const fs::path out(rc.out);
  fs::create_directories(out);
  write_text(out / "config.hash", hex(hash) + "\n");
  write_text(out / "config.txt", canonical_config(cfg));
  std::cout << "config_hash " << hex(hash) << " variant " << cfg.ablation.label() << "\n";

  const TrainingSplit split = make_training_split(ds, cfg.val_fraction, cfg.seed);
  auto progress = [&](const std::string& name) {
    TrainHooks h;
    h.on_record = [name](const MetricsRecord& r) {
      if (!r.evaluated) return;
      std::cerr << name << " epoch " << r.epoch << " loss " << r.terms.total << " val_recall@20 " << r.recall20
                << "\n";
    };
    return h;
  };

  Matrix teacher_base;
  if (phase == "teacher" || phase == "both") {
    TrainHooks h = progress("teacher");
    h.on_divergence = [&](const Matrix& best) {
      save_teacher({ds.num_users, ds.num_items, cfg.layers, hash, cfg.seed, best}, (out / kTeacherFile).string());
    };
    PhaseResult t = train_teacher(split, cfg, h);
    save_teacher({ds.num_users, ds.num_items, cfg.layers, hash, cfg.seed, t.base}, (out / kTeacherFile).string());
    log_phase(out / "teacher_metrics.jsonl", t.log, hash, cfg.seed);
    teacher_base = std::move(t.base);
    const auto scorer = FloatScorer::from_layers(split.train, teacher_layers(split, teacher_base, cfg),
                                                 layer_weights(cfg.layers));
    const auto rep = evaluate(scorer, ds.train, ds.test, kDefaultKs);
    write_text(out / "teacher_test.csv", rep.to_csv());
    std::cout << "teacher (test split)\n" << rep.to_table();
  }
  if (phase == "student" || phase == "both") {
    if (teacher_base.rows() == 0) {
      const fs::path tp = out / kTeacherFile;
      if (!fs::exists(tp)) fail(ErrorKind::usage, "student phase needs a teacher checkpoint at " + tp.string());
      TeacherCheckpoint tc = load_teacher(tp.string());
      if (tc.num_users != ds.num_users || tc.num_items != ds.num_items || tc.layers != cfg.layers ||
          tc.base.cols() != cfg.dim || tc.seed != cfg.seed) {
        fail(ErrorKind::data, "teacher checkpoint " + tp.string() + " does not match the config/dataset");
      }
      teacher_base = std::move(tc.base);
    }
    const LayerWeights w = layer_weights(cfg.layers);
    const auto pseudo = extract_pseudo_positives(teacher_layers(split, teacher_base, cfg), split.train, cfg.R, w);
    io::write_file((out / kPseudoFile).string(), encode_pseudo_positives(pseudo));
    TrainHooks h = progress("student");
    h.on_divergence = [&](const Matrix& best) {
      save_model(make_student_model(split, best, cfg, hash), (out / kStudentFile).string());
    };
    PhaseResult s = train_student(split, teacher_base, cfg, h);
    const BinarizedModel model = make_student_model(split, s.base, cfg, hash);
    save_model(model, (out / kStudentFile).string());
    log_phase(out / "student_metrics.jsonl", s.log, hash, cfg.seed);
    const BitwiseScorer scorer(model);
    const auto rep = evaluate(scorer, ds.train, ds.test, kDefaultKs);
    write_text(out / "student_test.csv", rep.to_csv());
    std::cout << "student (test split, bitwise)\n" << rep.to_table();
  }
  return 0;
}

BinarizedModel require_model(const std::string& path) {
  if (path.empty() || !fs::exists(path)) fail(ErrorKind::usage, "model file not found: " + path);
  return load_model(path);
}

int cmd_eval(const std::string& model_path, const std::string& data, const std::vector<std::size_t>& ks,
             const std::string& scorer_name) {
  if (ks.empty()) fail(ErrorKind::usage, "--k needs at least one value");
  const BinarizedModel model = require_model(model_path);
  const Dataset ds = load_dataset_cache(require_dataset(data).string());
  if (ds.num_users != model.num_users || ds.num_items != model.num_items) {
    fail(ErrorKind::data, "model and dataset disagree on M/N");
  }
  MetricReport rep;
  if (scorer_name == "bitwise") {
    rep = evaluate(BitwiseScorer(model), ds.train, ds.test, ks);
  } else {
    rep = evaluate(FloatScorer::from_model(model), ds.train, ds.test, ks);
  }
  std::cout << rep.to_csv() << "\n" << rep.to_table();
  return 0;
}

template <typename Scorer>
double time_queries(const Scorer& scorer, const std::vector<Id>& users, std::size_t repeat) {
  std::vector<float> scores(scorer.num_items());
  double best = 0.0;
  Id sink = 0;
  for (std::size_t r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (Id u : users) {
      scorer.score_all(u, scores);
      sink ^= top_k(scores, 20, {}).items.front();
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    best = r == 0 ? ms : std::min(best, ms);
  }
  asm volatile("" : : "r"(sink) : "memory");  // keep the timed loop alive
  return best;
}

int cmd_bench(const std::string& model_path, std::size_t queries, std::size_t repeat, std::uint64_t seed) {
  const BinarizedModel model = require_model(model_path);
  if (repeat == 0) fail(ErrorKind::usage, "--repeat must be >= 1");
  std::vector<Id> users(queries);
  StreamRng rng(seed, "bench", {});
  std::uniform_int_distribution<Id> pick(0, model.num_users - 1);
  for (Id& u : users) u = pick(rng);
  const std::size_t L = model.num_layers();
  std::cout << "scorer,queries,wall_ms,flop,bop\n";
  if (queries > 0) {
    const BitwiseScorer bit(model);
    const FloatScorer flt = FloatScorer::from_model(model);
    const double bit_ms = time_queries(bit, users, repeat);
    const double flt_ms = time_queries(flt, users, repeat);
    const OpCount bo = count_ops(queries, model.num_items, L, model.dim());
    const OpCount fo = count_ops_float(queries, model.num_items, L, model.dim());
    std::cout << "bitwise," << queries << ',' << bit_ms << ',' << bo.flop << ',' << bo.bop << '\n';
    std::cout << "float," << queries << ',' << flt_ms << ',' << fo.flop << ',' << fo.bop << '\n';
  }
  const std::uint64_t nodes = model.table.nodes();
  const std::uint64_t bytes = encode_model(model).size();
  const std::uint64_t full = full_precision_table_bytes(nodes, model.dim());
  std::cout << "\nmodel_bytes,full_precision_bytes,size_ratio\n"
            << bytes << ',' << full << ',' << static_cast<double>(full) / static_cast<double>(bytes) << '\n';
  return 0;
}

int cmd_export(const std::string& model_path, const std::string& format, const std::string& out) {
  if (format != "binary" && format != "csv") fail(ErrorKind::usage, "unknown export format '" + format + "'");
  const BinarizedModel model = require_model(model_path);
  if (format == "binary") {
    save_model(model, out);
    return 0;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) fail(ErrorKind::data, "cannot write " + out);
  f << "node,kind,id,layer,scaler,bits\n";
  f.precision(9);
  const auto& t = model.table;
  for (std::size_t x = 0; x < t.nodes(); ++x) {
    const bool user = x < model.num_users;
    const std::size_t id = user ? x : x - model.num_users;
    for (std::size_t l = 0; l < t.segments(); ++l) {
      const auto b = t.bits(x, l);
      std::string bits(t.dim(), '0');
      for (std::size_t j = 0; j < t.dim(); ++j)
        if ((b.words[j / 64] >> (j % 64)) & 1u) bits[j] = '1';
      f << x << ',' << (user ? "user" : "item") << ',' << id << ',' << l << ',' << t.scaler(x, l) << ',' << bits
        << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bingear: binarized graph collaborative filtering"};
  app.require_subcommand(1);
  unsigned threads = 0;
  bool deterministic = false;
  app.add_option("--threads", threads, "worker threads (fallback: BINGEAR_THREADS, then 1)");
  app.add_flag("--deterministic", deterministic, "serial reductions; forces one worker");

  std::string train, test, out, ratings, config, phase = "both", model, data, scorer = "bitwise", format;
  std::vector<std::size_t> ks = kDefaultKs;
  Id users = 2000, items = 1500;
  std::uint64_t seed = 7;
  std::size_t queries = 1000, repeat = 3;

  auto* ingest = app.add_subcommand("ingest", "parse train/test files into a dataset cache and report");
  ingest->add_option("--train", train, "train file: 'user item item ...' per line")->required();
  ingest->add_option("--test", test, "test file, same format")->required();
  ingest->add_option("--out", out, "output directory")->required();

  auto* gen = app.add_subcommand("gen-data", "write desk-scale train.txt/test.txt (synthetic or ratings subsample)");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--ratings", ratings, "MovieLens ratings.dat; omitted: synthetic surrogate");
  gen->add_option("--users", users, "user count")->capture_default_str();
  gen->add_option("--items", items, "item count")->capture_default_str();
  gen->add_option("--seed", seed, "seed")->capture_default_str();

  auto* trn = app.add_subcommand("train", "train teacher and/or student; writes checkpoints and metrics logs");
  trn->add_option("--config", config, "key=value config file")->required();
  trn->add_option("--phase", phase, "teacher|student|both")
      ->check(CLI::IsMember({"teacher", "student", "both"}))
      ->capture_default_str();

  auto* ev = app.add_subcommand("eval", "Recall/NDCG of a student model; CSV columns k,recall,ndcg,users");
  ev->add_option("--model", model, "BGER model file");
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--k", ks, "cutoffs, e.g. 20,40,60,80,100")->delimiter(',');
  ev->add_option("--scorer", scorer, "bitwise|float")->check(CLI::IsMember({"bitwise", "float"}));

  auto* bench = app.add_subcommand(
      "bench", "full-corpus scoring time; CSV columns scorer,queries,wall_ms,flop,bop then size ratio");
  bench->add_option("--model", model, "BGER model file");
  bench->add_option("--queries", queries, "random query users")->capture_default_str();
  bench->add_option("--repeat", repeat, "repetitions, best time reported")->capture_default_str();
  bench->add_option("--seed", seed, "seed for query users")->capture_default_str();

  auto* exp = app.add_subcommand("export", "re-encode a model (binary) or dump scalers and bits (csv)");
  exp->add_option("--model", model, "BGER model file");
  exp->add_option("--format", format, "binary|csv")->required();
  exp->add_option("--out", out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 64;
  }

  try {
    if (threads > 0) set_threads(threads);
    if (deterministic) set_threads(1);
    if (*ingest) return cmd_ingest(train, test, out);
    if (*gen) return cmd_gen_data(out, ratings, users, items, seed);
    if (*trn) return cmd_train(config, phase, threads, deterministic);
    if (*ev) return cmd_eval(model, data, ks, scorer);
    if (*bench) return cmd_bench(model, queries, repeat, seed);
    if (*exp) return cmd_export(model, format, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 70;
  }
  return 0;
}
