// Command-line workbench: generates the center-embedding agreement corpora,
// trains the six recurrent architectures, and emits the evaluation/analysis
// figures as CSV + SVG.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "nestlm/analysis.hpp"
#include "nestlm/evaluation.hpp"
#include "nestlm/svg.hpp"
#include "nestlm/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nestlm;

namespace {

constexpr const char* kToolVersion = "nestlm 1.0.0";

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string data(std::istreambuf_iterator<char>(is), {});
  return fnv1a(data);
}

std::string format_p(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string dataset_dir(const std::string& root, double p1, double p2) {
  return root + "/datasets/p1_" + format_p(p1) + "_p2_" + format_p(p2);
}

std::string na_path(const std::string& root, int d, int s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "/na/d%02d_s%02d.txt", d, s);
  return root + "/datasets" + buf;
}

uint64_t mix_seed(uint64_t base, const std::string& tag) { return base ^ fnv1a(tag); }

struct GenOptions {
  std::string out;
  uint64_t seed = 1;
  bool force = false;
  int workers = 0;
  std::string only;  // "p1=0.5,p2=0.5"
  long train_tokens = 1000000;
  long valid_tokens = 100000;
  long test_tokens = 200000;
  long presample = 100000;
  int na_sentences = 1000;
  std::vector<double> p_values{0.1, 0.3, 0.5};
};

void save_histogram_csv_svg(const corpus::StreamStats& st, const std::string& base,
                            const std::string& title) {
  std::ofstream os(base + ".csv");
  os << "# dataset statistics\nkind,value,count\n";
  for (auto& [v, c] : st.depth_hist) os << "depth," << v << ',' << c << '\n';
  for (auto& [v, c] : st.spacing_hist) os << "spacing," << v << ',' << c << '\n';
  for (auto& [v, c] : st.length_hist) os << "length," << v << ',' << c << '\n';

  svg::Svg img(640, 240);
  img.comment("dataset depth/spacing distributions");
  img.text(20, 16, title, 11, "start");
  auto draw = [&](const std::map<int, long>& hist, double x0, const std::string& label,
                  const std::string& color) {
    if (hist.empty()) return;
    long peak = 1;
    int vmax = 1;
    for (auto& [v, c] : hist) {
      peak = std::max(peak, c);
      vmax = std::max(vmax, v);
    }
    const double w = 260, h = 170, bottom = 210;
    double bar = w / static_cast<double>(vmax + 1);
    for (auto& [v, c] : hist) {
      double bh = h * static_cast<double>(c) / static_cast<double>(peak);
      img.rect(x0 + bar * v, bottom - bh, std::max(1.0, bar - 1), bh, color);
    }
    img.text(x0 + w / 2, 232, label, 10);
  };
  draw(st.depth_hist, 30, "depth", "#3366aa");
  draw(st.spacing_hist, 340, "max spacing", "#aa6633");
  img.save(base + ".svg");
}

int cmd_gen(const GenOptions& opt) {
  const std::string manifest_path = opt.out + "/datasets/manifest.json";
  if (fs::exists(manifest_path) && !opt.force) {
    std::cerr << "refusing to overwrite " << manifest_path << " (use --force)\n";
    return 2;
  }
  fs::create_directories(opt.out + "/datasets/na");

  std::vector<std::pair<double, double>> pairs;
  if (!opt.only.empty()) {
    double p1, p2;
    if (std::sscanf(opt.only.c_str(), "p1=%lf,p2=%lf", &p1, &p2) != 2)
      throw ConfigError("--only expects the form p1=0.5,p2=0.5");
    pairs.emplace_back(p1, p2);
  } else {
    for (double p1 : opt.p_values)
      for (double p2 : opt.p_values) pairs.emplace_back(p1, p2);
  }

  corpus::DatasetManifest manifest;
  manifest.na_dir = "na";
  std::mutex mu;

  auto build_pair = [&](double p1, double p2) {
    grammar::GrammarParams params;
    params.p1 = p1;
    params.p2 = p2;
    Rng trunc_rng(mix_seed(opt.seed, "trunc:" + format_p(p1) + ":" + format_p(p2)));
    auto limits = grammar::estimate_truncation(params, opt.presample, trunc_rng);
    const std::string dir = dataset_dir(opt.out, p1, p2);
    fs::create_directories(dir);
    struct Split {
      const char* name;
      long tokens;
    };
    for (const Split& sp : {Split{"train", opt.train_tokens}, Split{"valid", opt.valid_tokens},
                            Split{"test", opt.test_tokens}}) {
      uint64_t seed = mix_seed(opt.seed, std::string(sp.name) + ":" + format_p(p1) + ":" +
                                             format_p(p2));
      corpus::TokenStream stream = corpus::build_corpus(params, limits, sp.tokens, seed);
      stream.id.split = sp.name;
      const std::string path = dir + "/" + sp.name + ".txt";
      corpus::save_corpus(stream, path);
      save_histogram_csv_svg(stream.stats, dir + "/stats_" + sp.name,
                             "p1=" + format_p(p1) + " p2=" + format_p(p2) + " " + sp.name);
      corpus::DatasetRecord rec;
      rec.id = stream.id;
      rec.params = params;
      rec.limits = limits;
      rec.target_tokens = sp.tokens;
      rec.tokens = stream.stats.tokens;
      rec.sentences = stream.stats.sentences;
      rec.max_depth = stream.stats.max_depth;
      rec.max_spacing = stream.stats.max_spacing;
      rec.max_length = stream.stats.max_length;
      rec.acceptance_rate = stream.acceptance_rate;
      rec.path = fs::relative(path, opt.out + "/datasets").string();
      std::lock_guard<std::mutex> lock(mu);
      manifest.datasets.push_back(std::move(rec));
      std::cout << "built " << path << " (" << stream.stats.tokens << " tokens)\n";
    }
  };

  int workers = opt.workers > 0 ? opt.workers
                                : static_cast<int>(std::thread::hardware_concurrency());
  {
    std::vector<std::thread> pool;
    size_t next = 0;
    std::mutex qmu;
    for (int i = 0; i < std::min<int>(workers, static_cast<int>(pairs.size())); ++i)
      pool.emplace_back([&] {
        for (;;) {
          size_t idx;
          {
            std::lock_guard<std::mutex> lock(qmu);
            if (next >= pairs.size()) return;
            idx = next++;
          }
          build_pair(pairs[idx].first, pairs[idx].second);
        }
      });
    for (auto& t : pool) t.join();
  }

  if (opt.only.empty()) {
    long built = 0;
    for (const auto& spec : corpus::na_grid()) {
      corpus::NaTaskSpec s = spec;
      s.n_sentences = opt.na_sentences;
      uint64_t seed = mix_seed(opt.seed, "na:" + std::to_string(s.d) + ":" + std::to_string(s.s));
      corpus::NaTask task = corpus::build_na_task(s, seed);
      corpus::save_na_task(task, na_path(opt.out, s.d, s.s));
      ++built;
    }
    std::cout << "built " << built << " NA task datasets\n";
  }

  std::sort(manifest.datasets.begin(), manifest.datasets.end(),
            [](const corpus::DatasetRecord& a, const corpus::DatasetRecord& b) {
              return std::tie(a.id.p1, a.id.p2, a.id.split) <
                     std::tie(b.id.p1, b.id.p2, b.id.split);
            });
  manifest.save(manifest_path);
  std::cout << "wrote " << manifest_path << "\n";
  return 0;
}

corpus::TokenStream load_split(const std::string& root, const corpus::DatasetManifest& manifest,
                               double p1, double p2, const std::string& split) {
  const corpus::DatasetRecord* rec = manifest.find(p1, p2, split);
  if (!rec)
    throw ConfigError("dataset p1=" + format_p(p1) + " p2=" + format_p(p2) + " " + split +
                      " not in manifest (run gen first)");
  corpus::TokenStream s = corpus::load_corpus(root + "/datasets/" + rec->path, rec->id);
  s.acceptance_rate = rec->acceptance_rate;
  return s;
}

std::vector<corpus::NaTask> load_na_tasks(const std::string& root,
                                          const std::function<bool(int, int)>& want) {
  std::vector<corpus::NaTask> tasks;
  for (const auto& spec : corpus::na_grid())
    if (want(spec.d, spec.s)) tasks.push_back(corpus::load_na_task(na_path(root, spec.d, spec.s)));
  return tasks;
}

void write_run_manifest(const std::string& dir, const std::string& experiment,
                        const json& effective_config, const std::vector<std::string>& files) {
  json j;
  j["experiment"] = experiment;
  j["tool_version"] = kToolVersion;
  j["config"] = effective_config;
  j["config_digest"] = fnv1a(effective_config.dump());
  json arts = json::array();
  for (const std::string& f : files)
    arts.push_back(json{{"path", fs::relative(f, dir).string()}, {"digest", file_digest(f)}});
  j["artifacts"] = std::move(arts);
  std::ofstream(dir + "/manifest.json") << j.dump(2) << '\n';
}

struct ModelFlags {
  std::string arch = "lstm";
  int layers = 2, hidden = 32, embedding = 8;
  double dropout = 0.1;
  int chunk = 1, n_stacks = 1, stack_depth = 1024;
  bool noop = false;

  cells::ModelConfig to_config() const {
    cells::ModelConfig mc;
    mc.arch = cells::arch_from(arch);
    mc.layers = layers;
    mc.hidden = hidden;
    mc.embedding = embedding;
    mc.dropout = dropout;
    mc.chunk = chunk;
    mc.n_stacks = n_stacks;
    mc.stack_depth = stack_depth;
    mc.stack_noop = noop;
    return mc;
  }
};

json training_json(const training::TrainingConfig& tc) {
  return json{{"bptt_len", tc.bptt_len}, {"batch", tc.batch},   {"lr", tc.lr},
              {"epochs", tc.epochs},     {"stack_epochs", tc.stack_epochs},
              {"seed", tc.seed},         {"clip_norm", tc.clip_norm}};
}

int cmd_train(const std::string& data, const std::string& out, double p1, double p2,
              const ModelFlags& mf, training::TrainingConfig tc) {
  auto manifest = corpus::DatasetManifest::load(data + "/datasets/manifest.json");
  auto train_s = load_split(data, manifest, p1, p2, "train");
  auto valid_s = load_split(data, manifest, p1, p2, "valid");
  cells::ModelConfig mc = mf.to_config();
  const std::string label = "p1_" + format_p(p1) + "_p2_" + format_p(p2);
  auto result = training::train(mc, tc, train_s, valid_s, label);
  const std::string dir = out + "/runs/" + label + "_" + mc.name() + "_s" +
                          std::to_string(tc.seed);
  training::save_run(result, dir);
  json cfg;
  cfg["model"] = mc.name();
  cfg["dataset"] = label;
  cfg["training"] = training_json(tc);
  std::vector<std::string> files{dir + "/config.json", dir + "/metrics.csv"};
  if (result.ok()) files.push_back(dir + "/checkpoint.json");
  write_run_manifest(dir, "train", cfg, files);
  std::cout << (result.ok() ? "trained " : "FAILED ") << dir << " status=" << result.status
            << " best_valid_ppl=" << result.best_valid_ppl << "\n";
  return result.ok() ? 0 : 1;
}

int cmd_grid(const std::string& data, const std::string& out, double p1, double p2,
             const std::string& arch, const std::string& grid_kind,
             training::TrainingConfig tc, int workers, int stack_depth) {
  auto manifest = corpus::DatasetManifest::load(data + "/datasets/manifest.json");
  auto train_s = load_split(data, manifest, p1, p2, "train");
  auto valid_s = load_split(data, manifest, p1, p2, "valid");
  cells::Arch a = cells::arch_from(arch);
  auto grid = grid_kind == "full" ? training::full_grid(a) : training::reduced_grid(a);
  for (auto& mc : grid)
    if (mc.has_stack()) mc.stack_depth = stack_depth;
  const std::string label = "p1_" + format_p(p1) + "_p2_" + format_p(p2);
  auto gr = training::grid_search(grid, tc, train_s, valid_s, label, workers,
                                  [](const training::TrainResult& r) {
                                    std::cout << "  " << r.model_config.name() << " -> "
                                              << (r.ok() ? std::to_string(r.best_valid_ppl)
                                                         : r.status)
                                              << "\n";
                                  });
  const std::string dir = out + "/runs/grid_" + label + "_" + arch + "_s" +
                          std::to_string(tc.seed);
  fs::create_directories(dir);
  json summary;
  summary["grid"] = grid_kind;
  summary["dataset"] = label;
  summary["training"] = training_json(tc);
  json entries = json::array();
  std::vector<std::string> files;
  for (const auto& r : gr.results) {
    const std::string rd = dir + "/" + r.model_config.name();
    training::save_run(r, rd);
    entries.push_back(json{{"config", r.model_config.name()},
                           {"status", r.status},
                           {"valid_ppl", r.best_valid_ppl},
                           {"params", r.param_count}});
    files.push_back(rd + "/config.json");
  }
  summary["results"] = std::move(entries);
  summary["best"] = gr.best >= 0 ? gr.best_result().model_config.name() : "none";
  std::ofstream(dir + "/grid.json") << summary.dump(2) << '\n';
  files.push_back(dir + "/grid.json");
  write_run_manifest(dir, "grid", summary, files);
  if (gr.best < 0) {
    std::cout << "grid produced no successful config\n";
    return 1;
  }
  std::cout << "best: " << gr.best_result().model_config.name()
            << " valid_ppl=" << gr.best_result().best_valid_ppl << "\n";
  return 0;
}

std::pair<int, int> training_markers(const corpus::DatasetManifest& manifest,
                                     const std::string& dataset_label) {
  double p1 = 0, p2 = 0;
  std::sscanf(dataset_label.c_str(), "p1_%lf_p2_%lf", &p1, &p2);
  const corpus::DatasetRecord* rec = manifest.find(p1, p2, "train");
  if (!rec) return {0, 0};
  return {rec->max_depth, rec->max_spacing};
}

int cmd_eval(const std::string& data, const std::string& out, const std::string& model_path,
             const std::string& figure, int eval_batch) {
  auto ck = cells::Checkpoint::load(model_path);
  auto manifest = corpus::DatasetManifest::load(data + "/datasets/manifest.json");
  auto [md, ms] = training_markers(manifest, ck.prov.dataset);
  evaluation::RnnEvalModel model(ck);
  fs::create_directories(out + "/figures");
  const std::string tag = cells::arch_name(ck.config.arch) + "_" + ck.prov.dataset;
  std::vector<std::string> files;
  if (figure == "fig2" || figure == "fig4") {
    auto tasks = load_na_tasks(data, [](int, int) { return true; });
    auto m = evaluation::accuracy_matrix(model, tasks, md, ms, eval_batch);
    const std::vector<std::pair<std::string, const numcore::Mat64*>> metrics{
        {"mean_over_verbs", &m.mean_over_verbs},
        {"all_verbs_correct", &m.all_verbs_correct},
        {"per_lexeme", &m.per_lexeme}};
    for (const auto& [metric, values] : metrics) {
      const std::string base = out + "/figures/" + figure + "_" + tag + "_" + metric;
      evaluation::save_matrix_csv(*values, m.depths, m.spacings, md, ms, figure, metric,
                                  base + ".csv");
      evaluation::save_matrix_svg(*values, m.depths, m.spacings, md, ms, figure,
                                  tag + " (" + metric + ")", base + ".svg");
      files.push_back(base + ".csv");
      files.push_back(base + ".svg");
    }
  } else if (figure == "fig3") {
    auto tasks = load_na_tasks(data, [](int, int s) { return s == 2; });
    auto m = evaluation::per_verb_matrix(model, tasks, md, eval_batch);
    const std::string base = out + "/figures/fig3_" + tag;
    evaluation::save_per_verb_csv(m, base + ".csv");
    evaluation::save_per_verb_svg(m, tag, base + ".svg");
    files.push_back(base + ".csv");
    files.push_back(base + ".svg");
  } else {
    throw ConfigError("--figure must be fig2, fig3 or fig4");
  }
  json cfg{{"model", model_path}, {"figure", figure}};
  write_run_manifest(out + "/figures", "eval_" + figure + "_" + tag, cfg, files);
  for (const auto& f : files) std::cout << "wrote " << f << "\n";
  return 0;
}

int cmd_ablate(const std::string& data, const std::string& out, const std::string& model_path,
               double threshold, int max_depth, int spacing, bool hidden_only, bool all_layers,
               int workers, int eval_batch) {
  auto ck = cells::Checkpoint::load(model_path);
  auto tasks = load_na_tasks(data, [&](int d, int s) { return d <= max_depth && s == spacing; });
  analysis::ModelFactory factory = [&ck] {
    return std::make_unique<evaluation::RnnEvalModel>(ck);
  };
  auto report = analysis::ablation_scan(factory, tasks, threshold, !hidden_only, all_layers,
                                        workers, eval_batch);
  fs::create_directories(out + "/analysis");
  const std::string tag = cells::arch_name(ck.config.arch) + "_" + ck.prov.dataset;
  const std::string path = out + "/analysis/ablation_" + tag + ".csv";
  report.save_csv(path);
  json cfg{{"model", model_path}, {"threshold", threshold}};
  write_run_manifest(out + "/analysis", "ablate_" + tag, cfg, {path});
  std::cout << "wrote " << path << "\n";
  auto units = report.all_units();
  std::cout << "units below threshold:";
  for (int u : units) std::cout << ' ' << u;
  std::cout << "\n";
  return 0;
}

int cmd_record(const std::string& data, const std::string& out, const std::string& model_path,
               int unit, const std::string& kind, int d, int s, int eval_batch) {
  auto ck = cells::Checkpoint::load(model_path);
  evaluation::RnnEvalModel model(ck);
  auto task = corpus::load_na_task(na_path(data, d, s));
  auto trace = analysis::record_unit(model, task, unit, kind == "cell", eval_batch);
  fs::create_directories(out + "/analysis");
  const std::string tag = cells::arch_name(ck.config.arch) + "_u" + std::to_string(unit) + "_d" +
                          std::to_string(d) + "_s" + std::to_string(s) + "_" + kind;
  trace.save_csv(out + "/analysis/trace_" + tag + ".csv");
  trace.save_svg(tag, out + "/analysis/trace_" + tag + ".svg");
  json cfg{{"model", model_path}, {"unit", unit}, {"kind", kind}, {"d", d}, {"s", s}};
  write_run_manifest(out + "/analysis", "record_" + tag, cfg,
                     {out + "/analysis/trace_" + tag + ".csv",
                      out + "/analysis/trace_" + tag + ".svg"});
  std::cout << "wrote " << out << "/analysis/trace_" << tag << ".{csv,svg}\n";
  return 0;
}

int cmd_pca(const std::string& data, const std::string& out, const std::string& model_path,
            const std::string& kind, int d, int s, int eval_batch) {
  auto ck = cells::Checkpoint::load(model_path);
  evaluation::RnnEvalModel model(ck);
  auto task = corpus::load_na_task(na_path(data, d, s));
  auto pca = analysis::pca_states(model, task, kind == "cell", eval_batch);
  fs::create_directories(out + "/analysis");
  const std::string tag = cells::arch_name(ck.config.arch) + "_d" + std::to_string(d) + "_s" +
                          std::to_string(s) + "_" + kind;
  pca.save_csv(out + "/analysis/pca_" + tag + ".csv");
  pca.save_svg(tag, out + "/analysis/pca_" + tag + ".svg");
  if (pca.degenerate)
    std::cerr << "warning: degenerate covariance, rank " << pca.rank << "\n";
  json cfg{{"model", model_path}, {"kind", kind}, {"d", d}, {"s", s}};
  write_run_manifest(out + "/analysis", "pca_" + tag, cfg,
                     {out + "/analysis/pca_" + tag + ".csv",
                      out + "/analysis/pca_" + tag + ".svg"});
  std::cout << "wrote " << out << "/analysis/pca_" << tag << ".{csv,svg}\n";
  return 0;
}

int cmd_report(const std::string& out) {
  // collate manifests, verify digests, and write an index page
  std::vector<std::string> entries;
  long verified = 0, broken = 0;
  for (auto it = fs::recursive_directory_iterator(out); it != fs::recursive_directory_iterator();
       ++it) {
    if (!it->is_regular_file() || it->path().filename() != "manifest.json") continue;
    std::ifstream is(it->path());
    json j;
    try {
      j = json::parse(is);
    } catch (...) {
      continue;
    }
    if (!j.contains("artifacts")) continue;
    std::string section = "<h3>" + j.value("experiment", it->path().parent_path().string()) +
                          "</h3>\n<ul>\n";
    for (const auto& a : j["artifacts"]) {
      std::string rel = a.value("path", "");
      fs::path full = it->path().parent_path() / rel;
      bool ok = fs::exists(full) && file_digest(full.string()) == a.value("digest", 0ULL);
      ok ? ++verified : ++broken;
      std::string rel_to_out = fs::relative(full, out).string();
      section += "  <li><a href=\"" + rel_to_out + "\">" + rel_to_out + "</a>" +
                 (ok ? "" : " <b>[digest mismatch]</b>") + "</li>\n";
    }
    section += "</ul>\n";
    entries.push_back(std::move(section));
  }
  std::sort(entries.begin(), entries.end());
  std::ofstream os(out + "/index.html");
  os << "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>nestlm results"
        "</title></head>\n<body>\n<h1>nestlm results</h1>\n<p>"
     << kToolVersion << "; artifacts verified: " << verified << ", mismatched: " << broken
     << "</p>\n";
  for (const auto& e : entries) os << e;
  os << "</body></html>\n";
  std::cout << "wrote " << out << "/index.html (" << verified << " artifacts verified, "
            << broken << " mismatched)\n";
  return broken == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"center-embedding agreement workbench"};
  app.set_config("--config", "", "config file (INI/TOML, every flag overridable)");

  const char* env_out = std::getenv("NESTLM_OUT");
  std::string out_root = env_out ? env_out : "out";

  // gen
  GenOptions gen;
  gen.out = out_root;
  auto* cgen = app.add_subcommand("gen", "build corpora and NA task datasets");
  cgen->add_option("--out", gen.out, "output root");
  cgen->add_option("--seed", gen.seed, "base seed");
  cgen->add_flag("--force", gen.force, "overwrite existing datasets");
  cgen->add_option("--workers", gen.workers, "worker threads (default: hardware)");
  cgen->add_option("--only", gen.only, "build a single pair, e.g. p1=0.5,p2=0.5");
  cgen->add_option("--train-tokens", gen.train_tokens, "tokens per training set");
  cgen->add_option("--valid-tokens", gen.valid_tokens, "tokens per validation set");
  cgen->add_option("--test-tokens", gen.test_tokens, "tokens per test set");
  cgen->add_option("--presample", gen.presample, "truncation presample size");
  cgen->add_option("--na-sentences", gen.na_sentences, "sentences per NA task");

  // shared train/grid options
  std::string data = out_root, out = out_root;
  double p1 = 0.5, p2 = 0.5;
  ModelFlags mf;
  training::TrainingConfig tc;
  std::string precision = "f32";
  int workers = 0;

  auto add_training_flags = [&](CLI::App* c) {
    c->add_option("--data", data, "dataset root (from gen)");
    c->add_option("--out", out, "output root");
    c->add_option("--p1", p1, "grammar p1");
    c->add_option("--p2", p2, "grammar p2");
    c->add_option("--seed", tc.seed, "training seed");
    c->add_option("--bptt", tc.bptt_len, "BPTT window length");
    c->add_option("--batch", tc.batch, "batch size");
    c->add_option("--lr", tc.lr, "Adam learning rate");
    c->add_option("--epochs", tc.epochs, "epochs (non-stack architectures)");
    c->add_option("--stack-epochs", tc.stack_epochs, "epochs for stack architectures");
    c->add_option("--clip", tc.clip_norm, "gradient clip norm (0 = off)");
    c->add_option("--precision", precision, "f32 or f64");
  };

  auto* ctrain = app.add_subcommand("train", "train one model configuration");
  add_training_flags(ctrain);
  ctrain->add_option("--arch", mf.arch, "srn|gru|lstm|onlstm|stackrnn|stacklstm");
  ctrain->add_option("--layers", mf.layers, "recurrent layers");
  ctrain->add_option("--hidden", mf.hidden, "hidden units per layer");
  ctrain->add_option("--embedding", mf.embedding, "embedding size");
  ctrain->add_option("--dropout", mf.dropout, "dropout rate");
  ctrain->add_option("--chunk", mf.chunk, "ON-LSTM chunk size");
  ctrain->add_option("--stacks", mf.n_stacks, "number of stacks");
  ctrain->add_option("--stack-depth", mf.stack_depth, "stack buffer depth");
  ctrain->add_flag("--noop", mf.noop, "add a no-op stack action");

  std::string grid_kind = "full";
  int grid_stack_depth = 128;
  auto* cgrid = app.add_subcommand("grid", "hyperparameter grid search");
  add_training_flags(cgrid);
  cgrid->add_option("--arch", mf.arch, "architecture");
  cgrid->add_option("--grid", grid_kind, "full or reduced");
  cgrid->add_option("--workers", workers, "concurrent training jobs");
  cgrid->add_option("--grid-stack-depth", grid_stack_depth,
                    "stack depth for stack architectures in the grid");

  std::string model_path, figure = "fig2", kind = "hidden";
  int eval_batch = 1000, unit = 0, rec_d = 2, rec_s = 2, max_depth = 5, spacing = 2;
  double threshold = 0.55;
  bool hidden_only = false, all_layers = false;

  auto* ceval = app.add_subcommand("eval", "NA accuracy matrices");
  ceval->add_option("--data", data, "dataset root");
  ceval->add_option("--out", out, "output root");
  ceval->add_option("--model", model_path, "checkpoint path")->required();
  ceval->add_option("--figure", figure, "fig2, fig3 or fig4");
  ceval->add_option("--eval-batch", eval_batch, "sentences per forward batch");

  auto* cabl = app.add_subcommand("ablate", "per-unit ablation scan");
  cabl->add_option("--data", data, "dataset root");
  cabl->add_option("--out", out, "output root");
  cabl->add_option("--model", model_path, "checkpoint path")->required();
  cabl->add_option("--threshold", threshold, "accuracy threshold");
  cabl->add_option("--max-depth", max_depth, "scan depths 1..max");
  cabl->add_option("--spacing", spacing, "scan spacing");
  cabl->add_flag("--hidden-only", hidden_only, "do not zero cell components");
  cabl->add_flag("--all-layers", all_layers, "ablate every layer, not just the top");
  cabl->add_option("--workers", workers, "concurrent units");
  cabl->add_option("--eval-batch", eval_batch, "sentences per forward batch");

  auto* crec = app.add_subcommand("record", "record a unit's activation trace");
  crec->add_option("--data", data, "dataset root");
  crec->add_option("--out", out, "output root");
  crec->add_option("--model", model_path, "checkpoint path")->required();
  crec->add_option("--unit", unit, "unit id")->required();
  crec->add_option("--kind", kind, "hidden or cell");
  crec->add_option("--d", rec_d, "task depth");
  crec->add_option("--s", rec_s, "task spacing");
  crec->add_option("--eval-batch", eval_batch, "sentences per forward batch");

  auto* cpca = app.add_subcommand("pca", "principal components of state trajectories");
  cpca->add_option("--data", data, "dataset root");
  cpca->add_option("--out", out, "output root");
  cpca->add_option("--model", model_path, "checkpoint path")->required();
  cpca->add_option("--kind", kind, "hidden or cell");
  cpca->add_option("--d", rec_d, "task depth");
  cpca->add_option("--s", rec_s, "task spacing");
  cpca->add_option("--eval-batch", eval_batch, "sentences per forward batch");

  auto* crep = app.add_subcommand("report", "collate artifacts into an index page");
  crep->add_option("--out", out, "output root");

  app.require_subcommand(1);
  CLI11_PARSE(app, argc, argv);

  tc.precision = precision == "f64" ? training::TrainingConfig::Precision::F64
                                    : training::TrainingConfig::Precision::F32;
  try {
    if (app.got_subcommand(cgen)) return cmd_gen(gen);
    if (app.got_subcommand(ctrain)) return cmd_train(data, out, p1, p2, mf, tc);
    if (app.got_subcommand(cgrid))
      return cmd_grid(data, out, p1, p2, mf.arch, grid_kind, tc, workers, grid_stack_depth);
    if (app.got_subcommand(ceval)) return cmd_eval(data, out, model_path, figure, eval_batch);
    if (app.got_subcommand(cabl))
      return cmd_ablate(data, out, model_path, threshold, max_depth, spacing, hidden_only,
                        all_layers, workers, eval_batch);
    if (app.got_subcommand(crec))
      return cmd_record(data, out, model_path, unit, kind, rec_d, rec_s, eval_batch);
    if (app.got_subcommand(cpca))
      return cmd_pca(data, out, model_path, kind, rec_d, rec_s, eval_batch);
    if (app.got_subcommand(crep)) return cmd_report(out);
  } catch (const std::exception& e) {
    json err{{"error", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
